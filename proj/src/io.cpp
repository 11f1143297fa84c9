#include "otlab/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "otlab/errors.hpp"

namespace otlab {

namespace {

template <typename F>
auto json_guard(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

Json matrix_to_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

PointMatrix json_to_matrix(const Json& j, const char* what) {
  if (!j.is_array() || j.empty())
    throw ConfigError(std::string(what) + " must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto& first = j.at(0);
  if (!first.is_array() || first.empty())
    throw ConfigError(std::string(what) + " rows must be nonempty arrays");
  const auto cols = static_cast<Eigen::Index>(first.size());
  PointMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError(std::string(what) + " has ragged rows");
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

Eigen::VectorXd json_to_vector(const Json& j, const char* what) {
  if (!j.is_array())
    throw ConfigError(std::string(what) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' ||
                         end[-1] == '\r'))
    --end;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("cannot parse number: '" + s + "'");
  return v;
}

Json measure_to_json(const DiscreteMeasure& mu) {
  Json j;
  j["d"] = mu.dim();
  j["points"] = matrix_to_json(mu.points());
  j["weights"] = vector_to_json(mu.weights());
  return j;
}

DiscreteMeasure measure_from_json(const Json& j) {
  return json_guard("measure json", [&] {
    PointMatrix pts = json_to_matrix(j.at("points"), "measure points");
    Eigen::VectorXd w = json_to_vector(j.at("weights"), "measure weights");
    int d = j.at("d").get<int>();
    if (d != pts.cols())
      throw ConfigError("measure json: d does not match point rows");
    return DiscreteMeasure(std::move(pts), std::move(w));
  });
}

std::string measure_to_csv(const DiscreteMeasure& mu) {
  std::string out;
  for (std::int64_t i = 0; i < mu.size(); ++i) {
    for (int k = 0; k < mu.dim(); ++k) {
      out += format_double(mu.points()(i, k));
      out += ',';
    }
    out += format_double(mu.weights()[i]);
    out += '\n';
  }
  return out;
}

DiscreteMeasure measure_from_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t comma = line.find(',', start);
      std::size_t stop = comma == std::string::npos ? line.size() : comma;
      row.push_back(parse_double(line.substr(start, stop - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("csv measure is empty");
  const std::size_t width = rows[0].size();
  if (width < 2)
    throw ConfigError("csv measure needs at least one coordinate and weight");
  PointMatrix pts(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(width - 1));
  Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width)
      throw ConfigError("csv measure has ragged rows");
    for (std::size_t k = 0; k + 1 < width; ++k)
      pts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          rows[i][k];
    w[static_cast<Eigen::Index>(i)] = rows[i][width - 1];
  }
  return DiscreteMeasure(std::move(pts), std::move(w));
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DiscreteMeasure read_measure(const std::string& path) {
  if (ends_with(path, ".json")) return measure_from_json(read_json_file(path));
  if (ends_with(path, ".csv")) return measure_from_csv(read_text_file(path));
  throw ConfigError("measure file must end in .json or .csv: " + path);
}

void write_measure(const DiscreteMeasure& mu, const std::string& path) {
  if (ends_with(path, ".json")) {
    write_json_file(path, measure_to_json(mu));
  } else if (ends_with(path, ".csv")) {
    write_text_file(path, measure_to_csv(mu));
  } else {
    throw ConfigError("measure file must end in .json or .csv: " + path);
  }
}

Json coupling_to_json(const Coupling& c) {
  Json j;
  j["cost"] = c.cost();
  Json entries = Json::array();
  for (const auto& e : c.entries())
    entries.push_back(Json::array({e.i, e.j, e.mass}));
  j["entries"] = std::move(entries);
  Json f = Json::array(), g = Json::array();
  for (double v : c.dual_f()) f.push_back(v);
  for (double v : c.dual_g()) g.push_back(v);
  j["dual_f"] = std::move(f);
  j["dual_g"] = std::move(g);
  return j;
}

Coupling coupling_from_json(const Json& j, DiscreteMeasure source,
                            DiscreteMeasure target) {
  return json_guard("coupling json", [&] {
    std::vector<CouplingEntry> entries;
    for (const auto& e : j.at("entries")) {
      if (!e.is_array() || e.size() != 3)
        throw ConfigError("coupling entry must be [i, j, mass]");
      entries.push_back({e.at(0).get<std::int64_t>(),
                         e.at(1).get<std::int64_t>(),
                         e.at(2).get<double>()});
    }
    std::vector<double> f, g;
    if (j.contains("dual_f"))
      f = j.at("dual_f").get<std::vector<double>>();
    if (j.contains("dual_g"))
      g = j.at("dual_g").get<std::vector<double>>();
    Coupling c(std::move(source), std::move(target), std::move(entries),
               std::move(f), std::move(g));
    if (j.contains("cost")) {
      double stored = j.at("cost").get<double>();
      if (std::abs(stored - c.cost()) > 1e-7 * (1.0 + std::abs(c.cost())))
        throw ConfigError("coupling json: stored cost disagrees with entries");
    }
    return c;
  });
}

Json model_to_json(const BrenierModel& m) {
  Json j;
  if (m.kind() == BrenierModel::Kind::affine) {
    j["kind"] = "affine";
    j["A"] = matrix_to_json(m.A());
    j["b"] = vector_to_json(m.b());
  } else {
    j["kind"] = "separable";
    Json spec = Json::array();
    for (const auto& p : m.profiles())
      spec.push_back(Json{{"a", p.a}, {"c", p.c}});
    j["f_spec"] = std::move(spec);
  }
  j["alpha"] = m.alpha();
  j["beta"] = m.beta();
  return j;
}

BrenierModel model_from_json(const Json& j) {
  return json_guard("model json", [&] {
    std::string kind = j.at("kind").get<std::string>();
    BrenierModel m = [&] {
      if (kind == "affine") {
        PointMatrix a = json_to_matrix(j.at("A"), "model A");
        return BrenierModel::affine(a, json_to_vector(j.at("b"), "model b"));
      }
      if (kind == "separable") {
        std::vector<SeparableProfile> profiles;
        for (const auto& p : j.at("f_spec"))
          profiles.push_back(
              {p.at("a").get<double>(), p.at("c").get<double>()});
        return BrenierModel::separable(std::move(profiles));
      }
      throw ConfigError("model json: unknown kind '" + kind + "'");
    }();
    if (j.contains("alpha")) {
      double a = j.at("alpha").get<double>();
      if (std::abs(a - m.alpha()) > 1e-9 * (1.0 + std::abs(m.alpha())))
        throw ConfigError("model json: stored alpha disagrees");
    }
    if (j.contains("beta")) {
      double b = j.at("beta").get<double>();
      if (std::abs(b - m.beta()) > 1e-9 * (1.0 + std::abs(m.beta())))
        throw ConfigError("model json: stored beta disagrees");
    }
    return m;
  });
}

Json estimate_to_json(const TransportMapEstimate& est) {
  Json j;
  switch (est.kind()) {
    case TransportMapEstimate::Kind::one_nn:
      j["kind"] = "one-nn";
      j["points"] = matrix_to_json(est.sample_points());
      j["barycenters"] = matrix_to_json(est.barycenters());
      break;
    case TransportMapEstimate::Kind::histogram:
      j["kind"] = "histogram";
      j["lo"] = vector_to_json(est.box_lo());
      j["hi"] = vector_to_json(est.box_hi());
      j["cells_per_axis"] = est.cells_per_axis();
      j["barycenters"] = matrix_to_json(est.barycenters());
      break;
    case TransportMapEstimate::Kind::affine:
      j["kind"] = "affine";
      j["A"] = matrix_to_json(est.A());
      j["b"] = vector_to_json(est.b());
      break;
    case TransportMapEstimate::Kind::exact_model:
      j["kind"] = "exact-model";
      j["model"] = model_to_json(est.model());
      break;
  }
  return j;
}

TransportMapEstimate estimate_from_json(const Json& j) {
  return json_guard("estimator json", [&] {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "one-nn")
      return one_nn_from_table(
          json_to_matrix(j.at("points"), "estimator points"),
          json_to_matrix(j.at("barycenters"), "estimator barycenters"));
    if (kind == "histogram")
      return histogram_from_table(
          json_to_vector(j.at("lo"), "estimator lo"),
          json_to_vector(j.at("hi"), "estimator hi"),
          j.at("cells_per_axis").get<int>(),
          json_to_matrix(j.at("barycenters"), "estimator barycenters"));
    if (kind == "affine")
      return affine_estimate(json_to_matrix(j.at("A"), "estimator A"),
                             json_to_vector(j.at("b"), "estimator b"));
    if (kind == "exact-model")
      return exact_model_estimate(model_from_json(j.at("model")));
    throw ConfigError("estimator json: unknown kind '" + kind + "'");
  });
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid json in " + path);
  return j;
}

void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace otlab
