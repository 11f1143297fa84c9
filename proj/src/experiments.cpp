#include "otlab/experiments.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "otlab/brenier.hpp"
#include "otlab/errors.hpp"
#include "otlab/estimators.hpp"
#include "otlab/rng.hpp"

namespace otlab {
namespace {

const char* const kKinds[] = {"rate-risk",       "rate-e1",      "rate-e2",
                              "rate-e3",         "stability-suite",
                              "lemma1-suite",    "growth-suite"};

bool is_rate_kind(const std::string& k) {
  return k.rfind("rate-", 0) == 0;
}

std::int64_t as_int(const Json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ConfigError("config field '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

double as_num(const Json& v, const std::string& key) {
  if (!v.is_number()) {
    throw ConfigError("config field '" + key + "' must be a number");
  }
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    throw ConfigError("config field '" + key + "' must be finite");
  }
  return x;
}

Eigen::VectorXd parse_vector(const Json& v, int d, const std::string& key) {
  if (v.is_number()) {
    return Eigen::VectorXd::Constant(d, v.get<double>());
  }
  if (v.is_array()) {
    if (static_cast<int>(v.size()) != d) {
      throw ConfigError("config field '" + key + "' must have " +
                        std::to_string(d) + " entries");
    }
    Eigen::VectorXd out(d);
    for (int i = 0; i < d; ++i) out(i) = as_num(v[i], key);
    return out;
  }
  throw ConfigError("config field '" + key + "' must be a number or array");
}

Eigen::MatrixXd parse_covariance(const Json& v, int d, const std::string& key) {
  if (v.is_number()) {
    return v.get<double>() * Eigen::MatrixXd::Identity(d, d);
  }
  if (v.is_array() && !v.empty() && v[0].is_array()) {
    if (static_cast<int>(v.size()) != d) {
      throw ConfigError("config field '" + key + "' must be " +
                        std::to_string(d) + "x" + std::to_string(d));
    }
    Eigen::MatrixXd out(d, d);
    for (int i = 0; i < d; ++i) {
      if (static_cast<int>(v[i].size()) != d) {
        throw ConfigError("config field '" + key + "' has a ragged row");
      }
      for (int j = 0; j < d; ++j) out(i, j) = as_num(v[i][j], key);
    }
    return out;
  }
  if (v.is_array()) {
    return parse_vector(v, d, key).asDiagonal();
  }
  throw ConfigError("config field '" + key +
                    "' must be a number, diagonal array, or matrix");
}

// Default rate model: standard gaussian source, anisotropic gaussian target
// with diagonal covariance spread over [0.7, 1.6] and a shifted mean.
GaussianPair build_risk_pair(const ExperimentConfig& cfg) {
  const int d = cfg.d;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd c1 = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd m2 = Eigen::VectorXd::Constant(d, 0.5);
  Eigen::VectorXd diag(d);
  for (int k = 0; k < d; ++k) {
    diag(k) = d > 1 ? 0.7 + 0.9 * k / (d - 1) : 1.15;
  }
  Eigen::MatrixXd c2 = diag.asDiagonal();
  if (!cfg.model.is_null()) {
    const Json& m = cfg.model;
    const std::string kind = m.value("kind", "gaussian-pair");
    if (kind != "gaussian-pair") {
      throw ConfigError("risk experiments need model.kind = gaussian-pair");
    }
    for (const auto& it : m.items()) {
      const std::string& k = it.key();
      if (k == "kind") continue;
      if (k == "mean1") m1 = parse_vector(it.value(), d, "model.mean1");
      else if (k == "mean2") m2 = parse_vector(it.value(), d, "model.mean2");
      else if (k == "cov1") c1 = parse_covariance(it.value(), d, "model.cov1");
      else if (k == "cov2") c2 = parse_covariance(it.value(), d, "model.cov2");
      else throw ConfigError("unknown model field '" + k + "'");
    }
  }
  return gaussian_pair_model(m1, c1, m2, c2, 0, 0);
}

Sampler build_moment_sampler(const ExperimentConfig& cfg) {
  const int d = cfg.d;
  if (cfg.sampler.is_null()) {
    return Sampler::gaussian(Eigen::VectorXd::Zero(d),
                             Eigen::MatrixXd::Identity(d, d), 0);
  }
  const Json& s = cfg.sampler;
  if (!s.is_object() || !s.contains("kind")) {
    throw ConfigError("sampler spec must be an object with a 'kind'");
  }
  const std::string kind = s["kind"].get<std::string>();
  if (kind == "gaussian") {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(d, d);
    for (const auto& it : s.items()) {
      const std::string& k = it.key();
      if (k == "kind") continue;
      if (k == "mean") mean = parse_vector(it.value(), d, "sampler.mean");
      else if (k == "cov") cov = parse_covariance(it.value(), d, "sampler.cov");
      else throw ConfigError("unknown sampler field '" + k + "'");
    }
    return Sampler::gaussian(mean, cov, 0);
  }
  if (kind == "uniform-box") {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, 0.0);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(d, 1.0);
    for (const auto& it : s.items()) {
      const std::string& k = it.key();
      if (k == "kind") continue;
      if (k == "lo") lo = parse_vector(it.value(), d, "sampler.lo");
      else if (k == "hi") hi = parse_vector(it.value(), d, "sampler.hi");
      else throw ConfigError("unknown sampler field '" + k + "'");
    }
    return Sampler::uniform_box(lo, hi, 0);
  }
  if (kind == "finite") {
    if (!s.contains("points")) {
      throw ConfigError("finite sampler needs a 'points' array");
    }
    for (const auto& it : s.items()) {
      const std::string& k = it.key();
      if (k != "kind" && k != "points" && k != "weights") {
        throw ConfigError("unknown sampler field '" + k + "'");
      }
    }
    const Json& pts = s["points"];
    if (!pts.is_array() || pts.empty() || !pts[0].is_array()) {
      throw ConfigError("sampler.points must be an array of points");
    }
    const auto n = static_cast<std::int64_t>(pts.size());
    PointMatrix points(n, d);
    for (std::int64_t i = 0; i < n; ++i) {
      if (static_cast<int>(pts[i].size()) != d) {
        throw ConfigError("sampler.points rows must have d entries");
      }
      for (int j = 0; j < d; ++j) {
        points(i, j) = as_num(pts[i][j], "sampler.points");
      }
    }
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / double(n));
    if (s.contains("weights")) {
      w = parse_vector(s["weights"], static_cast<int>(n), "sampler.weights");
    }
    return Sampler::finite(DiscreteMeasure(points, w), 0);
  }
  throw ConfigError("unknown sampler kind '" + kind + "'");
}

// Runs fn(0..count-1) on a pool; results land in caller-owned slots so the
// output is independent of scheduling. The first task exception (in task
// order) is rethrown after the pool drains.
void parallel_for(std::int64_t count, int threads,
                  const std::function<void(std::int64_t)>& fn) {
  if (count <= 0) return;
  int workers = threads > 0
                    ? threads
                    : static_cast<int>(
                          std::max(1u, std::thread::hardware_concurrency()));
  workers = static_cast<int>(
      std::min<std::int64_t>(static_cast<std::int64_t>(workers), count));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> bail{false};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto body = [&]() {
    while (!bail.load(std::memory_order_relaxed)) {
      const std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) break;
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
        bail.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct TrialOutcome {
  bool ok = false;
  double value = 0.0;
  double mc_stderr = 0.0;
  std::uint64_t seed = 0;
  std::string error;
};

std::int64_t eval_count(const ExperimentConfig& cfg, std::int64_t n) {
  if (cfg.n_eval > 0) return cfg.n_eval;
  return std::max<std::int64_t>(2000, 10 * n);
}

TrialOutcome run_risk_trial(const ExperimentConfig& cfg,
                            const GaussianPair& pair, std::int64_t n,
                            std::uint64_t trial_seed) {
  TrialOutcome out;
  out.seed = trial_seed;
  try {
    const Sampler sx = pair.source.with_seed(derive_seed(trial_seed, 1));
    const Sampler sy = Sampler::pushforward(
        pair.source.with_seed(derive_seed(trial_seed, 2)),
        pair.model.map_fn(), cfg.d);
    const DiscreteMeasure X = sample(sx, n);
    const DiscreteMeasure Y = sample(sy, n);
    const Coupling plan = solve_kantorovich(X, Y, cfg.solver);
    const TransportMapEstimate est = one_nn_estimator(plan);
    const McEstimate mc = risk_mc(est, pair.model, sx, eval_count(cfg, n));
    out.value = mc.mean;
    out.mc_stderr = mc.stderr_;
    out.ok = true;
  } catch (const NumericError& e) {
    out.error = e.what();
  }
  return out;
}

TrialOutcome run_moment_trial(const ExperimentConfig& cfg,
                              const Sampler& source, std::int64_t n,
                              std::uint64_t trial_seed) {
  TrialOutcome out;
  out.seed = trial_seed;
  try {
    const Sampler sx = source.with_seed(derive_seed(trial_seed, 1));
    const DiscreteMeasure X = sample(sx, n);
    if (cfg.kind == "rate-e1") {
      if (source.finite()) {
        out.value = solve_kantorovich(X, source.atoms(), cfg.solver).cost();
      } else {
        const DiscreteMeasure X2 =
            sample(source.with_seed(derive_seed(trial_seed, 3)), n);
        out.value = solve_kantorovich(X, X2, cfg.solver).cost();
      }
    } else if (cfg.kind == "rate-e2") {
      out.value = e2_nn_distance(X, sx, eval_count(cfg, n));
    } else {
      out.value = e3_voronoi_mass(X, sx, eval_count(cfg, n));
    }
    out.ok = true;
  } catch (const NumericError& e) {
    out.error = e.what();
  }
  return out;
}

// ------------------------- randomized suite instances -------------------------

std::uint64_t check_stream(const std::string& check) {
  if (check == "theorem3") return 1;
  if (check == "corollary1") return 2;
  if (check == "corollary2") return 3;
  if (check == "corollary3") return 4;
  if (check == "corollary4") return 5;
  if (check == "quadratic_growth") return 6;
  return 7;  // lemma1
}

BrenierModel random_affine_model(Rng& rng, int d, double lo, double hi) {
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd eig(d);
  for (int i = 0; i < d; ++i) {
    eig(i) = std::exp(rng.uniform(std::log(lo), std::log(hi)));
  }
  Eigen::MatrixXd a = q * eig.asDiagonal() * q.transpose();
  a = 0.5 * (a + a.transpose()).eval();
  Eigen::VectorXd b(d);
  for (int i = 0; i < d; ++i) b(i) = rng.normal();
  return BrenierModel::affine(a, b);
}

BrenierModel random_separable_model(Rng& rng, int d, double lo, double hi) {
  std::vector<SeparableProfile> profiles(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double a = std::exp(rng.uniform(std::log(lo), std::log(0.5 * hi)));
    const double c = rng.uniform(0.0, 0.5 * hi);
    profiles[static_cast<std::size_t>(i)] = SeparableProfile{a, c};
  }
  return BrenierModel::separable(profiles);
}

DiscreteMeasure random_cloud(Rng& rng, std::int64_t n, int d,
                             bool random_weights, double spread) {
  PointMatrix points(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) points(i, j) = spread * rng.normal();
  }
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / double(n));
  if (random_weights) {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      w(i) = 0.05 + rng.uniform();
      total += w(i);
    }
    w /= total;
  }
  return DiscreteMeasure(points, w);
}

DiscreteMeasure jitter(Rng& rng, const DiscreteMeasure& mu, double sigma) {
  PointMatrix points = mu.points();
  for (std::int64_t i = 0; i < points.rows(); ++i) {
    for (std::int64_t j = 0; j < points.cols(); ++j) {
      points(i, j) += sigma * rng.normal();
    }
  }
  return DiscreteMeasure(points, mu.weights());
}

StabilityReport run_suite_trial(const ExperimentConfig& cfg,
                                const std::string& check, std::int64_t t) {
  const std::uint64_t ts =
      derive_seed(derive_seed(cfg.seed, check_stream(check)),
                  static_cast<std::uint64_t>(t));
  Rng rng(ts);
  StabilityReport r;

  if (check == "lemma1") {
    const int d = 1 + static_cast<int>(t % cfg.d);
    const auto n = static_cast<std::int64_t>(1 + rng.below(15));
    const auto m = static_cast<std::int64_t>(1 + rng.below(15));
    const BrenierModel model = (t % 2 == 0)
                                   ? random_affine_model(rng, d, 0.3, 3.0)
                                   : random_separable_model(rng, d, 0.3, 3.0);
    const DiscreteMeasure Phat = random_cloud(rng, n, d, t % 3 == 0, 1.5);
    const DiscreteMeasure Qhat = random_cloud(rng, m, d, t % 3 == 1, 1.5);
    r = check_lemma1(model, Phat, Qhat);
  } else if (check == "quadratic_growth") {
    const int d = 1 + static_cast<int>(t % cfg.d);
    const BrenierModel model = (t % 2 == 0)
                                   ? random_affine_model(rng, d, 0.2, 5.0)
                                   : random_separable_model(rng, d, 0.2, 5.0);
    const BrenierModel psi = ((t / 2) % 2 == 0)
                                 ? random_affine_model(rng, d, 0.2, 5.0)
                                 : random_separable_model(rng, d, 0.2, 5.0);
    const DiscreteMeasure P = random_cloud(rng, cfg.atoms, d, t % 2 == 1, 1.0);
    r = check_quadratic_growth(model, P, psi);
  } else if (check == "corollary3") {
    const int d = 1 + static_cast<int>(t % cfg.d);
    const BrenierModel model = random_affine_model(rng, d, 0.3, 3.0);
    const DiscreteMeasure cloud =
        random_cloud(rng, cfg.support, d, t % 2 == 1, 1.0);
    const Sampler sampler = Sampler::finite(cloud, derive_seed(ts, 3));
    r = check_corollary3(model, sampler, cfg.sample_n, cfg.sample_m);
  } else {
    // theorem3 / corollary1 / corollary2 / corollary4 share the perturbed
    // finite-truth construction.
    const int dmax = check == "corollary4" ? std::min(cfg.d, 2) : cfg.d;
    const int d = 1 + static_cast<int>(t % dmax);
    const BrenierModel model = random_affine_model(rng, d, 0.3, 3.0);
    const DiscreteMeasure P = random_cloud(rng, cfg.atoms, d, t % 2 == 1, 1.0);
    const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
    const double sig_p = rng.uniform(0.02, 0.3);
    const double sig_q = rng.uniform(0.02, 0.3);
    const DiscreteMeasure Phat = t % 5 == 0 ? P : jitter(rng, P, sig_p);
    const DiscreteMeasure Qhat = t % 7 == 0 ? Q : jitter(rng, Q, sig_q);
    if (check == "theorem3") {
      r = check_theorem3(model, P, Phat, Qhat);
    } else if (check == "corollary1") {
      r = check_corollary1(model, P, Qhat);
    } else if (check == "corollary2") {
      r = check_corollary2(model, P, Phat);
    } else {
      r = check_corollary4(model, P, Phat, Qhat);
    }
  }
  r.trial = t;
  r.seed = ts;
  return r;
}

// ------------------------------- reporting -------------------------------

std::string suite_csv(const std::vector<StabilityReport>& reports,
                      const std::vector<std::string>& component_names) {
  std::string out = "check,trial,seed,d,n,m,alpha,beta,lhs,rhs,slack,violated";
  for (const std::string& name : component_names) out += "," + name;
  out += "\n";
  for (const StabilityReport& r : reports) {
    out += r.check;
    out += "," + std::to_string(r.trial);
    out += "," + std::to_string(r.seed);
    out += "," + std::to_string(r.d);
    out += "," + std::to_string(r.n);
    out += "," + std::to_string(r.m);
    out += "," + format_double(r.alpha);
    out += "," + format_double(r.beta);
    out += "," + format_double(r.lhs);
    out += "," + format_double(r.rhs);
    out += "," + format_double(r.slack);
    out += r.violated ? ",1" : ",0";
    for (const auto& kv : r.components) out += "," + format_double(kv.second);
    out += "\n";
  }
  return out;
}

Json report_to_json(const StabilityReport& r) {
  Json j = Json::object();
  j["check"] = r.check;
  j["trial"] = r.trial;
  j["seed"] = r.seed;
  j["d"] = r.d;
  j["n"] = r.n;
  j["m"] = r.m;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  j["slack"] = r.slack;
  j["violated"] = r.violated;
  Json comps = Json::object();
  for (const auto& kv : r.components) comps[kv.first] = kv.second;
  j["components"] = comps;
  return j;
}

struct CheckStats {
  std::int64_t trials = 0;
  std::int64_t violations = 0;
  bool has_min_slack = false;
  double min_slack = 0.0;
  double worst_ratio = 0.0;       // corollary4 only
  double max_discrepancy = 0.0;   // lemma1 only
};

CheckStats summarize(const std::vector<StabilityReport>& reports) {
  CheckStats s;
  s.trials = static_cast<std::int64_t>(reports.size());
  for (const StabilityReport& r : reports) {
    if (r.violated) ++s.violations;
    if (!s.has_min_slack || r.slack < s.min_slack) {
      s.min_slack = r.slack;
      s.has_min_slack = true;
    }
    if (r.check == "corollary4") {
      s.worst_ratio = std::max(s.worst_ratio, r.component("ratio"));
    }
    if (r.check == "lemma1") {
      s.max_discrepancy =
          std::max(s.max_discrepancy, r.component("discrepancy"));
    }
  }
  return s;
}

std::string rate_csv(const ExperimentConfig& cfg,
                     const std::vector<std::int64_t>& trial_n,
                     const std::vector<TrialOutcome>& outcomes) {
  std::string out = "kind,d,n,trial,seed,status,value,mc_stderr\n";
  const auto per = cfg.trials;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    const TrialOutcome& o = outcomes[k];
    out += cfg.kind;
    out += "," + std::to_string(cfg.d);
    out += "," + std::to_string(trial_n[k]);
    out += "," + std::to_string(static_cast<std::int64_t>(k) % per);
    out += "," + std::to_string(o.seed);
    if (o.ok) {
      out += ",ok," + format_double(o.value) + "," + format_double(o.mc_stderr);
    } else {
      out += ",failed,,";
    }
    out += "\n";
  }
  return out;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string svg_num(double v) { return format_double(round2(v)); }

void svg_line(std::string& s, double x1, double y1, double x2, double y2,
              const std::string& stroke, double width) {
  s += "<line x1=\"" + svg_num(x1) + "\" y1=\"" + svg_num(y1) + "\" x2=\"" +
       svg_num(x2) + "\" y2=\"" + svg_num(y2) + "\" stroke=\"" + stroke +
       "\" stroke-width=\"" + svg_num(width) + "\"/>\n";
}

void svg_text(std::string& s, double x, double y, const std::string& anchor,
              const std::string& text, int size) {
  s += "<text x=\"" + svg_num(x) + "\" y=\"" + svg_num(y) +
       "\" text-anchor=\"" + anchor +
       "\" font-family=\"monospace\" font-size=\"" + std::to_string(size) +
       "\" fill=\"#333333\">" + text + "</text>\n";
}

}  // namespace

bool ExperimentConfig::is_rate() const { return is_rate_kind(kind); }
bool ExperimentConfig::is_suite() const { return !is_rate_kind(kind); }

void apply_overrides(Json& config, const std::vector<std::string>& overrides) {
  if (!config.is_object()) {
    throw ConfigError("config root must be a JSON object");
  }
  for (const std::string& ov : overrides) {
    std::string text = ov;
    if (text.rfind("--", 0) == 0) text = text.substr(2);
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like key=value: " + ov);
    }
    const std::string key = text.substr(0, eq);
    const std::string val = text.substr(eq + 1);
    Json parsed;
    try {
      parsed = Json::parse(val);
    } catch (const Json::parse_error&) {
      parsed = val;
    }
    Json* node = &config;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key.find('.', start);
      const std::string part =
          key.substr(start, dot == std::string::npos ? std::string::npos
                                                     : dot - start);
      if (part.empty()) throw ConfigError("bad override key: " + key);
      if (dot == std::string::npos) {
        (*node)[part] = parsed;
        break;
      }
      if (node->contains(part) && !(*node)[part].is_object()) {
        (*node)[part] = Json::object();
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

ExperimentConfig parse_experiment_config(const Json& raw) {
  if (!raw.is_object()) throw ConfigError("config root must be a JSON object");

  static const char* const known[] = {
      "kind",    "d",       "sizes",   "trials",   "trials_corollary4",
      "seed",    "n_eval",  "threads", "allow_low_dim", "solver",
      "model",   "sampler", "out_dir", "atoms",    "support",
      "sample_n", "sample_m"};
  for (const auto& it : raw.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown config field '" + it.key() + "'");
  }

  ExperimentConfig cfg;
  if (!raw.contains("kind") || !raw["kind"].is_string()) {
    throw ConfigError("config needs a string 'kind'");
  }
  cfg.kind = raw["kind"].get<std::string>();
  bool kind_ok = false;
  for (const char* k : kKinds) {
    if (cfg.kind == k) {
      kind_ok = true;
      break;
    }
  }
  if (!kind_ok) throw ConfigError("unknown experiment kind '" + cfg.kind + "'");
  const bool rate = cfg.is_rate();

  cfg.d = rate ? 6 : 3;
  if (raw.contains("d")) cfg.d = static_cast<int>(as_int(raw["d"], "d"));
  if (cfg.d < 1) throw ConfigError("d must be >= 1");
  if (rate && cfg.kind == "rate-risk" && cfg.d > 20) {
    throw ConfigError("d too large for dense gaussian-pair experiments");
  }

  if (raw.contains("allow_low_dim")) {
    if (!raw["allow_low_dim"].is_boolean()) {
      throw ConfigError("allow_low_dim must be a boolean");
    }
    cfg.allow_low_dim = raw["allow_low_dim"].get<bool>();
  }
  if (rate && cfg.d <= 4 && !cfg.allow_low_dim) {
    throw ConfigError(
        "rate experiments target the d > 4 regime; pass allow_low_dim=true "
        "to override");
  }

  if (rate) {
    if (!raw.contains("sizes")) {
      throw ConfigError("rate experiments need a 'sizes' array");
    }
    const Json& sz = raw["sizes"];
    if (!sz.is_array() || sz.size() < 2) {
      throw ConfigError("sizes must be an array with at least 2 entries");
    }
    for (const Json& v : sz) {
      const std::int64_t n = as_int(v, "sizes");
      if (n < 1) throw ConfigError("sizes entries must be >= 1");
      if (n > 4096) {
        throw ConfigError("sizes are capped at 4096 (dense-solver scale)");
      }
      if (!cfg.sizes.empty() && n <= cfg.sizes.back()) {
        throw ConfigError("sizes must be strictly increasing");
      }
      cfg.sizes.push_back(n);
    }
  } else if (raw.contains("sizes")) {
    throw ConfigError("sizes only apply to rate experiments");
  }

  cfg.trials = rate ? 10 : (cfg.kind == "growth-suite" ? 500 : 1000);
  if (raw.contains("trials")) cfg.trials = as_int(raw["trials"], "trials");
  if (cfg.trials < 0) throw ConfigError("trials must be >= 0");
  if (rate && cfg.trials < 1) {
    throw ConfigError("rate experiments need trials >= 1");
  }

  if (raw.contains("trials_corollary4")) {
    cfg.trials_corollary4 =
        as_int(raw["trials_corollary4"], "trials_corollary4");
    if (cfg.trials_corollary4 < 0) {
      throw ConfigError("trials_corollary4 must be >= 0");
    }
  }

  if (!raw.contains("seed")) {
    throw ConfigError("seed is required (pass --seed)");
  }
  const Json& sd = raw["seed"];
  if (sd.is_number_unsigned()) {
    cfg.seed = sd.get<std::uint64_t>();
  } else if (sd.is_number_integer() && sd.get<std::int64_t>() >= 0) {
    cfg.seed = static_cast<std::uint64_t>(sd.get<std::int64_t>());
  } else {
    throw ConfigError("seed must be a nonnegative integer");
  }

  if (raw.contains("n_eval")) {
    cfg.n_eval = as_int(raw["n_eval"], "n_eval");
    if (cfg.n_eval < 0) throw ConfigError("n_eval must be >= 0");
  }
  if (raw.contains("threads")) {
    cfg.threads = static_cast<int>(as_int(raw["threads"], "threads"));
    if (cfg.threads < 0) throw ConfigError("threads must be >= 0");
  }
  if (raw.contains("solver")) {
    const Json& s = raw["solver"];
    if (!s.is_object()) throw ConfigError("solver must be an object");
    for (const auto& it : s.items()) {
      if (it.key() == "max_pivots") {
        cfg.solver.max_pivots = as_int(it.value(), "solver.max_pivots");
        if (cfg.solver.max_pivots < 0) {
          throw ConfigError("solver.max_pivots must be >= 0");
        }
      } else if (it.key() == "time_limit_seconds") {
        cfg.solver.time_limit_seconds =
            as_num(it.value(), "solver.time_limit_seconds");
        if (cfg.solver.time_limit_seconds < 0) {
          throw ConfigError("solver.time_limit_seconds must be >= 0");
        }
      } else {
        throw ConfigError("unknown solver field '" + it.key() + "'");
      }
    }
  }

  if (raw.contains("model")) {
    if (cfg.kind != "rate-risk") {
      throw ConfigError(
          "model spec only applies to rate-risk; suites draw their own "
          "models");
    }
    cfg.model = raw["model"];
  }
  if (raw.contains("sampler")) {
    if (!(cfg.kind == "rate-e1" || cfg.kind == "rate-e2" ||
          cfg.kind == "rate-e3")) {
      throw ConfigError("sampler spec only applies to rate-e1/e2/e3");
    }
    cfg.sampler = raw["sampler"];
  }

  if (raw.contains("out_dir")) {
    if (!raw["out_dir"].is_string() ||
        raw["out_dir"].get<std::string>().empty()) {
      throw ConfigError("out_dir must be a nonempty string");
    }
    cfg.out_dir = raw["out_dir"].get<std::string>();
  }

  if (raw.contains("atoms")) {
    cfg.atoms = as_int(raw["atoms"], "atoms");
    if (cfg.atoms < 2) throw ConfigError("atoms must be >= 2");
  }
  if (raw.contains("support")) {
    cfg.support = as_int(raw["support"], "support");
    if (cfg.support < 50) {
      throw ConfigError("support must be >= 50 (two-sample check needs it)");
    }
  }
  if (raw.contains("sample_n")) {
    cfg.sample_n = as_int(raw["sample_n"], "sample_n");
    if (cfg.sample_n < 1) throw ConfigError("sample_n must be >= 1");
  }
  if (raw.contains("sample_m")) {
    cfg.sample_m = as_int(raw["sample_m"], "sample_m");
    if (cfg.sample_m < 1) throw ConfigError("sample_m must be >= 1");
  }
  return cfg;
}

RateFit fit_log_log(const std::vector<RateRow>& rows) {
  if (rows.size() < 2) {
    throw ConfigError("slope fit needs at least 2 sizes");
  }
  const auto k = static_cast<std::int64_t>(rows.size());
  std::vector<double> xs(rows.size()), ys(rows.size()), sig(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!(rows[i].mean > 0.0)) {
      throw NumericError("log-log fit needs positive means (n=" +
                         std::to_string(rows[i].n) + ")");
    }
    xs[i] = std::log(static_cast<double>(rows[i].n));
    ys[i] = std::log(rows[i].mean);
    sig[i] = rows[i].stderr_ / rows[i].mean;
  }
  double xbar = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    xbar += xs[i];
    ybar += ys[i];
  }
  xbar /= double(k);
  ybar /= double(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sxx += (xs[i] - xbar) * (xs[i] - xbar);
    sxy += (xs[i] - xbar) * (ys[i] - ybar);
  }
  if (!(sxx > 0.0)) throw ConfigError("slope fit needs distinct sizes");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = ybar - fit.slope * xbar;
  double var = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double a = (xs[i] - xbar) / sxx;
    var += a * a * sig[i] * sig[i];
  }
  fit.slope_halfwidth = 1.96 * std::sqrt(var);
  return fit;
}

std::string render_rate_svg(const std::string& title,
                            const std::vector<RateRow>& rows,
                            const RateFit& fit) {
  constexpr double W = 640, H = 480;
  constexpr double L = 70, R = 618, T = 46, B = 424;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const RateRow& r : rows) {
    const double x = std::log(static_cast<double>(r.n));
    double lo = r.mean - 1.96 * r.stderr_;
    double hi = r.mean + 1.96 * r.stderr_;
    if (!(lo > 0.0)) lo = r.mean;
    const double yl = std::log(lo), yh = std::log(hi);
    if (first) {
      xmin = xmax = x;
      ymin = yl;
      ymax = yh;
      first = false;
    } else {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, yl);
      ymax = std::max(ymax, yh);
    }
  }
  ymin = std::min(ymin, fit.intercept + fit.slope * xmin);
  ymin = std::min(ymin, fit.intercept + fit.slope * xmax);
  ymax = std::max(ymax, fit.intercept + fit.slope * xmin);
  ymax = std::max(ymax, fit.intercept + fit.slope * xmax);
  const double xpad = 0.06 * std::max(xmax - xmin, 1e-9);
  const double ypad = 0.10 * std::max(ymax - ymin, 1e-9);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  const auto px = [&](double x) {
    return L + (x - xmin) / (xmax - xmin) * (R - L);
  };
  const auto py = [&](double y) {
    return B - (y - ymin) / (ymax - ymin) * (B - T);
  };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
       "height=\"480\" viewBox=\"0 0 640 480\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" "
       "fill=\"#ffffff\"/>\n";

  svg_text(s, W / 2, 24, "middle", title + " (log-log)", 15);

  // frame
  svg_line(s, L, T, L, B, "#333333", 1.0);
  svg_line(s, L, B, R, B, "#333333", 1.0);

  // x ticks at sample sizes
  for (const RateRow& r : rows) {
    const double x = px(std::log(static_cast<double>(r.n)));
    svg_line(s, x, B, x, B + 5, "#333333", 1.0);
    svg_text(s, x, B + 20, "middle", std::to_string(r.n), 11);
  }
  svg_text(s, (L + R) / 2, H - 14, "middle", "n", 12);

  // y ticks at powers of 10 inside the range
  const int k_lo = static_cast<int>(std::ceil(ymin / std::log(10.0)));
  const int k_hi = static_cast<int>(std::floor(ymax / std::log(10.0)));
  int drawn = 0;
  for (int k = k_lo; k <= k_hi; ++k) {
    const double y = py(k * std::log(10.0));
    svg_line(s, L - 5, y, L, y, "#333333", 1.0);
    svg_line(s, L, y, R, y, "#dddddd", 0.5);
    svg_text(s, L - 8, y + 4, "end", "1e" + std::to_string(k), 11);
    ++drawn;
  }
  if (drawn == 0) {
    for (const double y : {ymin + ypad, ymax - ypad}) {
      const double yy = py(y);
      svg_line(s, L - 5, yy, L, yy, "#333333", 1.0);
      svg_text(s, L - 8, yy + 4, "end", format_double(round2(std::exp(y))),
               11);
    }
  }

  // fitted line
  svg_line(s, px(xmin + xpad), py(fit.intercept + fit.slope * (xmin + xpad)),
           px(xmax - xpad), py(fit.intercept + fit.slope * (xmax - xpad)),
           "#d62728", 1.5);

  // error bars and points
  for (const RateRow& r : rows) {
    const double x = px(std::log(static_cast<double>(r.n)));
    double lo = r.mean - 1.96 * r.stderr_;
    const double hi = r.mean + 1.96 * r.stderr_;
    if (!(lo > 0.0)) lo = r.mean;
    if (hi > lo) {
      const double ylo = py(std::log(lo)), yhi = py(std::log(hi));
      svg_line(s, x, ylo, x, yhi, "#1f77b4", 1.0);
      svg_line(s, x - 4, ylo, x + 4, ylo, "#1f77b4", 1.0);
      svg_line(s, x - 4, yhi, x + 4, yhi, "#1f77b4", 1.0);
    }
    const double y = py(std::log(r.mean));
    s += "<circle cx=\"" + svg_num(x) + "\" cy=\"" + svg_num(y) +
         "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
  }

  const double shown_slope = std::round(fit.slope * 1000.0) / 1000.0;
  const double shown_hw = std::round(fit.slope_halfwidth * 1000.0) / 1000.0;
  svg_text(s, R, T + 14, "end",
           "slope " + format_double(shown_slope) + " +/- " +
               format_double(shown_hw),
           12);

  s += "</svg>\n";
  return s;
}

std::vector<RateRow> aggregate_rate_csv(const std::string& csv_text,
                                        std::string* kind_out) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty rate CSV");
  if (line.rfind("kind,d,n,trial,seed,status,value", 0) != 0) {
    throw ConfigError("unrecognized rate CSV header");
  }
  struct Acc {
    std::int64_t trials = 0, failed = 0;
    std::vector<double> values;
  };
  std::vector<std::pair<std::int64_t, Acc>> accs;
  bool have_kind = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t c = line.find(',', start);
      f.push_back(line.substr(start, c == std::string::npos
                                         ? std::string::npos
                                         : c - start));
      if (c == std::string::npos) break;
      start = c + 1;
    }
    if (f.size() < 7) throw ConfigError("short row in rate CSV");
    if (!have_kind && kind_out != nullptr) {
      *kind_out = f[0];
      have_kind = true;
    }
    const std::int64_t n = std::stoll(f[2]);
    Acc* acc = nullptr;
    for (auto& kv : accs) {
      if (kv.first == n) {
        acc = &kv.second;
        break;
      }
    }
    if (acc == nullptr) {
      accs.emplace_back(n, Acc{});
      acc = &accs.back().second;
    }
    ++acc->trials;
    if (f[5] == "ok") {
      acc->values.push_back(parse_double(f[6]));
    } else {
      ++acc->failed;
    }
  }
  std::sort(accs.begin(), accs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<RateRow> rows;
  for (const auto& kv : accs) {
    RateRow row;
    row.n = kv.first;
    row.trials = kv.second.trials;
    row.failed = kv.second.failed;
    const auto k = static_cast<std::int64_t>(kv.second.values.size());
    if (k == 0) {
      throw NumericError("every trial failed at n=" + std::to_string(row.n));
    }
    double sum = 0.0;
    for (const double v : kv.second.values) sum += v;
    row.mean = sum / double(k);
    if (k >= 2) {
      double ss = 0.0;
      for (const double v : kv.second.values) {
        ss += (v - row.mean) * (v - row.mean);
      }
      row.stderr_ = std::sqrt(ss / double(k - 1) / double(k));
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

ExperimentResult run_rate(const ExperimentConfig& cfg) {
  const bool risk = cfg.kind == "rate-risk";
  std::optional<GaussianPair> pair;
  std::optional<Sampler> source;
  if (risk) {
    pair = build_risk_pair(cfg);
  } else {
    source = build_moment_sampler(cfg);
  }

  const auto n_sizes = static_cast<std::int64_t>(cfg.sizes.size());
  const std::int64_t total = n_sizes * cfg.trials;
  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(total));
  std::vector<std::int64_t> trial_n(static_cast<std::size_t>(total));

  parallel_for(total, cfg.threads, [&](std::int64_t k) {
    const std::int64_t si = k / cfg.trials;
    const std::int64_t t = k % cfg.trials;
    const std::int64_t n = cfg.sizes[static_cast<std::size_t>(si)];
    const std::uint64_t ts = derive_seed(
        derive_seed(cfg.seed, static_cast<std::uint64_t>(n)),
        static_cast<std::uint64_t>(t));
    trial_n[static_cast<std::size_t>(k)] = n;
    outcomes[static_cast<std::size_t>(k)] =
        risk ? run_risk_trial(cfg, *pair, n, ts)
             : run_moment_trial(cfg, *source, n, ts);
  });

  std::vector<RateRow> rows;
  std::int64_t failed_total = 0;
  for (std::int64_t si = 0; si < n_sizes; ++si) {
    RateRow row;
    row.n = cfg.sizes[static_cast<std::size_t>(si)];
    row.trials = cfg.trials;
    double sum = 0.0;
    std::vector<double> vals;
    for (std::int64_t t = 0; t < cfg.trials; ++t) {
      const TrialOutcome& o =
          outcomes[static_cast<std::size_t>(si * cfg.trials + t)];
      if (o.ok) {
        vals.push_back(o.value);
        sum += o.value;
      } else {
        ++row.failed;
      }
    }
    failed_total += row.failed;
    if (vals.empty()) {
      throw NumericError("every trial failed at n=" + std::to_string(row.n));
    }
    row.mean = sum / double(vals.size());
    if (vals.size() >= 2) {
      double ss = 0.0;
      for (const double v : vals) ss += (v - row.mean) * (v - row.mean);
      row.stderr_ =
          std::sqrt(ss / double(vals.size() - 1) / double(vals.size()));
    }
    rows.push_back(row);
  }

  const RateFit fit = fit_log_log(rows);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string csv_path = cfg.out_dir + "/" + cfg.kind + ".csv";
  const std::string json_path = cfg.out_dir + "/" + cfg.kind + "_summary.json";
  const std::string svg_path = cfg.out_dir + "/" + cfg.kind + ".svg";
  write_text_file(csv_path, rate_csv(cfg, trial_n, outcomes));
  write_text_file(svg_path, render_rate_svg(cfg.kind, rows, fit));

  Json summary = Json::object();
  summary["kind"] = cfg.kind;
  summary["d"] = cfg.d;
  summary["seed"] = cfg.seed;
  summary["trials_per_size"] = cfg.trials;
  summary["failed_total"] = failed_total;
  Json jrows = Json::array();
  for (const RateRow& r : rows) {
    Json jr = Json::object();
    jr["n"] = r.n;
    jr["trials"] = r.trials;
    jr["failed"] = r.failed;
    jr["mean"] = r.mean;
    jr["stderr"] = r.stderr_;
    jrows.push_back(jr);
  }
  summary["rows"] = jrows;
  summary["slope"] = fit.slope;
  summary["intercept"] = fit.intercept;
  summary["slope_halfwidth"] = fit.slope_halfwidth;
  summary["outputs"] = Json::array({csv_path, json_path, svg_path});
  write_json_file(json_path, summary);

  ExperimentResult res;
  res.summary = summary;
  res.violations = 0;
  res.outputs = {csv_path, json_path, svg_path};
  return res;
}

ExperimentResult run_suites(const ExperimentConfig& cfg) {
  struct Block {
    std::string check;
    std::int64_t trials;
  };
  std::vector<Block> blocks;
  if (cfg.kind == "stability-suite") {
    blocks = {{"theorem3", cfg.trials},
              {"corollary1", cfg.trials},
              {"corollary2", cfg.trials},
              {"corollary3", cfg.trials},
              {"corollary4", cfg.trials_corollary4}};
  } else if (cfg.kind == "lemma1-suite") {
    blocks = {{"lemma1", cfg.trials}};
  } else {
    blocks = {{"quadratic_growth", cfg.trials}};
  }

  std::int64_t total = 0;
  std::vector<std::int64_t> offsets;
  for (const Block& b : blocks) {
    offsets.push_back(total);
    total += b.trials;
  }
  std::vector<StabilityReport> all(static_cast<std::size_t>(total));
  parallel_for(total, cfg.threads, [&](std::int64_t k) {
    std::size_t bi = blocks.size() - 1;
    while (k < offsets[bi]) --bi;
    all[static_cast<std::size_t>(k)] =
        run_suite_trial(cfg, blocks[bi].check, k - offsets[bi]);
  });

  std::filesystem::create_directories(cfg.out_dir);
  ExperimentResult res;
  std::int64_t violations = 0;

  Json summary = Json::object();
  summary["kind"] = cfg.kind;
  summary["seed"] = cfg.seed;
  summary["d"] = cfg.d;
  Json jchecks = Json::array();

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const Block& b = blocks[bi];
    std::vector<StabilityReport> reports(
        all.begin() + offsets[bi], all.begin() + offsets[bi] + b.trials);

    std::vector<std::string> comp_names;
    if (!reports.empty()) {
      for (const auto& kv : reports.front().components) {
        comp_names.push_back(kv.first);
      }
    }
    const std::string csv_path = cfg.out_dir + "/" + b.check + ".csv";
    const std::string json_path = cfg.out_dir + "/" + b.check + ".json";
    write_text_file(csv_path, suite_csv(reports, comp_names));
    Json arr = Json::array();
    for (const StabilityReport& r : reports) arr.push_back(report_to_json(r));
    write_json_file(json_path, arr);
    res.outputs.push_back(csv_path);
    res.outputs.push_back(json_path);

    const CheckStats st = summarize(reports);
    violations += st.violations;
    Json jc = Json::object();
    jc["check"] = b.check;
    jc["trials"] = st.trials;
    jc["violations"] = st.violations;
    jc["min_slack"] = st.has_min_slack ? Json(st.min_slack) : Json();
    if (b.check == "corollary4") jc["worst_ratio"] = st.worst_ratio;
    if (b.check == "lemma1") jc["max_discrepancy"] = st.max_discrepancy;
    jchecks.push_back(jc);
  }

  summary["checks"] = jchecks;
  summary["violations"] = violations;
  const std::string sum_path =
      cfg.out_dir + "/" + cfg.kind + "_summary.json";
  Json outs = Json::array();
  for (const std::string& p : res.outputs) outs.push_back(p);
  outs.push_back(sum_path);
  summary["outputs"] = outs;
  write_json_file(sum_path, summary);
  res.outputs.push_back(sum_path);

  res.summary = summary;
  res.violations = violations;
  return res;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.is_rate()) return run_rate(cfg);
  return run_suites(cfg);
}

ExperimentResult run_experiment_json(const std::string& config_text,
                                     const std::vector<std::string>& overrides) {
  Json raw;
  try {
    raw = Json::parse(config_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  apply_overrides(raw, overrides);
  return run_experiment(parse_experiment_config(raw));
}

}  // namespace otlab
