#include "otlab/otlab.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include "otlab/errors.hpp"
#include "otlab/estimators.hpp"
#include "otlab/experiments.hpp"
#include "otlab/io.hpp"
#include "otlab/measure.hpp"
#include "otlab/solver.hpp"

struct otlab_measure {
  otlab::DiscreteMeasure m;
};
struct otlab_coupling {
  otlab::Coupling c;
};
struct otlab_map {
  otlab::TransportMapEstimate est;
};

namespace {

thread_local std::string g_last_error = "";

otlab_status fail(otlab_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

otlab_status invalid(const char* what) {
  return fail(OTLAB_ERR_INVALID, what);
}

template <typename Fn>
otlab_status guarded(Fn&& fn) {
  try {
    fn();
    return OTLAB_OK;
  } catch (const otlab::NumericError& e) {
    return fail(OTLAB_ERR_NUMERIC, e.what());
  } catch (const otlab::ConfigError& e) {
    return fail(OTLAB_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(OTLAB_ERR_NUMERIC, "out of memory");
  } catch (const std::exception& e) {
    return fail(OTLAB_ERR_NUMERIC, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* otlab_version(void) { return "0.1.0"; }

const char* otlab_last_error(void) { return g_last_error.c_str(); }

otlab_status otlab_measure_create(const double* points, const double* weights,
                                  int64_t n, int32_t d, otlab_measure** out) {
  if (points == nullptr || out == nullptr) {
    return invalid("measure_create: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    otlab::PointMatrix pts(n, d);
    for (int64_t i = 0; i < n; ++i) {
      for (int32_t j = 0; j < d; ++j) pts(i, j) = points[i * d + j];
    }
    Eigen::VectorXd w;
    if (weights != nullptr) {
      w = Eigen::Map<const Eigen::VectorXd>(weights, n);
    } else {
      w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    }
    *out = new otlab_measure{
        otlab::DiscreteMeasure(std::move(pts), std::move(w))};
  });
}

otlab_status otlab_measure_read(const char* path, otlab_measure** out) {
  if (path == nullptr || out == nullptr) {
    return invalid("measure_read: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    *out = new otlab_measure{otlab::read_measure(path)};
  });
}

otlab_status otlab_measure_write(const otlab_measure* m, const char* path) {
  if (m == nullptr || path == nullptr) {
    return invalid("measure_write: NULL pointer");
  }
  return guarded([&] { otlab::write_measure(m->m, path); });
}

int64_t otlab_measure_size(const otlab_measure* m) {
  return m == nullptr ? 0 : m->m.size();
}

int32_t otlab_measure_dim(const otlab_measure* m) {
  return m == nullptr ? 0 : m->m.dim();
}

otlab_status otlab_measure_copy_data(const otlab_measure* m, double* points,
                                     double* weights) {
  if (m == nullptr) return invalid("measure_copy_data: NULL measure");
  const auto n = m->m.size();
  const auto d = m->m.dim();
  if (points != nullptr) {
    for (int64_t i = 0; i < n; ++i) {
      for (int32_t j = 0; j < d; ++j) points[i * d + j] = m->m.points()(i, j);
    }
  }
  if (weights != nullptr) {
    for (int64_t i = 0; i < n; ++i) weights[i] = m->m.weights()(i);
  }
  return OTLAB_OK;
}

void otlab_measure_free(otlab_measure* m) { delete m; }

otlab_status otlab_solve(const otlab_measure* source,
                         const otlab_measure* target, int64_t max_pivots,
                         double time_limit_seconds, otlab_coupling** out) {
  if (source == nullptr || target == nullptr || out == nullptr) {
    return invalid("solve: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    otlab::SolveOptions opts;
    opts.max_pivots = max_pivots;
    opts.time_limit_seconds = time_limit_seconds;
    *out = new otlab_coupling{
        otlab::solve_kantorovich(source->m, target->m, opts)};
  });
}

double otlab_coupling_cost(const otlab_coupling* c) {
  return c == nullptr ? 0.0 : c->c.cost();
}

int64_t otlab_coupling_entry_count(const otlab_coupling* c) {
  return c == nullptr ? 0
                      : static_cast<int64_t>(c->c.entries().size());
}

otlab_status otlab_coupling_copy_entries(const otlab_coupling* c,
                                         int64_t* rows, int64_t* cols,
                                         double* mass) {
  if (c == nullptr) return invalid("coupling_copy_entries: NULL coupling");
  const auto& entries = c->c.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (rows != nullptr) rows[k] = entries[k].i;
    if (cols != nullptr) cols[k] = entries[k].j;
    if (mass != nullptr) mass[k] = entries[k].mass;
  }
  return OTLAB_OK;
}

otlab_status otlab_coupling_write(const otlab_coupling* c, const char* path) {
  if (c == nullptr || path == nullptr) {
    return invalid("coupling_write: NULL pointer");
  }
  return guarded([&] {
    otlab::write_json_file(path, otlab::coupling_to_json(c->c));
  });
}

void otlab_coupling_free(otlab_coupling* c) { delete c; }

otlab_status otlab_w2(const otlab_measure* a, const otlab_measure* b,
                      double* out) {
  if (a == nullptr || b == nullptr || out == nullptr) {
    return invalid("w2: NULL pointer");
  }
  return guarded([&] { *out = otlab::w2(a->m, b->m); });
}

otlab_status otlab_fit_one_nn(const otlab_coupling* plan, otlab_map** out) {
  if (plan == nullptr || out == nullptr) {
    return invalid("fit_one_nn: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    *out = new otlab_map{otlab::one_nn_estimator(plan->c)};
  });
}

otlab_status otlab_fit_histogram(const otlab_measure* xs,
                                 const otlab_measure* ys,
                                 int64_t cells_per_axis, otlab_map** out) {
  if (xs == nullptr || ys == nullptr || out == nullptr) {
    return invalid("fit_histogram: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    *out = new otlab_map{otlab::histogram_plugin_estimator(
        xs->m, ys->m, static_cast<int>(cells_per_axis), Eigen::VectorXd(),
        Eigen::VectorXd())};
  });
}

int32_t otlab_map_dim(const otlab_map* map) {
  return map == nullptr ? 0 : map->est.dim();
}

otlab_status otlab_map_apply(const otlab_map* map, const double* points,
                             int64_t n, int32_t d, double* out) {
  if (map == nullptr || points == nullptr || out == nullptr) {
    return invalid("map_apply: NULL pointer");
  }
  return guarded([&] {
    if (d != map->est.dim()) {
      throw otlab::ConfigError("map_apply: dimension mismatch");
    }
    Eigen::VectorXd x(d);
    for (int64_t i = 0; i < n; ++i) {
      for (int32_t j = 0; j < d; ++j) x(j) = points[i * d + j];
      const Eigen::VectorXd y = map->est(x);
      for (int32_t j = 0; j < d; ++j) out[i * d + j] = y(j);
    }
  });
}

otlab_status otlab_map_transform_csv(const otlab_map* map, const char* in_csv,
                                     const char* out_csv) {
  if (map == nullptr || in_csv == nullptr || out_csv == nullptr) {
    return invalid("map_transform_csv: NULL pointer");
  }
  return guarded([&] {
    const std::string text = otlab::read_text_file(in_csv);
    const int d = map->est.dim();
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      while (true) {
        const std::size_t c = line.find(',', start);
        fields.push_back(line.substr(
            start, c == std::string::npos ? std::string::npos : c - start));
        if (c == std::string::npos) break;
        start = c + 1;
      }
      if (static_cast<int>(fields.size()) != d) {
        throw otlab::ConfigError("query row has " +
                                 std::to_string(fields.size()) +
                                 " fields, map dimension is " +
                                 std::to_string(d));
      }
      Eigen::VectorXd x(d);
      for (int j = 0; j < d; ++j) x(j) = otlab::parse_double(fields[j]);
      const Eigen::VectorXd y = map->est(x);
      for (int j = 0; j < d; ++j) {
        if (j > 0) out += ",";
        out += otlab::format_double(y(j));
      }
      out += "\n";
    }
    otlab::write_text_file(out_csv, out);
  });
}

otlab_status otlab_map_write(const otlab_map* map, const char* path) {
  if (map == nullptr || path == nullptr) {
    return invalid("map_write: NULL pointer");
  }
  return guarded([&] {
    otlab::write_json_file(path, otlab::estimate_to_json(map->est));
  });
}

otlab_status otlab_map_read(const char* path, otlab_map** out) {
  if (path == nullptr || out == nullptr) {
    return invalid("map_read: NULL pointer");
  }
  *out = nullptr;
  return guarded([&] {
    const otlab::Json j = otlab::Json::parse(otlab::read_text_file(path));
    *out = new otlab_map{otlab::estimate_from_json(j)};
  });
}

void otlab_map_free(otlab_map* map) { delete map; }

otlab_status otlab_run_experiment(const char* config_json,
                                  const char* const* overrides,
                                  int32_t n_overrides, char** summary_json) {
  if (config_json == nullptr || summary_json == nullptr ||
      (n_overrides > 0 && overrides == nullptr)) {
    return invalid("run_experiment: NULL pointer");
  }
  *summary_json = nullptr;
  std::int64_t violations = 0;
  const otlab_status st = guarded([&] {
    std::vector<std::string> ovs;
    ovs.reserve(static_cast<std::size_t>(n_overrides));
    for (int32_t i = 0; i < n_overrides; ++i) {
      if (overrides[i] == nullptr) {
        throw otlab::ConfigError("run_experiment: NULL override");
      }
      ovs.emplace_back(overrides[i]);
    }
    const otlab::ExperimentResult res =
        otlab::run_experiment_json(config_json, ovs);
    violations = res.violations;
    *summary_json = copy_string(res.summary.dump(2) + "\n");
    if (*summary_json == nullptr) throw std::bad_alloc();
  });
  if (st != OTLAB_OK) return st;
  if (violations > 0) {
    return fail(OTLAB_ERR_VIOLATION,
                std::to_string(violations) + " inequality violation(s)");
  }
  return OTLAB_OK;
}

otlab_status otlab_render_rate_plot(const char* csv_path,
                                    const char* svg_path) {
  if (csv_path == nullptr || svg_path == nullptr) {
    return invalid("render_rate_plot: NULL pointer");
  }
  return guarded([&] {
    std::string kind;
    const std::vector<otlab::RateRow> rows =
        otlab::aggregate_rate_csv(otlab::read_text_file(csv_path), &kind);
    const otlab::RateFit fit = otlab::fit_log_log(rows);
    otlab::write_text_file(svg_path,
                           otlab::render_rate_svg(kind, rows, fit));
  });
}

void otlab_string_free(char* s) { std::free(s); }

}  // extern "C"
