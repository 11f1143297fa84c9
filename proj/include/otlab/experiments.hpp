#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otlab/io.hpp"
#include "otlab/solver.hpp"
#include "otlab/stability.hpp"

namespace otlab {

// Parsed and validated experiment description. Defaults that depend on the
// kind (d, trials) are resolved during parsing.
struct ExperimentConfig {
  std::string kind;  // rate-risk | rate-e1 | rate-e2 | rate-e3 |
                     // stability-suite | lemma1-suite | growth-suite
  int d = 0;
  std::vector<std::int64_t> sizes;
  std::int64_t trials = 0;
  std::int64_t trials_corollary4 = 200;
  std::uint64_t seed = 0;
  std::int64_t n_eval = 0;  // 0: max(2000, 10n)
  int threads = 0;          // 0: hardware concurrency
  bool allow_low_dim = false;
  SolveOptions solver;
  Json model;    // model spec, null for the built-in default
  Json sampler;  // source sampler spec for moment rates, null for default
  std::string out_dir = "out";
  std::int64_t atoms = 20;    // support size of random suite instances
  std::int64_t support = 100; // support size of the two-sample check's truth
  std::int64_t sample_n = 30;
  std::int64_t sample_m = 30;

  bool is_rate() const;
  bool is_suite() const;
};

// Applies "key=value" overrides to a raw config object. Keys may be dotted
// paths ("solver.max_pivots"); values are parsed as JSON when possible and
// fall back to strings.
void apply_overrides(Json& config, const std::vector<std::string>& overrides);

// Validates a raw config object; throws ConfigError on unknown keys, missing
// required fields, or out-of-range values.
ExperimentConfig parse_experiment_config(const Json& raw);

// One aggregated row of a rate experiment.
struct RateRow {
  std::int64_t n = 0;
  std::int64_t trials = 0;
  std::int64_t failed = 0;
  double mean = 0.0;
  double stderr_ = 0.0;  // between-trial standard error of the mean
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_halfwidth = 0.0;  // 95% CI propagated from per-row stderrs
};

// Least squares of log(mean) against log(n) over rows with at least one
// successful trial. Requires >= 2 rows and strictly positive means.
RateFit fit_log_log(const std::vector<RateRow>& rows);

// Self-contained SVG of a rate experiment: log-log points, 95% error bars,
// fitted line, slope annotation.
std::string render_rate_svg(const std::string& title,
                            const std::vector<RateRow>& rows,
                            const RateFit& fit);

// Rebuilds aggregate rows from a per-trial CSV produced by a rate run.
// Returns rows sorted by n; kind_out (optional) receives the kind column.
std::vector<RateRow> aggregate_rate_csv(const std::string& csv_text,
                                        std::string* kind_out);

struct ExperimentResult {
  Json summary;
  std::int64_t violations = 0;
  std::vector<std::string> outputs;  // files written, relative to out_dir's parent
};

// Runs the configured experiment, writes its reports under cfg.out_dir, and
// returns the summary. Throws ConfigError / NumericError; inequality
// violations are counted, not thrown.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Convenience wrapper: parse config text, apply overrides, validate, run.
ExperimentResult run_experiment_json(const std::string& config_text,
                                     const std::vector<std::string>& overrides);

}  // namespace otlab
