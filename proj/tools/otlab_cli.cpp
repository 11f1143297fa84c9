#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "otlab/otlab.h"

namespace {

using Json = nlohmann::ordered_json;

int exit_code(otlab_status st) {
  switch (st) {
    case OTLAB_OK:
      return 0;
    case OTLAB_ERR_VIOLATION:
      return 1;
    case OTLAB_ERR_CONFIG:
      return 2;
    case OTLAB_ERR_NUMERIC:
      return 3;
    default:
      return 2;
  }
}

int report_failure(otlab_status st) {
  std::fprintf(stderr, "error: %s\n", otlab_last_error());
  return exit_code(st);
}

struct MeasureGuard {
  otlab_measure* m = nullptr;
  ~MeasureGuard() { otlab_measure_free(m); }
};
struct CouplingGuard {
  otlab_coupling* c = nullptr;
  ~CouplingGuard() { otlab_coupling_free(c); }
};
struct MapGuard {
  otlab_map* m = nullptr;
  ~MapGuard() { otlab_map_free(m); }
};

int cmd_solve(const std::string& source, const std::string& target,
              const std::string& out, std::int64_t max_pivots,
              double time_limit) {
  MeasureGuard a, b;
  CouplingGuard plan;
  otlab_status st = otlab_measure_read(source.c_str(), &a.m);
  if (st != OTLAB_OK) return report_failure(st);
  st = otlab_measure_read(target.c_str(), &b.m);
  if (st != OTLAB_OK) return report_failure(st);
  st = otlab_solve(a.m, b.m, max_pivots, time_limit, &plan.c);
  if (st != OTLAB_OK) return report_failure(st);
  std::printf("cost %.17g\n", otlab_coupling_cost(plan.c));
  std::printf("entries %" PRId64 "\n", otlab_coupling_entry_count(plan.c));
  if (!out.empty()) {
    st = otlab_coupling_write(plan.c, out.c_str());
    if (st != OTLAB_OK) return report_failure(st);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_estimate(const std::string& source, const std::string& target,
                 const std::string& method, std::int64_t cells,
                 const std::string& out, const std::string& queries,
                 const std::string& mapped) {
  MeasureGuard xs, ys;
  otlab_status st = otlab_measure_read(source.c_str(), &xs.m);
  if (st != OTLAB_OK) return report_failure(st);
  st = otlab_measure_read(target.c_str(), &ys.m);
  if (st != OTLAB_OK) return report_failure(st);

  MapGuard map;
  if (method == "one-nn") {
    CouplingGuard plan;
    st = otlab_solve(xs.m, ys.m, 0, 0.0, &plan.c);
    if (st != OTLAB_OK) return report_failure(st);
    st = otlab_fit_one_nn(plan.c, &map.m);
  } else if (method == "histogram") {
    st = otlab_fit_histogram(xs.m, ys.m, cells, &map.m);
  } else {
    std::fprintf(stderr, "error: unknown method '%s'\n", method.c_str());
    return 2;
  }
  if (st != OTLAB_OK) return report_failure(st);
  std::printf("fitted %s estimator in dimension %d\n", method.c_str(),
              otlab_map_dim(map.m));

  if (!out.empty()) {
    st = otlab_map_write(map.m, out.c_str());
    if (st != OTLAB_OK) return report_failure(st);
    std::printf("wrote %s\n", out.c_str());
  }
  if (!queries.empty()) {
    st = otlab_map_transform_csv(map.m, queries.c_str(), mapped.c_str());
    if (st != OTLAB_OK) return report_failure(st);
    std::printf("wrote %s\n", mapped.c_str());
  }
  return 0;
}

std::string table_num(const Json& v) {
  if (v.is_null()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v.get<double>());
  return buf;
}

void print_suite_summary(const Json& s) {
  std::printf("%-18s %8s %11s %14s %14s\n", "check", "trials", "violations",
              "min_slack", "worst");
  for (const Json& c : s["checks"]) {
    std::string worst = "-";
    if (c.contains("worst_ratio")) worst = table_num(c["worst_ratio"]);
    if (c.contains("max_discrepancy")) worst = table_num(c["max_discrepancy"]);
    std::printf("%-18s %8" PRId64 " %11" PRId64 " %14s %14s\n",
                c["check"].get<std::string>().c_str(),
                c["trials"].get<std::int64_t>(),
                c["violations"].get<std::int64_t>(),
                table_num(c["min_slack"]).c_str(), worst.c_str());
  }
  std::printf("total violations: %" PRId64 "\n",
              s["violations"].get<std::int64_t>());
}

void print_rate_summary(const Json& s) {
  std::printf("%8s %8s %8s %14s %14s\n", "n", "trials", "failed", "mean",
              "stderr");
  for (const Json& r : s["rows"]) {
    std::printf("%8" PRId64 " %8" PRId64 " %8" PRId64 " %14s %14s\n",
                r["n"].get<std::int64_t>(), r["trials"].get<std::int64_t>(),
                r["failed"].get<std::int64_t>(), table_num(r["mean"]).c_str(),
                table_num(r["stderr"]).c_str());
  }
  std::printf("slope %s +/- %s (95%% CI), intercept %s\n",
              table_num(s["slope"]).c_str(),
              table_num(s["slope_halfwidth"]).c_str(),
              table_num(s["intercept"]).c_str());
}

void print_outputs(const Json& s) {
  if (!s.contains("outputs")) return;
  for (const Json& p : s["outputs"]) {
    std::printf("wrote %s\n", p.get<std::string>().c_str());
  }
}

int cmd_experiment(bool want_rate, const std::string& config_path,
                   std::uint64_t seed, std::vector<std::string> extras) {
  std::string config_text = "{}";
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
      std::fprintf(stderr, "error: cannot read %s\n", config_path.c_str());
      return 2;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    config_text = ss.str();
  }

  std::vector<std::string> overrides;
  for (std::string e : extras) {
    if (e.rfind("--", 0) == 0) e = e.substr(2);
    if (e.find('=') == std::string::npos) {
      std::fprintf(stderr, "error: override must look like key=value: %s\n",
                   e.c_str());
      return 2;
    }
    overrides.push_back(e);
  }
  overrides.push_back("seed=" + std::to_string(seed));

  // The kind decides which subcommand owns the run; check it up front so
  // `stability` cannot silently run a rate experiment and vice versa.
  std::string kind;
  try {
    const Json cfg = Json::parse(config_text);
    if (cfg.is_object() && cfg.contains("kind") && cfg["kind"].is_string()) {
      kind = cfg["kind"].get<std::string>();
    }
  } catch (const Json::parse_error&) {
    // fall through; the library reports malformed JSON with a proper status
  }
  for (const std::string& ov : overrides) {
    if (ov.rfind("kind=", 0) == 0) kind = ov.substr(5);
  }
  const bool kind_is_rate = kind.rfind("rate-", 0) == 0;
  if (!kind.empty() && want_rate != kind_is_rate) {
    std::fprintf(stderr, "error: kind '%s' belongs to the %s subcommand\n",
                 kind.c_str(), kind_is_rate ? "rates" : "stability");
    return 2;
  }

  std::vector<const char*> argv;
  argv.reserve(overrides.size());
  for (const std::string& s : overrides) argv.push_back(s.c_str());

  char* summary_text = nullptr;
  const otlab_status st = otlab_run_experiment(
      config_text.c_str(), argv.data(), static_cast<int32_t>(argv.size()),
      &summary_text);
  if (summary_text == nullptr) return report_failure(st);

  const Json summary = Json::parse(summary_text);
  otlab_string_free(summary_text);
  if (summary.contains("rows")) {
    print_rate_summary(summary);
  } else {
    print_suite_summary(summary);
  }
  print_outputs(summary);
  if (st == OTLAB_ERR_VIOLATION) {
    std::fprintf(stderr, "error: %s\n", otlab_last_error());
  }
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact discrete optimal transport: solver, map estimators, "
               "stability checks, rate experiments"};
  app.require_subcommand(1);

  std::string source, target, out, method = "one-nn", queries, mapped;
  std::int64_t max_pivots = 0, cells = 8;
  double time_limit = 0.0;

  CLI::App* solve = app.add_subcommand("solve", "Solve exact OT between two "
                                                "measure files");
  solve->add_option("--source", source, "source measure (.json or .csv)")
      ->required();
  solve->add_option("--target", target, "target measure (.json or .csv)")
      ->required();
  solve->add_option("--out", out, "coupling output path (.json)");
  solve->add_option("--max-pivots", max_pivots, "pivot cap, 0 = unlimited");
  solve->add_option("--time-limit", time_limit,
                    "wall-clock cap in seconds, 0 = off");

  CLI::App* estimate = app.add_subcommand(
      "estimate", "Fit a transport map estimator from samples");
  estimate->add_option("--source", source, "source sample file")->required();
  estimate->add_option("--target", target, "target sample file")->required();
  estimate->add_option("--method", method, "one-nn or histogram")
      ->check(CLI::IsMember({"one-nn", "histogram"}));
  estimate->add_option("--cells", cells, "histogram cells per axis");
  estimate->add_option("--out", out, "estimator output path (.json)");
  estimate->add_option("--queries", queries,
                       "CSV of query points to push through the map");
  estimate->add_option("--mapped", mapped, "CSV output for mapped points");

  std::string config_path;
  std::uint64_t seed = 0;

  CLI::App* stability = app.add_subcommand(
      "stability", "Run a randomized stability/identity suite");
  stability->add_option("--config", config_path, "experiment config (.json)");
  stability->add_option("--seed", seed, "master seed")->required();
  stability->allow_extras();

  CLI::App* rates = app.add_subcommand(
      "rates", "Run Monte-Carlo rate experiments");
  rates->add_option("--config", config_path, "experiment config (.json)");
  rates->add_option("--seed", seed, "master seed")->required();
  rates->allow_extras();

  std::string csv_path, svg_path;
  CLI::App* report = app.add_subcommand(
      "report", "Re-render the log-log plot for a rate CSV");
  report->add_option("--csv", csv_path, "per-trial rate CSV")->required();
  report->add_option("--out", svg_path, "SVG output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (solve->parsed()) {
    return cmd_solve(source, target, out, max_pivots, time_limit);
  }
  if (estimate->parsed()) {
    if (queries.empty() != mapped.empty()) {
      std::fprintf(stderr,
                   "error: --queries and --mapped must be given together\n");
      return 2;
    }
    return cmd_estimate(source, target, method, cells, out, queries, mapped);
  }
  if (stability->parsed()) {
    return cmd_experiment(false, config_path, seed, stability->remaining());
  }
  if (rates->parsed()) {
    return cmd_experiment(true, config_path, seed, rates->remaining());
  }
  if (report->parsed()) {
    const otlab_status st =
        otlab_render_rate_plot(csv_path.c_str(), svg_path.c_str());
    if (st != OTLAB_OK) return report_failure(st);
    std::printf("wrote %s\n", svg_path.c_str());
    return 0;
  }
  return 2;
}
