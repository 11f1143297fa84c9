// Acceptance gate. Each criterion prints exactly one PASS/FAIL line; the
// process exits nonzero if any selected criterion fails. Criterion numbers
// are given on the command line; with no arguments all eight run.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otlab/brenier.hpp"
#include "otlab/errors.hpp"
#include "otlab/experiments.hpp"
#include "otlab/io.hpp"
#include "otlab/measure.hpp"
#include "otlab/otlab.h"
#include "otlab/rng.hpp"
#include "otlab/solver.hpp"
#include "otlab/stability.hpp"

using namespace otlab;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "otlab_acceptance" / tag;
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

DiscreteMeasure random_uniform(Rng& rng, std::int64_t n, int d,
                               double spread = 2.0) {
  PointMatrix p(n, d);
  for (std::int64_t i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) p(i, k) = spread * rng.normal();
  return DiscreteMeasure::uniform(std::move(p));
}

DiscreteMeasure jitter(Rng& rng, const DiscreteMeasure& mu, double scale) {
  PointMatrix p = mu.points();
  for (std::int64_t i = 0; i < p.rows(); ++i)
    for (std::int64_t k = 0; k < p.cols(); ++k) p(i, k) += scale * rng.normal();
  return DiscreteMeasure(std::move(p), mu.weights());
}

BrenierModel random_affine(Rng& rng, int d) {
  Eigen::MatrixXd M(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) M(i, j) = rng.normal();
  Eigen::MatrixXd A = M * M.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b(d);
  for (int i = 0; i < d; ++i) b[i] = rng.normal();
  return BrenierModel::affine(A, b);
}

BrenierModel random_separable(Rng& rng, int d) {
  std::vector<SeparableProfile> profs(d);
  for (auto& p : profs) {
    p.a = rng.uniform(0.3, 2.5);
    p.c = rng.uniform(0.0, 1.5);
  }
  return BrenierModel::separable(profs);
}

BrenierModel random_model(Rng& rng, int d) {
  return rng.below(2) == 0 ? random_affine(rng, d) : random_separable(rng, d);
}

double pair_dist2(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                  std::int64_t i, std::int64_t j) {
  return (mu.points().row(i) - nu.points().row(j)).squaredNorm();
}

// 1. Solver exactness against the permutation oracle, with certificates.
Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC0001);
  std::int64_t bad_cost = 0, bad_marginal = 0, bad_dual = 0;
  for (int t = 0; t < 200; ++t) {
    const std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(6));
    const int d = 1 + static_cast<int>(rng.below(3));
    DiscreteMeasure mu = random_uniform(rng, n, d);
    DiscreteMeasure nu = random_uniform(rng, n, d);
    Coupling fast = solve_kantorovich(mu, nu);
    Coupling oracle = brute_force_assignment(mu, nu);

    if (std::abs(fast.cost() - oracle.cost()) > 1e-9 * (1.0 + fast.cost()))
      ++bad_cost;

    Eigen::VectorXd rm = fast.row_marginals(), cm = fast.col_marginals();
    bool marg_ok = true;
    for (std::int64_t i = 0; i < n; ++i)
      marg_ok = marg_ok && std::abs(rm[i] - mu.weights()[i]) <= 1e-9 &&
                std::abs(cm[i] - nu.weights()[i]) <= 1e-9;
    if (!marg_ok) ++bad_marginal;

    bool dual_ok = fast.has_duals();
    double dual_value = 0.0;
    for (std::int64_t i = 0; dual_ok && i < n; ++i) {
      dual_value += mu.weights()[i] * fast.dual_f()[i] +
                    nu.weights()[i] * fast.dual_g()[i];
      for (std::int64_t j = 0; j < n; ++j) {
        const double cij = pair_dist2(mu, nu, i, j);
        dual_ok = dual_ok &&
                  fast.dual_f()[i] + fast.dual_g()[j] <= cij + 1e-7 * (1.0 + cij);
      }
    }
    dual_ok = dual_ok &&
              std::abs(fast.cost() - dual_value) <= 1e-7 * (1.0 + fast.cost());
    if (!dual_ok) ++bad_dual;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = bad_cost == 0 && bad_marginal == 0 && bad_dual == 0 && secs < 10.0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "solver exactness: 200 instances, oracle mismatches %lld, "
                "marginal failures %lld, certificate failures %lld (%.1fs, "
                "budget 10s)",
                static_cast<long long>(bad_cost),
                static_cast<long long>(bad_marginal),
                static_cast<long long>(bad_dual), secs);
  o.detail = buf;
  return o;
}

// 2. Semidual gap equals plan-integrated Bregman divergence.
Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC0002);
  std::int64_t violations = 0;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    BrenierModel model = random_model(rng, d);
    DiscreteMeasure Phat =
        random_uniform(rng, 3 + static_cast<std::int64_t>(rng.below(7)), d);
    DiscreteMeasure Qhat =
        random_uniform(rng, 3 + static_cast<std::int64_t>(rng.below(7)), d);
    StabilityReport r = check_lemma1(model, Phat, Qhat);
    const double gap = r.component("gap_direct");
    const double disc = r.component("discrepancy");
    worst = std::max(worst, disc / (1.0 + std::abs(gap)));
    if (disc > 1e-8 * (1.0 + std::abs(gap)) || r.violated) ++violations;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = violations == 0 && secs < 30.0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "semidual-gap identity: 1000 instances, violations %lld, "
                "worst relative discrepancy %.2e (%.1fs, budget 30s)",
                static_cast<long long>(violations), worst, secs);
  o.detail = buf;
  return o;
}

// 3. Main bound plus its three corollaries, and the tight 1-d witness.
Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC0003);
  std::int64_t v_main = 0, v_one_q = 0, v_one_p = 0, v_two = 0;
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    BrenierModel model = random_model(rng, d);
    DiscreteMeasure P =
        random_uniform(rng, 4 + static_cast<std::int64_t>(rng.below(9)), d);
    DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
    DiscreteMeasure Phat = jitter(rng, P, rng.uniform(0.0, 0.5));
    DiscreteMeasure Qhat = jitter(rng, Q, rng.uniform(0.0, 0.5));
    if (check_theorem3(model, P, Phat, Qhat).violated) ++v_main;
    if (check_corollary1(model, P, Qhat).violated) ++v_one_q;
    if (check_corollary2(model, P, Phat).violated) ++v_one_p;
  }
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    BrenierModel model = random_model(rng, d);
    DiscreteMeasure truth = random_uniform(
        rng, 50 + static_cast<std::int64_t>(rng.below(31)), d);
    Sampler sampler =
        Sampler::finite(truth, derive_seed(0xACC0003, 1000 + t));
    const std::int64_t n = 5 + static_cast<std::int64_t>(rng.below(26));
    const std::int64_t m = 5 + static_cast<std::int64_t>(rng.below(26));
    if (check_corollary3(model, sampler, n, m).violated) ++v_two;
  }

  // Constructed tightness witness: T(x) = 2x on {-1, 1}, perturbed target
  // {-2, 3}. The one-sample bound holds with equality.
  Eigen::MatrixXd A(1, 1);
  A << 2.0;
  BrenierModel doubling = BrenierModel::affine(A, Eigen::VectorXd::Zero(1));
  PointMatrix px(2, 1), qx(2, 1);
  px << -1.0, 1.0;
  qx << -2.0, 3.0;
  StabilityReport witness =
      check_corollary1(doubling, DiscreteMeasure::uniform(px),
                       DiscreteMeasure::uniform(qx));
  const bool witness_tight = std::abs(witness.slack) <= 1e-12;

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = v_main == 0 && v_one_q == 0 && v_one_p == 0 && v_two == 0 &&
           witness_tight && secs < 120.0;
  char buf[320];
  std::snprintf(
      buf, sizeof buf,
      "stability bounds: 1000 trials each, violations main %lld / "
      "target-only %lld / source-only %lld / two-sample %lld, witness slack "
      "%.1e (%.1fs, budget 120s)",
      static_cast<long long>(v_main), static_cast<long long>(v_one_q),
      static_cast<long long>(v_one_p), static_cast<long long>(v_two),
      witness.slack, secs);
  o.detail = buf;
  return o;
}

// 4. Plan-distance lower bound; the unknown upper constant is only logged.
Outcome criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC0004);
  std::int64_t violations = 0;
  double ratio_sum = 0.0, ratio_max = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    BrenierModel model = random_model(rng, d);
    DiscreteMeasure P =
        random_uniform(rng, 4 + static_cast<std::int64_t>(rng.below(7)), d);
    DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
    DiscreteMeasure Phat = jitter(rng, P, rng.uniform(0.02, 0.4));
    DiscreteMeasure Qhat = jitter(rng, Q, rng.uniform(0.02, 0.4));
    StabilityReport r = check_corollary4(model, P, Phat, Qhat);
    if (r.slack < -1e-9) ++violations;
    const double ratio = r.component("ratio");
    ratio_sum += ratio;
    ratio_max = std::max(ratio_max, ratio);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = violations == 0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "plan lower bound: 200 trials, violations %lld, ratio mean "
                "%.3f max %.3f (%.1fs)",
                static_cast<long long>(violations), ratio_sum / 200.0,
                ratio_max, secs);
  o.detail = buf;
  return o;
}

// 5. Quadratic growth sandwich of the semidual objective.
Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACC0005);
  std::int64_t violations = 0;
  for (int t = 0; t < 500; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    BrenierModel model = random_model(rng, d);
    BrenierModel psi = random_model(rng, d);
    DiscreteMeasure P =
        random_uniform(rng, 4 + static_cast<std::int64_t>(rng.below(9)), d);
    if (check_quadratic_growth(model, P, psi).violated) ++violations;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = violations == 0;
  char buf[192];
  std::snprintf(buf, sizeof buf,
                "growth sandwich: 500 pairs, violations %lld (%.1fs)",
                static_cast<long long>(violations), secs);
  o.detail = buf;
  return o;
}

Json rate_config(const std::string& kind, const std::string& tag) {
  Json j = Json::object();
  j["kind"] = kind;
  j["d"] = 6;
  j["sizes"] = Json::array({128, 256, 512, 1024, 2048, 4096});
  j["trials"] = 10;
  j["seed"] = 20260816;
  j["out_dir"] = temp_dir(tag);
  return j;
}

struct SlopeResult {
  double slope = 0.0;
  double halfwidth = 0.0;
};

SlopeResult run_rate(const std::string& kind, const std::string& tag) {
  ExperimentResult res =
      run_experiment(parse_experiment_config(rate_config(kind, tag)));
  SlopeResult s;
  s.slope = res.summary.at("slope").get<double>();
  s.halfwidth = res.summary.at("slope_halfwidth").get<double>();
  return s;
}

// 6. Empirical map risk decays like n^(-1/3) in d = 6.
Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  SlopeResult risk = run_rate("rate-risk", "c6_risk");
  const double secs = seconds_since(t0);
  const double err = std::abs(risk.slope - (-1.0 / 3.0));
  Outcome o;
  o.pass = err <= 0.12 && secs < 1200.0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "risk rate: slope %.4f +/- %.4f, target -1/3 within 0.12 "
                "(off by %.4f) (%.0fs, budget 1200s)",
                risk.slope, risk.halfwidth, err, secs);
  o.detail = buf;
  return o;
}

// 7. Moment-error scalings in the same design.
Outcome criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  SlopeResult e1 = run_rate("rate-e1", "c7_e1");
  SlopeResult e2 = run_rate("rate-e2", "c7_e2");
  SlopeResult e3 = run_rate("rate-e3", "c7_e3");
  const double secs = seconds_since(t0);
  const double err1 = std::abs(e1.slope - (-1.0 / 3.0));
  const double err2 = std::abs(e2.slope - (-1.0 / 3.0));
  const double err3 = std::abs(e3.slope - (-1.0));
  Outcome o;
  o.pass = err1 <= 0.15 && err2 <= 0.12 && err3 <= 0.2 && secs < 1200.0;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "moment rates: e1 slope %.4f (target -1/3 within 0.15), e2 "
                "slope %.4f (within 0.12), e3 slope %.4f (target -1 within "
                "0.2) (%.0fs, budget 1200s)",
                e1.slope, e2.slope, e3.slope, secs);
  o.detail = buf;
  return o;
}

// 8. Byte-identical reports across repeated runs, through the C boundary.
Outcome criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  Json j = Json::object();
  j["kind"] = "stability-suite";
  j["d"] = 2;
  j["trials"] = 25;
  j["trials_corollary4"] = 10;
  j["atoms"] = 8;
  j["seed"] = 20260816;
  j["out_dir"] = temp_dir("c8_suite");
  const std::string cfg = j.dump();

  Outcome o;
  char* summary1 = nullptr;
  otlab_status st1 =
      otlab_run_experiment(cfg.c_str(), nullptr, 0, &summary1);
  if (st1 != OTLAB_OK || summary1 == nullptr) {
    o.pass = false;
    o.detail = "determinism: first suite run failed with status " +
               std::to_string(static_cast<int>(st1));
    otlab_string_free(summary1);
    return o;
  }
  const std::string first(summary1);
  otlab_string_free(summary1);

  std::vector<std::string> paths;
  std::vector<std::string> bytes;
  const Json parsed = Json::parse(first);
  for (const auto& p : parsed.at("outputs")) {
    paths.push_back(p.get<std::string>());
    bytes.push_back(slurp(paths.back()));
  }

  char* summary2 = nullptr;
  otlab_status st2 =
      otlab_run_experiment(cfg.c_str(), nullptr, 0, &summary2);
  const std::string second = summary2 ? summary2 : "";
  otlab_string_free(summary2);

  std::size_t diff_files = 0;
  for (std::size_t k = 0; k < paths.size(); ++k)
    if (slurp(paths[k]) != bytes[k]) ++diff_files;

  const double secs = seconds_since(t0);
  o.pass = st2 == OTLAB_OK && second == first && diff_files == 0 &&
           !paths.empty();
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "determinism: summaries %s, %zu/%zu report files identical "
                "across reruns (%.1fs)",
                second == first ? "identical" : "DIFFER",
                paths.size() - diff_files, paths.size(), secs);
  o.detail = buf;
  return o;
}

Outcome run_criterion(int k) {
  switch (k) {
    case 1: return criterion1();
    case 2: return criterion2();
    case 3: return criterion3();
    case 4: return criterion4();
    case 5: return criterion5();
    case 6: return criterion6();
    case 7: return criterion7();
    case 8: return criterion8();
    default: {
      Outcome o;
      o.pass = false;
      o.detail = "unknown criterion";
      return o;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  int failures = 0;
  for (int k : selected) {
    Outcome o;
    try {
      o = run_criterion(k);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("unexpected exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d: %s  %s\n", k, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
