#include "otlab/stability.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "otlab/errors.hpp"
#include "otlab/rng.hpp"
#include "otlab/solver.hpp"

namespace otlab {
namespace {

constexpr double kRelTol = 1e-9;

bool inequality_violated(double slack, double rhs) {
  return slack < -kRelTol * (1.0 + std::abs(rhs));
}

// sum_ij mass_ij |y_j - T(x_i)|^2 with compensated accumulation.
double transported_error(const BrenierModel& model, const Coupling& plan) {
  const DiscreteMeasure& src = plan.source();
  const DiscreteMeasure& tgt = plan.target();
  double sum = 0.0, comp = 0.0;
  for (const CouplingEntry& e : plan.entries()) {
    const double term =
        e.mass * (tgt.point(e.j) - model.map(src.point(e.i))).squaredNorm();
    const double t = sum + term;
    if (std::abs(sum) >= std::abs(term)) {
      comp += (sum - t) + term;
    } else {
      comp += (term - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

void fill_meta(StabilityReport& r, const BrenierModel& model,
               const DiscreteMeasure& a, const DiscreteMeasure& b) {
  r.d = static_cast<int>(a.dim());
  r.n = a.size();
  r.m = b.size();
  r.alpha = model.alpha();
  r.beta = model.beta();
}

}  // namespace

double StabilityReport::component(const std::string& name) const {
  for (const auto& kv : components) {
    if (kv.first == name) return kv.second;
  }
  throw std::out_of_range("no component named " + name);
}

StabilityReport check_theorem3(const BrenierModel& model,
                               const DiscreteMeasure& P,
                               const DiscreteMeasure& Phat,
                               const DiscreteMeasure& Qhat) {
  const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
  const Coupling pihat = solve_kantorovich(Phat, Qhat);
  const double err = transported_error(model, pihat);
  const double w2p = w2(Phat, P);
  const double w2q = w2(Qhat, Q);
  const double alpha = model.alpha();
  const double beta = model.beta();

  StabilityReport r;
  r.check = "theorem3";
  r.lhs = err / beta;
  r.rhs = w2q * w2q / alpha + beta * w2p * w2p + 2.0 * w2p * w2q;
  r.slack = r.rhs - r.lhs;
  r.violated = inequality_violated(r.slack, r.rhs);

  const double gap = semidual_gap(model, pihat);
  const double tight_lhs = err / (2.0 * beta);
  const double tight_rhs =
      w2q * w2q / (2.0 * alpha) + 0.5 * beta * w2p * w2p + w2p * w2q;
  r.components = {
      {"transport_error", err},
      {"w2_p", w2p},
      {"w2_q", w2q},
      {"semidual_gap", gap},
      {"tight_lhs", tight_lhs},
      {"tight_rhs", tight_rhs},
      {"tight_slack", tight_rhs - tight_lhs},
  };
  fill_meta(r, model, Phat, Qhat);
  return r;
}

StabilityReport check_corollary1(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Qhat) {
  const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
  const Coupling pihat = solve_kantorovich(P, Qhat);
  const double err = transported_error(model, pihat);
  const double w2q = w2(Qhat, Q);
  const double alpha = model.alpha();
  const double beta = model.beta();

  StabilityReport r;
  r.check = "corollary1";
  r.lhs = err / beta;
  r.rhs = w2q * w2q / alpha;
  r.slack = r.rhs - r.lhs;
  r.violated = inequality_violated(r.slack, r.rhs);
  r.components = {
      {"transport_error", err},
      {"w2_q", w2q},
      {"tight_lhs", err / (2.0 * beta)},
      {"tight_rhs", w2q * w2q / (2.0 * alpha)},
  };
  fill_meta(r, model, P, Qhat);
  return r;
}

StabilityReport check_corollary2(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Phat) {
  const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
  const Coupling pihat = solve_kantorovich(Phat, Q);
  const double err = transported_error(model, pihat);
  const double w2p = w2(Phat, P);
  const double beta = model.beta();

  StabilityReport r;
  r.check = "corollary2";
  r.lhs = err / beta;
  r.rhs = beta * w2p * w2p;
  r.slack = r.rhs - r.lhs;
  r.violated = inequality_violated(r.slack, r.rhs);
  r.components = {
      {"transport_error", err},
      {"w2_p", w2p},
      {"tight_lhs", err / (2.0 * beta)},
      {"tight_rhs", 0.5 * beta * w2p * w2p},
  };
  fill_meta(r, model, Phat, Q);
  return r;
}

StabilityReport check_corollary3(const BrenierModel& model,
                                 const Sampler& sampler_P, std::int64_t n,
                                 std::int64_t m) {
  if (!sampler_P.finite()) {
    throw ConfigError(
        "two-sample check needs a finite source law; exact W2 against a "
        "continuous population is unsupported");
  }
  if (sampler_P.atoms().size() < 50) {
    throw ConfigError("two-sample check needs a source with at least 50 atoms");
  }
  if (n < 1 || m < 1) throw ConfigError("sample sizes must be positive");
  const DiscreteMeasure& P = sampler_P.atoms();
  const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
  const std::uint64_t seed = sampler_P.seed();

  const DiscreteMeasure Pn = sample(sampler_P.with_seed(derive_seed(seed, 1)), n);
  const Sampler sampler_Q =
      Sampler::pushforward(sampler_P.with_seed(derive_seed(seed, 2)),
                           model.map_fn(), P.dim());
  const DiscreteMeasure Qm = sample(sampler_Q, m);

  const Coupling pihat = solve_kantorovich(Pn, Qm);
  const double err = transported_error(model, pihat);
  const double w2p = w2(Pn, P);
  const double w2q = w2(Qm, Q);
  const double alpha = model.alpha();
  const double beta = model.beta();

  StabilityReport r;
  r.check = "corollary3";
  r.lhs = err / beta;
  r.rhs = w2q * w2q / alpha + beta * w2p * w2p + 2.0 * w2p * w2q;
  r.slack = r.rhs - r.lhs;
  r.violated = inequality_violated(r.slack, r.rhs);
  r.components = {
      {"transport_error", err},
      {"w2_p", w2p},
      {"w2_q", w2q},
      {"tight_lhs", err / (2.0 * beta)},
      {"tight_rhs",
       w2q * w2q / (2.0 * alpha) + 0.5 * beta * w2p * w2p + w2p * w2q},
  };
  fill_meta(r, model, Pn, Qm);
  r.seed = seed;
  return r;
}

StabilityReport check_corollary4(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Phat,
                                 const DiscreteMeasure& Qhat) {
  const DiscreteMeasure Q = pushforward_measure(P, model.map_fn());
  const Coupling pihat = solve_kantorovich(Phat, Qhat);
  const Coupling pi0 = graph_coupling(P, model.map_fn());

  const DiscreteMeasure plan_hat = coupling_as_measure(pihat);
  const DiscreteMeasure plan_0 = coupling_as_measure(pi0);
  const double w2sq_plans = solve_kantorovich(plan_hat, plan_0).cost();

  const double w2sq_p = solve_kantorovich(Phat, P).cost();
  const double w2sq_q = solve_kantorovich(Qhat, Q).cost();
  const double denom = w2sq_p + w2sq_q;

  StabilityReport r;
  r.check = "corollary4";
  r.lhs = std::max(w2sq_p, w2sq_q);
  r.rhs = w2sq_plans;
  r.slack = r.rhs - r.lhs;
  r.violated = inequality_violated(r.slack, r.rhs);
  r.components = {
      {"w2sq_p", w2sq_p},
      {"w2sq_q", w2sq_q},
      {"w2sq_plans", w2sq_plans},
      {"ratio", denom > 0.0 ? w2sq_plans / denom : 0.0},
  };
  fill_meta(r, model, Phat, Qhat);
  return r;
}

StabilityReport check_quadratic_growth(const BrenierModel& model,
                                       const DiscreteMeasure& P,
                                       const BrenierModel& psi) {
  const DiscreteMeasure Qt = pushforward_measure(P, psi.map_fn());
  const Coupling graph = graph_coupling(P, psi.map_fn());
  const double gap =
      semidual_value(model, P, Qt) - coupling_correlation(graph);

  double dsq = 0.0, comp = 0.0;
  for (std::int64_t i = 0; i < P.size(); ++i) {
    const Eigen::VectorXd x = P.point(i);
    const double term =
        P.weights()(i) * (psi.map(x) - model.map(x)).squaredNorm();
    const double t = dsq + term;
    if (std::abs(dsq) >= std::abs(term)) {
      comp += (dsq - t) + term;
    } else {
      comp += (term - t) + dsq;
    }
    dsq = t;
  }
  dsq += comp;

  const double lower = dsq / (2.0 * model.beta());
  const double upper = dsq / (2.0 * model.alpha());

  StabilityReport r;
  r.check = "quadratic_growth";
  r.lhs = lower;
  r.rhs = upper;
  // Sandwich: report the binding side's slack; negative only if either side
  // fails.
  r.slack = std::min(gap - lower, upper - gap);
  const double scale = std::max(std::abs(lower), std::abs(upper));
  r.violated = r.slack < -kRelTol * (1.0 + scale);
  r.components = {
      {"semidual_gap", gap},
      {"map_delta_sq", dsq},
      {"lower", lower},
      {"upper", upper},
  };
  fill_meta(r, model, P, Qt);
  return r;
}

StabilityReport check_lemma1(const BrenierModel& model,
                             const DiscreteMeasure& Phat,
                             const DiscreteMeasure& Qhat) {
  const Coupling pihat = solve_kantorovich(Phat, Qhat);
  const double gap_direct = semidual_gap(model, pihat);

  double gap_breg = 0.0, comp = 0.0;
  for (const CouplingEntry& e : pihat.entries()) {
    const double term =
        e.mass * bregman_divergence(model, Qhat.point(e.j), Phat.point(e.i));
    const double t = gap_breg + term;
    if (std::abs(gap_breg) >= std::abs(term)) {
      comp += (gap_breg - t) + term;
    } else {
      comp += (term - t) + gap_breg;
    }
    gap_breg = t;
  }
  gap_breg += comp;

  StabilityReport r;
  r.check = "lemma1";
  r.lhs = gap_direct;
  r.rhs = gap_breg;
  r.slack = gap_breg - gap_direct;
  r.violated =
      std::abs(gap_direct - gap_breg) > 1e-8 * (1.0 + std::abs(gap_direct));
  r.components = {
      {"gap_direct", gap_direct},
      {"gap_bregman", gap_breg},
      {"discrepancy", std::abs(gap_direct - gap_breg)},
  };
  fill_meta(r, model, Phat, Qhat);
  return r;
}

}  // namespace otlab
