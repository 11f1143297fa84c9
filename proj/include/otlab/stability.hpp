#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "otlab/brenier.hpp"
#include "otlab/measure.hpp"

namespace otlab {

// Outcome of one inequality or identity check. For one-sided inequalities
// lhs <= rhs, slack = rhs - lhs and violated means slack < -1e-9*(1+|rhs|).
// Sandwich checks store the tighter one-sided slack; identity checks flag
// two-sided disagreement at their own stated tolerance. Components hold every
// intermediate needed to recompute lhs/rhs/slack.
struct StabilityReport {
  std::string check;
  std::int64_t trial = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool violated = false;
  std::vector<std::pair<std::string, double>> components;
  int d = 0;
  std::int64_t n = 0;
  std::int64_t m = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;

  double component(const std::string& name) const;
};

// Main stability inequality. Q is built internally as the pushforward of P
// under the model map, so the model is the exact optimal map from P to Q.
// With pihat optimal between Phat and Qhat:
//   (1/beta) E_pihat |Y - T(X)|^2
//     <= (1/alpha) W2^2(Qhat,Q) + beta W2^2(Phat,P) + 2 W2(Phat,P) W2(Qhat,Q).
// Components also carry the half-constant variant of both sides, which the
// proof suggests but the displayed bound does not assert; it is recorded,
// not enforced.
StabilityReport check_theorem3(const BrenierModel& model,
                               const DiscreteMeasure& P,
                               const DiscreteMeasure& Phat,
                               const DiscreteMeasure& Qhat);

// One-sample variants: corollary1 pins the source to the truth (only Q is
// perturbed); corollary2 pins the target (only P is perturbed; its bound has
// no 1/alpha term).
StabilityReport check_corollary1(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Qhat);
StabilityReport check_corollary2(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Phat);

// Two-sample empirical variant: draws n source and m target samples from a
// finite sampler (and its pushforward), where both W2 terms are exactly
// computable. Continuous samplers are rejected.
StabilityReport check_corollary3(const BrenierModel& model,
                                 const Sampler& sampler_P, std::int64_t n,
                                 std::int64_t m);

// Plan stability lower bound: W2^2 between the empirical plan and the true
// graph coupling, as measures on R^{2d}, is at least the larger marginal
// perturbation. The unspecified upper constant is only logged as the ratio
// W2^2(pihat, pi0) / (W2^2(Phat,P) + W2^2(Qhat,Q)).
StabilityReport check_corollary4(const BrenierModel& model,
                                 const DiscreteMeasure& P,
                                 const DiscreteMeasure& Phat,
                                 const DiscreteMeasure& Qhat);

// Quadratic growth sandwich of the semidual objective around its minimizer:
// with Qt = psi.map # P and D = E_P |psi.map - model.map|^2,
//   D/(2 beta) <= S(model; P, Qt) - E<x, psi.map(x)> <= D/(2 alpha).
StabilityReport check_quadratic_growth(const BrenierModel& model,
                                       const DiscreteMeasure& P,
                                       const BrenierModel& psi);

// Identity: the semidual suboptimality gap of the model potential equals the
// plan-integrated Bregman divergence of its conjugate. Checked to
// 1e-8*(1+|gap|), two-sided.
StabilityReport check_lemma1(const BrenierModel& model,
                             const DiscreteMeasure& Phat,
                             const DiscreteMeasure& Qhat);

}  // namespace otlab
