#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "otlab/measure.hpp"
#include "otlab/solver.hpp"

namespace otlab {

// One coordinate of a separable potential: f(t) = a t^2 / 2 + c log cosh t,
// so f'(t) = a t + c tanh t, with curvature between a and a + c.
struct SeparableProfile {
  double a;
  double c;
};

// Ground-truth convex potential phi with gradient map T = grad phi, known in
// closed form. Curvature is pinned between alpha (strong convexity) and beta
// (gradient Lipschitz constant), which is what every bound downstream keys on.
class BrenierModel {
 public:
  enum class Kind { affine, separable };

  // phi(x) = x'Ax/2 + b'x, T(x) = Ax + b, A symmetric positive definite.
  static BrenierModel affine(Eigen::MatrixXd A, Eigen::VectorXd b);
  // phi(x) = sum_k f_k(x_k) with per-coordinate profiles.
  static BrenierModel separable(std::vector<SeparableProfile> profiles);

  Kind kind() const;
  int dim() const;
  double alpha() const;
  double beta() const;

  double potential(const Eigen::VectorXd& x) const;
  Eigen::VectorXd map(const Eigen::VectorXd& x) const;
  // Legendre conjugate phi*(y); for separable models the per-coordinate
  // inverse is found by bisection plus Newton polish to 1e-12.
  double conjugate(const Eigen::VectorXd& y) const;
  Eigen::VectorXd inverse_map(const Eigen::VectorXd& y) const;

  const Eigen::MatrixXd& A() const;          // affine only
  const Eigen::VectorXd& b() const;          // affine only
  const std::vector<SeparableProfile>& profiles() const;  // separable only

  MapFn map_fn() const;
  MapFn inverse_map_fn() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// Model plus matched gaussian samplers: source N(mean1, cov1), target
// N(mean2, cov2), and the affine map pushing the first to the second.
// caffarelli_lo/hi are the curvature bounds implied by the two covariances;
// the model's own alpha/beta always sit inside them.
struct GaussianPair {
  BrenierModel model;
  Sampler source;
  Sampler target;
  double caffarelli_lo;
  double caffarelli_hi;
};

GaussianPair gaussian_pair_model(const Eigen::VectorXd& mean1,
                                 const Eigen::MatrixXd& cov1,
                                 const Eigen::VectorXd& mean2,
                                 const Eigen::MatrixXd& cov2,
                                 std::uint64_t seed_source,
                                 std::uint64_t seed_target);

// phi*(y) - phi*(T(x)) - <x, y - T(x)>: how far y is from T(x), measured in
// the conjugate's own geometry. Nonnegative, zero iff y = T(x).
double bregman_divergence(const BrenierModel& model, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& x);

// S(phi; P, Q) = int phi dP + int phi* dQ.
double semidual_value(const BrenierModel& model, const DiscreteMeasure& p,
                      const DiscreteMeasure& q);

// S(phi; P, Q) minus the coupling's correlation sum_ij mass <x, y>, where
// (P, Q) are the coupling's marginals. Nonnegative for any feasible coupling;
// for an optimal coupling it is the suboptimality of phi in the semidual.
double semidual_gap(const BrenierModel& model, const Coupling& coupling);

}  // namespace otlab
