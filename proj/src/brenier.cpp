#include "otlab/brenier.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "otlab/errors.hpp"

namespace otlab {

namespace {

double log_cosh(double t) {
  double a = std::abs(t);
  return a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453094172321215;
}

// Symmetric positive (semi)definite square root via eigendecomposition.
Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& s, double floor_eig,
                         const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success)
    throw NumericError(std::string(what) + ": eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= floor_eig)
    throw ConfigError(std::string(what) + " must be positive definite");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

struct BrenierModel::Impl {
  Kind kind;
  int dim;
  double alpha, beta;
  // affine
  Eigen::MatrixXd A, A_inv;
  Eigen::VectorXd b;
  // separable
  std::vector<SeparableProfile> profiles;

  double fprime(int k, double t) const {
    const auto& p = profiles[static_cast<std::size_t>(k)];
    return p.a * t + p.c * std::tanh(t);
  }
  double fsecond(int k, double t) const {
    const auto& p = profiles[static_cast<std::size_t>(k)];
    double s = 1.0 / std::cosh(t);
    return p.a + p.c * s * s;
  }
  double fvalue(int k, double t) const {
    const auto& p = profiles[static_cast<std::size_t>(k)];
    return 0.5 * p.a * t * t + p.c * log_cosh(t);
  }

  // Solve f_k'(t) = y. f' is strictly increasing with slope in
  // [a, a + c], so t is bracketed by y/(a + c) and y/a.
  double invert(int k, double y) const {
    const auto& p = profiles[static_cast<std::size_t>(k)];
    double lo = y / (p.a + p.c), hi = y / p.a;
    if (lo > hi) std::swap(lo, hi);
    double step = 1.0 + std::abs(y) / p.a;
    for (int guard = 0; fprime(k, lo) > y && guard < 64; ++guard) {
      lo -= step;
      step *= 2.0;
    }
    step = 1.0 + std::abs(y) / p.a;
    for (int guard = 0; fprime(k, hi) < y && guard < 64; ++guard) {
      hi += step;
      step *= 2.0;
    }
    for (int it = 0; it < 80; ++it) {
      double mid = 0.5 * (lo + hi);
      if (fprime(k, mid) < y)
        lo = mid;
      else
        hi = mid;
    }
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 5; ++it) {
      double g = fprime(k, t) - y;
      t -= g / fsecond(k, t);
      t = std::clamp(t, lo - 1.0, hi + 1.0);
    }
    if (std::abs(fprime(k, t) - y) > 1e-12 * (1.0 + std::abs(y)))
      throw NumericError("coordinate inverse did not converge");
    return t;
  }
};

BrenierModel BrenierModel::affine(Eigen::MatrixXd A, Eigen::VectorXd b) {
  if (A.rows() < 1 || A.rows() != A.cols() || b.size() != A.rows())
    throw ConfigError("affine model needs square A matching b");
  if (!A.allFinite() || !b.allFinite())
    throw ConfigError("affine model has non-finite parameters");
  double scale = A.cwiseAbs().maxCoeff();
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + scale))
    throw ConfigError("affine model matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success)
    throw NumericError("affine model eigendecomposition failed");
  double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo <= 1e-12)
    throw ConfigError("affine model matrix must be positive definite");
  auto impl = std::make_shared<Impl>();
  impl->kind = Kind::affine;
  impl->dim = static_cast<int>(A.rows());
  impl->alpha = lo;
  impl->beta = hi;
  impl->A_inv = es.eigenvectors() *
                es.eigenvalues().cwiseInverse().asDiagonal() *
                es.eigenvectors().transpose();
  impl->A = std::move(A);
  impl->b = std::move(b);
  BrenierModel m;
  m.impl_ = std::move(impl);
  return m;
}

BrenierModel BrenierModel::separable(std::vector<SeparableProfile> profiles) {
  if (profiles.empty())
    throw ConfigError("separable model needs at least one coordinate");
  double alpha = std::numeric_limits<double>::infinity(), beta = 0.0;
  for (const auto& p : profiles) {
    if (!std::isfinite(p.a) || !std::isfinite(p.c) || p.a <= 0.0 || p.c < 0.0)
      throw ConfigError("separable profile needs a > 0 and c >= 0");
    alpha = std::min(alpha, p.a);
    beta = std::max(beta, p.a + p.c);
  }
  auto impl = std::make_shared<Impl>();
  impl->kind = Kind::separable;
  impl->dim = static_cast<int>(profiles.size());
  impl->alpha = alpha;
  impl->beta = beta;
  impl->profiles = std::move(profiles);
  BrenierModel m;
  m.impl_ = std::move(impl);
  return m;
}

BrenierModel::Kind BrenierModel::kind() const { return impl_->kind; }
int BrenierModel::dim() const { return impl_->dim; }
double BrenierModel::alpha() const { return impl_->alpha; }
double BrenierModel::beta() const { return impl_->beta; }

double BrenierModel::potential(const Eigen::VectorXd& x) const {
  if (x.size() != impl_->dim) throw ConfigError("potential: wrong dimension");
  if (impl_->kind == Kind::affine)
    return 0.5 * x.dot(impl_->A * x) + impl_->b.dot(x);
  double s = 0.0;
  for (int k = 0; k < impl_->dim; ++k) s += impl_->fvalue(k, x[k]);
  return s;
}

Eigen::VectorXd BrenierModel::map(const Eigen::VectorXd& x) const {
  if (x.size() != impl_->dim) throw ConfigError("map: wrong dimension");
  if (impl_->kind == Kind::affine) return impl_->A * x + impl_->b;
  Eigen::VectorXd y(impl_->dim);
  for (int k = 0; k < impl_->dim; ++k) y[k] = impl_->fprime(k, x[k]);
  return y;
}

double BrenierModel::conjugate(const Eigen::VectorXd& y) const {
  if (y.size() != impl_->dim) throw ConfigError("conjugate: wrong dimension");
  if (impl_->kind == Kind::affine) {
    Eigen::VectorXd z = y - impl_->b;
    return 0.5 * z.dot(impl_->A_inv * z);
  }
  double s = 0.0;
  for (int k = 0; k < impl_->dim; ++k) {
    double t = impl_->invert(k, y[k]);
    s += t * y[k] - impl_->fvalue(k, t);
  }
  return s;
}

Eigen::VectorXd BrenierModel::inverse_map(const Eigen::VectorXd& y) const {
  if (y.size() != impl_->dim)
    throw ConfigError("inverse_map: wrong dimension");
  if (impl_->kind == Kind::affine) return impl_->A_inv * (y - impl_->b);
  Eigen::VectorXd x(impl_->dim);
  for (int k = 0; k < impl_->dim; ++k) x[k] = impl_->invert(k, y[k]);
  return x;
}

const Eigen::MatrixXd& BrenierModel::A() const {
  if (impl_->kind != Kind::affine) throw ConfigError("A(): not affine");
  return impl_->A;
}
const Eigen::VectorXd& BrenierModel::b() const {
  if (impl_->kind != Kind::affine) throw ConfigError("b(): not affine");
  return impl_->b;
}
const std::vector<SeparableProfile>& BrenierModel::profiles() const {
  if (impl_->kind != Kind::separable)
    throw ConfigError("profiles(): not separable");
  return impl_->profiles;
}

MapFn BrenierModel::map_fn() const {
  BrenierModel self = *this;
  return [self](const Eigen::VectorXd& x) { return self.map(x); };
}

MapFn BrenierModel::inverse_map_fn() const {
  BrenierModel self = *this;
  return [self](const Eigen::VectorXd& y) { return self.inverse_map(y); };
}

GaussianPair gaussian_pair_model(const Eigen::VectorXd& mean1,
                                 const Eigen::MatrixXd& cov1,
                                 const Eigen::VectorXd& mean2,
                                 const Eigen::MatrixXd& cov2,
                                 std::uint64_t seed_source,
                                 std::uint64_t seed_target) {
  Sampler source = Sampler::gaussian(mean1, cov1, seed_source);
  Sampler target = Sampler::gaussian(mean2, cov2, seed_target);

  Eigen::MatrixXd s1_half = spd_sqrt(cov1, 1e-12, "source covariance");
  Eigen::MatrixXd inner = s1_half * cov2 * s1_half;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::MatrixXd inner_half = spd_sqrt(inner, 0.0, "covariance product");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(cov1);
  Eigen::MatrixXd s1_inv_half = es1.eigenvectors() *
                                es1.eigenvalues().cwiseSqrt().cwiseInverse()
                                    .asDiagonal() *
                                es1.eigenvectors().transpose();
  Eigen::MatrixXd A = s1_inv_half * inner_half * s1_inv_half;
  A = 0.5 * (A + A.transpose());
  Eigen::VectorXd b = mean2 - A * mean1;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(cov2);
  double lo = std::sqrt(es2.eigenvalues().minCoeff() /
                        es1.eigenvalues().maxCoeff());
  double hi = std::sqrt(es2.eigenvalues().maxCoeff() /
                        es1.eigenvalues().minCoeff());
  return GaussianPair{BrenierModel::affine(std::move(A), std::move(b)),
                      std::move(source), std::move(target), lo, hi};
}

double bregman_divergence(const BrenierModel& model, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& x) {
  Eigen::VectorXd tx = model.map(x);
  return model.conjugate(y) - model.conjugate(tx) - x.dot(y - tx);
}

double semidual_value(const BrenierModel& model, const DiscreteMeasure& p,
                      const DiscreteMeasure& q) {
  if (p.dim() != model.dim() || q.dim() != model.dim())
    throw ConfigError("semidual_value: dimension mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < p.size(); ++i)
    s += p.weights()[i] * model.potential(p.point(i));
  for (std::int64_t j = 0; j < q.size(); ++j)
    s += q.weights()[j] * model.conjugate(q.point(j));
  return s;
}

double semidual_gap(const BrenierModel& model, const Coupling& coupling) {
  return semidual_value(model, coupling.source(), coupling.target()) -
         coupling_correlation(coupling);
}

}  // namespace otlab
