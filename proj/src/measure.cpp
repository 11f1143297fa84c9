#include "otlab/measure.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "otlab/rng.hpp"

namespace otlab {

namespace {

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(PointMatrix points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() < 1 || points_.cols() < 1)
    throw ConfigError("measure needs at least one point in dimension >= 1");
  if (weights_.size() != points_.rows())
    throw ConfigError("measure has " + std::to_string(points_.rows()) +
                      " points but " + std::to_string(weights_.size()) +
                      " weights");
  if (!all_finite(points_) || !all_finite(weights_))
    throw ConfigError("measure contains non-finite values");
  if ((weights_.array() < 0.0).any())
    throw ConfigError("measure has a negative weight");
  double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("measure weights sum to " + std::to_string(total) +
                      ", expected 1 within 1e-9");
  weights_ /= total;
  // Push the residual into the largest weight until the sum is exactly 1, so
  // normalization is idempotent and weights survive file round trips intact.
  for (int pass = 0; pass < 8; ++pass) {
    const double residual = 1.0 - weights_.sum();
    if (residual == 0.0) break;
    Eigen::Index imax = 0;
    weights_.maxCoeff(&imax);
    const double adjusted = weights_[imax] + residual;
    if (adjusted == weights_[imax] || adjusted < 0.0) break;
    weights_[imax] = adjusted;
  }
}

DiscreteMeasure DiscreteMeasure::uniform(PointMatrix points) {
  Eigen::VectorXd w =
      Eigen::VectorXd::Constant(points.rows(), 1.0 / points.rows());
  return DiscreteMeasure(std::move(points), std::move(w));
}

double moment(const DiscreteMeasure& mu, double r) {
  if (!(r >= 1.0)) throw ConfigError("moment order must be >= 1");
  double acc = 0.0;
  for (std::int64_t i = 0; i < mu.size(); ++i)
    acc += mu.weights()[i] * std::pow(mu.points().row(i).norm(), r);
  return std::pow(acc, 1.0 / r);
}

DiscreteMeasure pushforward_measure(const DiscreteMeasure& mu,
                                    const MapFn& map) {
  PointMatrix out;
  for (std::int64_t i = 0; i < mu.size(); ++i) {
    Eigen::VectorXd y = map(mu.point(i));
    if (i == 0) out.resize(mu.size(), y.size());
    if (y.size() != out.cols())
      throw ConfigError("map output dimension changed between points");
    out.row(i) = y.transpose();
  }
  return DiscreteMeasure(std::move(out), mu.weights());
}

struct Sampler::Payload {
  // gaussian
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd sqrt_cov;
  // uniform_box
  Eigen::VectorXd lo, hi;
  // finite
  std::shared_ptr<const DiscreteMeasure> atoms;
  std::vector<double> cdf;
  // pushforward
  std::shared_ptr<const Sampler> base;
  MapFn map;
};

Sampler Sampler::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov,
                          std::uint64_t seed) {
  if (mean.size() < 1) throw ConfigError("gaussian mean must have dim >= 1");
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw ConfigError("gaussian covariance shape does not match mean");
  if (!mean.allFinite() || !cov.allFinite())
    throw ConfigError("gaussian parameters contain non-finite values");
  double scale = cov.cwiseAbs().maxCoeff();
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + scale))
    throw ConfigError("gaussian covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw NumericError("covariance eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 1e-12)
    throw ConfigError("gaussian covariance must be positive definite");
  auto p = std::make_shared<Payload>();
  p->mean = std::move(mean);
  p->cov = std::move(cov);
  p->sqrt_cov = es.eigenvectors() *
                es.eigenvalues().cwiseSqrt().asDiagonal() *
                es.eigenvectors().transpose();
  Sampler s;
  s.kind_ = Kind::gaussian;
  s.dim_ = static_cast<int>(p->mean.size());
  s.seed_ = seed;
  s.payload_ = std::move(p);
  return s;
}

Sampler Sampler::uniform_box(Eigen::VectorXd lo, Eigen::VectorXd hi,
                             std::uint64_t seed) {
  if (lo.size() < 1 || lo.size() != hi.size())
    throw ConfigError("box bounds must be same nonzero dimension");
  if (!lo.allFinite() || !hi.allFinite())
    throw ConfigError("box bounds contain non-finite values");
  if (((hi - lo).array() <= 0.0).any())
    throw ConfigError("box must have lo < hi on every axis");
  auto p = std::make_shared<Payload>();
  p->lo = std::move(lo);
  p->hi = std::move(hi);
  Sampler s;
  s.kind_ = Kind::uniform_box;
  s.dim_ = static_cast<int>(p->lo.size());
  s.seed_ = seed;
  s.payload_ = std::move(p);
  return s;
}

Sampler Sampler::finite(DiscreteMeasure atoms, std::uint64_t seed) {
  auto p = std::make_shared<Payload>();
  p->cdf.resize(atoms.size());
  double run = 0.0;
  for (std::int64_t i = 0; i < atoms.size(); ++i) {
    run += atoms.weights()[i];
    p->cdf[static_cast<std::size_t>(i)] = run;
  }
  p->cdf.back() = 1.0;
  p->atoms = std::make_shared<const DiscreteMeasure>(std::move(atoms));
  Sampler s;
  s.kind_ = Kind::finite;
  s.dim_ = p->atoms->dim();
  s.seed_ = seed;
  s.payload_ = std::move(p);
  return s;
}

Sampler Sampler::pushforward(Sampler base, MapFn map, int out_dim) {
  if (out_dim < 1) throw ConfigError("pushforward output dim must be >= 1");
  if (!map) throw ConfigError("pushforward needs a map");
  auto p = std::make_shared<Payload>();
  std::uint64_t seed = base.seed();
  p->base = std::make_shared<const Sampler>(std::move(base));
  p->map = std::move(map);
  Sampler s;
  s.kind_ = Kind::pushforward;
  s.dim_ = out_dim;
  s.seed_ = seed;
  s.payload_ = std::move(p);
  return s;
}

Sampler Sampler::with_seed(std::uint64_t seed) const {
  Sampler s = *this;
  s.seed_ = seed;
  if (kind_ == Kind::pushforward) {
    auto p = std::make_shared<Payload>(*payload_);
    p->base = std::make_shared<const Sampler>(p->base->with_seed(seed));
    s.payload_ = std::move(p);
  }
  return s;
}

const DiscreteMeasure& Sampler::atoms() const {
  if (kind_ != Kind::finite)
    throw ConfigError("atoms() is only defined for finite samplers");
  return *payload_->atoms;
}

const Eigen::VectorXd& Sampler::mean() const {
  if (kind_ != Kind::gaussian)
    throw ConfigError("mean() is only defined for gaussian samplers");
  return payload_->mean;
}

const Eigen::MatrixXd& Sampler::cov() const {
  if (kind_ != Kind::gaussian)
    throw ConfigError("cov() is only defined for gaussian samplers");
  return payload_->cov;
}

DiscreteMeasure sample(const Sampler& s, std::int64_t n) {
  if (n < 1) throw ConfigError("sample size must be >= 1");
  const auto& p = *s.payload_;
  PointMatrix pts(n, s.dim_);
  switch (s.kind_) {
    case Sampler::Kind::gaussian: {
      Rng rng(s.seed_);
      Eigen::VectorXd z(s.dim_);
      for (std::int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < s.dim_; ++k) z[k] = rng.normal();
        pts.row(i) = (p.mean + p.sqrt_cov * z).transpose();
      }
      break;
    }
    case Sampler::Kind::uniform_box: {
      Rng rng(s.seed_);
      for (std::int64_t i = 0; i < n; ++i)
        for (int k = 0; k < s.dim_; ++k)
          pts(i, k) = rng.uniform(p.lo[k], p.hi[k]);
      break;
    }
    case Sampler::Kind::finite: {
      Rng rng(s.seed_);
      for (std::int64_t i = 0; i < n; ++i) {
        double u = rng.uniform();
        auto it = std::upper_bound(p.cdf.begin(), p.cdf.end(), u);
        std::int64_t idx = it == p.cdf.end()
                               ? static_cast<std::int64_t>(p.cdf.size()) - 1
                               : it - p.cdf.begin();
        pts.row(i) = p.atoms->points().row(idx);
      }
      break;
    }
    case Sampler::Kind::pushforward: {
      DiscreteMeasure base = sample(*p.base, n);
      for (std::int64_t i = 0; i < n; ++i) {
        Eigen::VectorXd y = p.map(base.point(i));
        if (y.size() != s.dim_)
          throw ConfigError("pushforward map returned wrong dimension");
        pts.row(i) = y.transpose();
      }
      break;
    }
  }
  return DiscreteMeasure::uniform(std::move(pts));
}

}  // namespace otlab
