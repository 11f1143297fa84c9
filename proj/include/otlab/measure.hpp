#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "otlab/errors.hpp"

namespace otlab {

// Points are rows, so point i is contiguous in memory.
using PointMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MapFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Finitely supported probability measure: n points in R^d with nonnegative
// weights. The constructor rejects empty support, non-finite values, negative
// weights, and weight sums farther than 1e-9 from 1; anything closer is
// renormalized so downstream code can rely on an exact unit sum.
class DiscreteMeasure {
 public:
  DiscreteMeasure(PointMatrix points, Eigen::VectorXd weights);

  static DiscreteMeasure uniform(PointMatrix points);

  std::int64_t size() const { return points_.rows(); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const PointMatrix& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::VectorXd point(std::int64_t i) const {
    return points_.row(i).transpose();
  }

 private:
  PointMatrix points_;
  Eigen::VectorXd weights_;
};

// (sum_i w_i |x_i|^r)^(1/r) for r >= 1, Euclidean norm.
double moment(const DiscreteMeasure& mu, double r);

// Image measure: weights stay put, points move through the map.
DiscreteMeasure pushforward_measure(const DiscreteMeasure& mu,
                                    const MapFn& map);

// Distribution plus a seed. Sampling is pure: the same sampler and count
// always produce the same points, and a prefix of a longer draw matches a
// shorter one.
class Sampler {
 public:
  enum class Kind { gaussian, uniform_box, finite, pushforward };

  static Sampler gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov,
                          std::uint64_t seed);
  static Sampler uniform_box(Eigen::VectorXd lo, Eigen::VectorXd hi,
                             std::uint64_t seed);
  static Sampler finite(DiscreteMeasure atoms, std::uint64_t seed);
  // Draws from base, then applies map. dim is the map's output dimension.
  static Sampler pushforward(Sampler base, MapFn map, int out_dim);

  Kind kind() const { return kind_; }
  bool finite() const { return kind_ == Kind::finite; }
  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  // Same distribution, fresh stream.
  Sampler with_seed(std::uint64_t seed) const;

  // Only meaningful for the matching kind; throws otherwise.
  const DiscreteMeasure& atoms() const;
  const Eigen::VectorXd& mean() const;
  const Eigen::MatrixXd& cov() const;

  friend DiscreteMeasure sample(const Sampler& s, std::int64_t n);

 private:
  Sampler() = default;

  struct Payload;
  Kind kind_ = Kind::gaussian;
  int dim_ = 0;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const Payload> payload_;
};

// n i.i.d. draws as a uniformly weighted empirical measure.
DiscreteMeasure sample(const Sampler& s, std::int64_t n);

}  // namespace otlab
