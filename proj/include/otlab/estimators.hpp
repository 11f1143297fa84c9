#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "otlab/brenier.hpp"
#include "otlab/measure.hpp"
#include "otlab/solver.hpp"

namespace otlab {

// Exact nearest neighbor over a fixed point set. Ties go to the lowest
// original index, including through the pruning rule, so queries that land
// exactly between two points resolve the same way every time.
class KdTree {
 public:
  explicit KdTree(PointMatrix pts);

  struct Hit {
    std::int64_t index;
    double dist2;
  };
  Hit nearest(const double* q) const;
  Hit nearest(const Eigen::VectorXd& q) const { return nearest(q.data()); }

  std::int64_t size() const { return pts_.rows(); }
  int dim() const { return static_cast<int>(pts_.cols()); }
  const PointMatrix& points() const { return pts_; }

 private:
  struct Node {
    int axis;
    double split;
    std::int32_t left, right;   // children, -1 for leaf
    std::int32_t begin, end;    // leaf range into order_
  };
  void build(std::int32_t node, std::int32_t begin, std::int32_t end);
  void search(std::int32_t node, const double* q, Hit& best) const;

  PointMatrix pts_;
  std::vector<std::int32_t> order_;
  std::vector<Node> nodes_;
};

// A fitted transport map: something you can evaluate at query points and
// serialize. Cheap to copy.
class TransportMapEstimate {
 public:
  enum class Kind { one_nn, histogram, affine, exact_model };

  Kind kind() const;
  int dim() const;
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
  PointMatrix apply(const PointMatrix& xs) const;
  MapFn map_fn() const;

  // Introspection used by serialization and tests. Each accessor is valid
  // only for the matching kind.
  const PointMatrix& sample_points() const;   // one_nn
  const PointMatrix& barycenters() const;     // one_nn, histogram (per cell)
  const Eigen::VectorXd& box_lo() const;      // histogram
  const Eigen::VectorXd& box_hi() const;      // histogram
  int cells_per_axis() const;                 // histogram
  const Eigen::MatrixXd& A() const;           // affine
  const Eigen::VectorXd& b() const;           // affine
  const BrenierModel& model() const;          // exact_model

  friend TransportMapEstimate one_nn_estimator(const Coupling& plan);
  friend TransportMapEstimate histogram_plugin_estimator(
      const DiscreteMeasure& xs, const DiscreteMeasure& ys,
      int cells_per_axis, Eigen::VectorXd lo, Eigen::VectorXd hi);
  friend TransportMapEstimate histogram_from_table(Eigen::VectorXd lo,
                                                   Eigen::VectorXd hi,
                                                   int cells_per_axis,
                                                   PointMatrix barycenters);
  friend TransportMapEstimate one_nn_from_table(PointMatrix points,
                                                PointMatrix barycenters);
  friend TransportMapEstimate affine_estimate(Eigen::MatrixXd A,
                                              Eigen::VectorXd b);
  friend TransportMapEstimate exact_model_estimate(BrenierModel model);

 private:
  TransportMapEstimate() = default;
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// Barycentric projection of a plan, evaluated by nearest neighbor: atom i of
// the plan's source maps to the mass-weighted average of its target points,
// and a query goes to the barycenter of its nearest source atom.
TransportMapEstimate one_nn_estimator(const Coupling& plan);

// Histogram plugin: bin both samples into a shared cells_per_axis^d grid on
// [lo, hi], solve transport between the two cell-center measures, then send
// each query to the barycenter of its cell's plan row. Queries are clamped
// into the box; cells that hold no source mass borrow the barycenter of the
// nearest occupied cell (ties to the lower cell index).
TransportMapEstimate histogram_plugin_estimator(const DiscreteMeasure& xs,
                                                const DiscreteMeasure& ys,
                                                int cells_per_axis,
                                                Eigen::VectorXd lo,
                                                Eigen::VectorXd hi);

// Rebuild estimators from serialized tables.
TransportMapEstimate one_nn_from_table(PointMatrix points,
                                       PointMatrix barycenters);
TransportMapEstimate histogram_from_table(Eigen::VectorXd lo,
                                          Eigen::VectorXd hi,
                                          int cells_per_axis,
                                          PointMatrix barycenters);

TransportMapEstimate affine_estimate(Eigen::MatrixXd A, Eigen::VectorXd b);
TransportMapEstimate exact_model_estimate(BrenierModel model);

// Mean squared deviation from the true map over the given sample, weighted
// by the sample's own weights.
double in_sample_error(const TransportMapEstimate& est,
                       const BrenierModel& model, const DiscreteMeasure& xs);

struct McEstimate {
  double mean;
  double stderr_;
  std::int64_t n_eval;
};

// Monte Carlo squared risk E|est(X) - T(X)|^2 over fresh draws from source.
// The evaluation stream is derived from the sampler's seed, so it never
// replays the draw that produced a fitted sample with the same seed.
McEstimate risk_mc(const TransportMapEstimate& est, const BrenierModel& model,
                   const Sampler& source, std::int64_t n_eval);

// E min_i |X - x_i|^2: expected squared distance from a fresh draw to the
// sample. Exact for finite samplers, Monte Carlo otherwise.
double e2_nn_distance(const DiscreteMeasure& xs, const Sampler& source,
                      std::int64_t n_eval);

// Largest probability mass captured by a single sample point's nearest
// neighbor cell. Exact for finite samplers, Monte Carlo otherwise.
double e3_voronoi_mass(const DiscreteMeasure& xs, const Sampler& source,
                       std::int64_t n_eval);

}  // namespace otlab
