#include "otlab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "otlab/errors.hpp"
#include "otlab/rng.hpp"

namespace otlab {

namespace {

constexpr std::int32_t kLeafSize = 16;

// Evaluation draws live on their own stream so a sampler reused for both
// fitting and scoring never replays the fitting sample.
constexpr std::uint64_t kEvalStream = 0xd1b54a32d192ed03ULL;

struct Accum {
  double sum = 0.0, comp = 0.0;
  void add(double v) {
    double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  double get() const { return sum + comp; }
};

}  // namespace

KdTree::KdTree(PointMatrix pts) : pts_(std::move(pts)) {
  if (pts_.rows() < 1 || pts_.cols() < 1)
    throw ConfigError("nearest-neighbor index needs at least one point");
  if (!pts_.allFinite())
    throw ConfigError("nearest-neighbor index got non-finite points");
  order_.resize(pts_.rows());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<std::size_t>(2 * pts_.rows() / kLeafSize + 4));
  nodes_.push_back({});
  build(0, 0, static_cast<std::int32_t>(pts_.rows()));
}

void KdTree::build(std::int32_t node, std::int32_t begin, std::int32_t end) {
  if (end - begin <= kLeafSize) {
    nodes_[node] = {-1, 0.0, -1, -1, begin, end};
    return;
  }
  const int d = dim();
  int axis = 0;
  double best_spread = -1.0;
  for (int k = 0; k < d; ++k) {
    double lo = pts_(order_[begin], k), hi = lo;
    for (std::int32_t t = begin + 1; t < end; ++t) {
      double v = pts_(order_[t], k);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      axis = k;
    }
  }
  std::int32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end,
                   [&](std::int32_t a, std::int32_t b) {
                     double va = pts_(a, axis), vb = pts_(b, axis);
                     return va != vb ? va < vb : a < b;
                   });
  double split = pts_(order_[mid], axis);
  std::int32_t li = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({});
  std::int32_t ri = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({});
  nodes_[node] = {axis, split, li, ri, begin, end};
  build(li, begin, mid);
  build(ri, mid, end);
}

void KdTree::search(std::int32_t node, const double* q, Hit& best) const {
  const Node& nd = nodes_[node];
  if (nd.left < 0) {
    const int d = dim();
    for (std::int32_t t = nd.begin; t < nd.end; ++t) {
      std::int32_t idx = order_[t];
      const double* p = pts_.data() + static_cast<std::int64_t>(idx) * d;
      double d2 = 0.0;
      for (int k = 0; k < d; ++k) {
        double dd = p[k] - q[k];
        d2 += dd * dd;
      }
      if (d2 < best.dist2 || (d2 == best.dist2 && idx < best.index))
        best = {idx, d2};
    }
    return;
  }
  double diff = q[nd.axis] - nd.split;
  std::int32_t first = diff < 0.0 ? nd.left : nd.right;
  std::int32_t second = diff < 0.0 ? nd.right : nd.left;
  search(first, q, best);
  // <= (not <): an equally distant point on the far side may carry a lower
  // index, and the tie rule must see it.
  if (diff * diff <= best.dist2) search(second, q, best);
}

KdTree::Hit KdTree::nearest(const double* q) const {
  Hit best{std::numeric_limits<std::int64_t>::max(),
           std::numeric_limits<double>::infinity()};
  search(0, q, best);
  return best;
}

struct TransportMapEstimate::Impl {
  Kind kind;
  int dim_in = 0;
  int dim_out = 0;
  // one_nn
  std::optional<KdTree> tree;
  PointMatrix bary;
  // histogram
  Eigen::VectorXd lo, hi;
  int cells = 0;
  // affine
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  // exact_model
  std::optional<BrenierModel> model;
};

TransportMapEstimate::Kind TransportMapEstimate::kind() const {
  return impl_->kind;
}
int TransportMapEstimate::dim() const { return impl_->dim_in; }

Eigen::VectorXd TransportMapEstimate::operator()(
    const Eigen::VectorXd& x) const {
  const Impl& im = *impl_;
  if (x.size() != im.dim_in)
    throw ConfigError("map estimate: query has wrong dimension");
  switch (im.kind) {
    case Kind::one_nn: {
      KdTree::Hit hit = im.tree->nearest(x.data());
      return im.bary.row(hit.index).transpose();
    }
    case Kind::histogram: {
      std::int64_t linear = 0;
      for (int k = 0; k < im.dim_in; ++k) {
        double w = (im.hi[k] - im.lo[k]) / im.cells;
        auto idx = static_cast<std::int64_t>(
            std::floor((x[k] - im.lo[k]) / w));
        idx = std::clamp<std::int64_t>(idx, 0, im.cells - 1);
        linear = linear * im.cells + idx;
      }
      return im.bary.row(linear).transpose();
    }
    case Kind::affine:
      return im.A * x + im.b;
    case Kind::exact_model:
      return im.model->map(x);
  }
  throw NumericError("map estimate: unreachable kind");
}

PointMatrix TransportMapEstimate::apply(const PointMatrix& xs) const {
  PointMatrix out(xs.rows(), impl_->dim_out);
  for (std::int64_t i = 0; i < xs.rows(); ++i)
    out.row(i) = (*this)(xs.row(i).transpose()).transpose();
  return out;
}

MapFn TransportMapEstimate::map_fn() const {
  TransportMapEstimate self = *this;
  return [self](const Eigen::VectorXd& x) { return self(x); };
}

const PointMatrix& TransportMapEstimate::sample_points() const {
  if (impl_->kind != Kind::one_nn)
    throw ConfigError("sample_points(): wrong estimator kind");
  return impl_->tree->points();
}
const PointMatrix& TransportMapEstimate::barycenters() const {
  if (impl_->kind != Kind::one_nn && impl_->kind != Kind::histogram)
    throw ConfigError("barycenters(): wrong estimator kind");
  return impl_->bary;
}
const Eigen::VectorXd& TransportMapEstimate::box_lo() const {
  if (impl_->kind != Kind::histogram)
    throw ConfigError("box_lo(): wrong estimator kind");
  return impl_->lo;
}
const Eigen::VectorXd& TransportMapEstimate::box_hi() const {
  if (impl_->kind != Kind::histogram)
    throw ConfigError("box_hi(): wrong estimator kind");
  return impl_->hi;
}
int TransportMapEstimate::cells_per_axis() const {
  if (impl_->kind != Kind::histogram)
    throw ConfigError("cells_per_axis(): wrong estimator kind");
  return impl_->cells;
}
const Eigen::MatrixXd& TransportMapEstimate::A() const {
  if (impl_->kind != Kind::affine)
    throw ConfigError("A(): wrong estimator kind");
  return impl_->A;
}
const Eigen::VectorXd& TransportMapEstimate::b() const {
  if (impl_->kind != Kind::affine)
    throw ConfigError("b(): wrong estimator kind");
  return impl_->b;
}
const BrenierModel& TransportMapEstimate::model() const {
  if (impl_->kind != Kind::exact_model)
    throw ConfigError("model(): wrong estimator kind");
  return *impl_->model;
}

TransportMapEstimate one_nn_from_table(PointMatrix points,
                                       PointMatrix barycenters) {
  if (points.rows() != barycenters.rows() || points.rows() < 1)
    throw ConfigError("estimator table: points/barycenters mismatch");
  auto impl = std::make_shared<TransportMapEstimate::Impl>();
  impl->kind = TransportMapEstimate::Kind::one_nn;
  impl->dim_in = static_cast<int>(points.cols());
  impl->dim_out = static_cast<int>(barycenters.cols());
  impl->bary = std::move(barycenters);
  impl->tree.emplace(std::move(points));
  TransportMapEstimate est;
  est.impl_ = std::move(impl);
  return est;
}

TransportMapEstimate one_nn_estimator(const Coupling& plan) {
  const PointMatrix& X = plan.source().points();
  const PointMatrix& Y = plan.target().points();
  const std::int64_t n = X.rows();
  const double unit = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    if (std::abs(plan.source().weights()[i] - unit) > 1e-9)
      throw ConfigError(
          "nearest-neighbor estimator needs a uniformly weighted source "
          "sample");
  }
  PointMatrix acc = PointMatrix::Zero(n, Y.cols());
  Eigen::VectorXd rowmass = Eigen::VectorXd::Zero(n);
  for (const auto& e : plan.entries()) {
    acc.row(e.i) += e.mass * Y.row(e.j);
    rowmass[e.i] += e.mass;
  }
  PointMatrix B(n, Y.cols());
  for (std::int64_t i = 0; i < n; ++i) {
    // Atoms the plan never moves (zero weight) stay where they are.
    if (rowmass[i] > 0.0) {
      B.row(i) = acc.row(i) / rowmass[i];
    } else {
      B.row(i) = X.row(i);
    }
  }
  return one_nn_from_table(X, std::move(B));
}

namespace {

std::int64_t checked_cell_count(int cells, int d) {
  if (cells < 1) throw ConfigError("histogram needs cells_per_axis >= 1");
  std::int64_t total = 1;
  for (int k = 0; k < d; ++k) {
    total *= cells;
    if (total > 1'000'000)
      throw ConfigError("histogram grid exceeds 1e6 cells");
  }
  return total;
}

std::int64_t cell_of(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                     int cells, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  std::int64_t linear = 0;
  for (int k = 0; k < lo.size(); ++k) {
    double w = (hi[k] - lo[k]) / cells;
    auto idx = static_cast<std::int64_t>(std::floor((x[k] - lo[k]) / w));
    idx = std::clamp<std::int64_t>(idx, 0, cells - 1);
    linear = linear * cells + idx;
  }
  return linear;
}

Eigen::RowVectorXd cell_center(const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, int cells,
                               std::int64_t linear, int d) {
  Eigen::RowVectorXd c(d);
  for (int k = d - 1; k >= 0; --k) {
    std::int64_t idx = linear % cells;
    linear /= cells;
    double w = (hi[k] - lo[k]) / cells;
    c[k] = lo[k] + (static_cast<double>(idx) + 0.5) * w;
  }
  return c;
}

}  // namespace

TransportMapEstimate histogram_from_table(Eigen::VectorXd lo,
                                          Eigen::VectorXd hi,
                                          int cells_per_axis,
                                          PointMatrix barycenters) {
  if (lo.size() < 1 || lo.size() != hi.size())
    throw ConfigError("histogram box bounds mismatch");
  if (((hi - lo).array() <= 0.0).any())
    throw ConfigError("histogram box must have lo < hi per axis");
  std::int64_t total =
      checked_cell_count(cells_per_axis, static_cast<int>(lo.size()));
  if (barycenters.rows() != total)
    throw ConfigError("histogram table has wrong number of cells");
  auto impl = std::make_shared<TransportMapEstimate::Impl>();
  impl->kind = TransportMapEstimate::Kind::histogram;
  impl->dim_in = static_cast<int>(lo.size());
  impl->dim_out = static_cast<int>(barycenters.cols());
  impl->lo = std::move(lo);
  impl->hi = std::move(hi);
  impl->cells = cells_per_axis;
  impl->bary = std::move(barycenters);
  TransportMapEstimate est;
  est.impl_ = std::move(impl);
  return est;
}

TransportMapEstimate histogram_plugin_estimator(const DiscreteMeasure& xs,
                                                const DiscreteMeasure& ys,
                                                int cells_per_axis,
                                                Eigen::VectorXd lo,
                                                Eigen::VectorXd hi) {
  const int d = xs.dim();
  if (ys.dim() != d)
    throw ConfigError("histogram estimator: sample dimensions differ");
  std::int64_t total = checked_cell_count(cells_per_axis, d);

  if (lo.size() == 0 && hi.size() == 0) {
    lo.resize(d);
    hi.resize(d);
    for (int k = 0; k < d; ++k) {
      lo[k] = std::min(xs.points().col(k).minCoeff(),
                       ys.points().col(k).minCoeff());
      hi[k] = std::max(xs.points().col(k).maxCoeff(),
                       ys.points().col(k).maxCoeff());
      if (!(hi[k] > lo[k])) hi[k] = lo[k] + 1.0;
    }
  }
  if (lo.size() != d || hi.size() != d)
    throw ConfigError("histogram box has wrong dimension");
  if (((hi - lo).array() <= 0.0).any())
    throw ConfigError("histogram box must have lo < hi per axis");
  for (int k = 0; k < d; ++k) {
    if (xs.points().col(k).minCoeff() < lo[k] ||
        xs.points().col(k).maxCoeff() > hi[k] ||
        ys.points().col(k).minCoeff() < lo[k] ||
        ys.points().col(k).maxCoeff() > hi[k])
      throw ConfigError("histogram box does not contain the samples");
  }

  std::vector<double> mass_x(static_cast<std::size_t>(total), 0.0);
  std::vector<double> mass_y(static_cast<std::size_t>(total), 0.0);
  for (std::int64_t i = 0; i < xs.size(); ++i)
    mass_x[cell_of(lo, hi, cells_per_axis, xs.points().row(i))] +=
        xs.weights()[i];
  for (std::int64_t j = 0; j < ys.size(); ++j)
    mass_y[cell_of(lo, hi, cells_per_axis, ys.points().row(j))] +=
        ys.weights()[j];

  std::vector<std::int64_t> occ_x, occ_y;
  for (std::int64_t c = 0; c < total; ++c) {
    if (mass_x[c] > 0.0) occ_x.push_back(c);
    if (mass_y[c] > 0.0) occ_y.push_back(c);
  }
  PointMatrix cx(static_cast<std::int64_t>(occ_x.size()), d);
  PointMatrix cy(static_cast<std::int64_t>(occ_y.size()), d);
  Eigen::VectorXd wx(static_cast<std::int64_t>(occ_x.size()));
  Eigen::VectorXd wy(static_cast<std::int64_t>(occ_y.size()));
  for (std::size_t t = 0; t < occ_x.size(); ++t) {
    cx.row(static_cast<std::int64_t>(t)) =
        cell_center(lo, hi, cells_per_axis, occ_x[t], d);
    wx[static_cast<std::int64_t>(t)] = mass_x[occ_x[t]];
  }
  for (std::size_t t = 0; t < occ_y.size(); ++t) {
    cy.row(static_cast<std::int64_t>(t)) =
        cell_center(lo, hi, cells_per_axis, occ_y[t], d);
    wy[static_cast<std::int64_t>(t)] = mass_y[occ_y[t]];
  }

  Coupling plan = solve_kantorovich(DiscreteMeasure(cx, wx),
                                    DiscreteMeasure(cy, wy));
  PointMatrix occ_bary = PointMatrix::Zero(cx.rows(), d);
  Eigen::VectorXd rowmass = Eigen::VectorXd::Zero(cx.rows());
  for (const auto& e : plan.entries()) {
    occ_bary.row(e.i) += e.mass * cy.row(e.j);
    rowmass[e.i] += e.mass;
  }
  for (std::int64_t t = 0; t < cx.rows(); ++t) {
    if (rowmass[t] > 0.0) {
      occ_bary.row(t) /= rowmass[t];
    } else {
      occ_bary.row(t) = cx.row(t);
    }
  }

  // Empty source cells borrow the barycenter of the nearest occupied cell;
  // occupied centers are indexed in increasing cell order, so the tree's tie
  // rule lands on the lower cell index.
  KdTree occ_tree(cx);
  PointMatrix table(total, d);
  std::size_t next_occ = 0;
  for (std::int64_t c = 0; c < total; ++c) {
    if (next_occ < occ_x.size() && occ_x[next_occ] == c) {
      table.row(c) = occ_bary.row(static_cast<std::int64_t>(next_occ));
      ++next_occ;
    } else {
      Eigen::RowVectorXd center =
          cell_center(lo, hi, cells_per_axis, c, d);
      KdTree::Hit hit = occ_tree.nearest(center.data());
      table.row(c) = occ_bary.row(hit.index);
    }
  }
  return histogram_from_table(std::move(lo), std::move(hi), cells_per_axis,
                              std::move(table));
}

TransportMapEstimate affine_estimate(Eigen::MatrixXd A, Eigen::VectorXd b) {
  if (A.rows() < 1 || A.rows() != A.cols() || b.size() != A.rows())
    throw ConfigError("affine estimate needs square A matching b");
  if (!A.allFinite() || !b.allFinite())
    throw ConfigError("affine estimate has non-finite parameters");
  auto impl = std::make_shared<TransportMapEstimate::Impl>();
  impl->kind = TransportMapEstimate::Kind::affine;
  impl->dim_in = static_cast<int>(A.cols());
  impl->dim_out = static_cast<int>(A.rows());
  impl->A = std::move(A);
  impl->b = std::move(b);
  TransportMapEstimate est;
  est.impl_ = std::move(impl);
  return est;
}

TransportMapEstimate exact_model_estimate(BrenierModel model) {
  auto impl = std::make_shared<TransportMapEstimate::Impl>();
  impl->kind = TransportMapEstimate::Kind::exact_model;
  impl->dim_in = model.dim();
  impl->dim_out = model.dim();
  impl->model = std::move(model);
  TransportMapEstimate est;
  est.impl_ = std::move(impl);
  return est;
}

double in_sample_error(const TransportMapEstimate& est,
                       const BrenierModel& model, const DiscreteMeasure& xs) {
  if (xs.dim() != model.dim() || xs.dim() != est.dim())
    throw ConfigError("in_sample_error: dimension mismatch");
  Accum acc;
  for (std::int64_t i = 0; i < xs.size(); ++i) {
    Eigen::VectorXd x = xs.point(i);
    acc.add(xs.weights()[i] * (est(x) - model.map(x)).squaredNorm());
  }
  return acc.get();
}

McEstimate risk_mc(const TransportMapEstimate& est, const BrenierModel& model,
                   const Sampler& source, std::int64_t n_eval) {
  if (n_eval < 1) throw ConfigError("risk_mc needs n_eval >= 1");
  if (source.dim() != model.dim() || source.dim() != est.dim())
    throw ConfigError("risk_mc: dimension mismatch");
  Sampler ev = source.with_seed(derive_seed(source.seed(), kEvalStream));
  DiscreteMeasure draws = sample(ev, n_eval);
  std::vector<double> vals(static_cast<std::size_t>(n_eval));
  Accum total;
  for (std::int64_t i = 0; i < n_eval; ++i) {
    Eigen::VectorXd x = draws.point(i);
    double v = (est(x) - model.map(x)).squaredNorm();
    vals[static_cast<std::size_t>(i)] = v;
    total.add(v);
  }
  double mean = total.get() / static_cast<double>(n_eval);
  double se = 0.0;
  if (n_eval > 1) {
    Accum ss;
    for (double v : vals) ss.add((v - mean) * (v - mean));
    se = std::sqrt(ss.get() / static_cast<double>(n_eval - 1) /
                   static_cast<double>(n_eval));
  }
  return {mean, se, n_eval};
}

double e2_nn_distance(const DiscreteMeasure& xs, const Sampler& source,
                      std::int64_t n_eval) {
  if (source.dim() != xs.dim())
    throw ConfigError("e2_nn_distance: dimension mismatch");
  KdTree tree(xs.points());
  Accum acc;
  if (source.kind() == Sampler::Kind::finite) {
    const DiscreteMeasure& atoms = source.atoms();
    for (std::int64_t a = 0; a < atoms.size(); ++a)
      acc.add(atoms.weights()[a] *
              tree.nearest(atoms.points().row(a).data()).dist2);
    return acc.get();
  }
  if (n_eval < 1) throw ConfigError("e2_nn_distance needs n_eval >= 1");
  Sampler ev = source.with_seed(derive_seed(source.seed(), kEvalStream));
  DiscreteMeasure draws = sample(ev, n_eval);
  for (std::int64_t i = 0; i < n_eval; ++i)
    acc.add(tree.nearest(draws.points().row(i).data()).dist2);
  return acc.get() / static_cast<double>(n_eval);
}

double e3_voronoi_mass(const DiscreteMeasure& xs, const Sampler& source,
                       std::int64_t n_eval) {
  if (source.dim() != xs.dim())
    throw ConfigError("e3_voronoi_mass: dimension mismatch");
  KdTree tree(xs.points());
  std::vector<double> mass(static_cast<std::size_t>(xs.size()), 0.0);
  if (source.kind() == Sampler::Kind::finite) {
    const DiscreteMeasure& atoms = source.atoms();
    for (std::int64_t a = 0; a < atoms.size(); ++a)
      mass[static_cast<std::size_t>(
          tree.nearest(atoms.points().row(a).data()).index)] +=
          atoms.weights()[a];
  } else {
    if (n_eval < 1) throw ConfigError("e3_voronoi_mass needs n_eval >= 1");
    Sampler ev = source.with_seed(derive_seed(source.seed(), kEvalStream));
    DiscreteMeasure draws = sample(ev, n_eval);
    // Count hits as integers; one division per cell keeps the masses exact.
    std::vector<std::int64_t> hits(static_cast<std::size_t>(xs.size()), 0);
    for (std::int64_t i = 0; i < n_eval; ++i)
      ++hits[static_cast<std::size_t>(
          tree.nearest(draws.points().row(i).data()).index)];
    for (std::size_t k = 0; k < hits.size(); ++k)
      mass[k] = static_cast<double>(hits[k]) / static_cast<double>(n_eval);
  }
  return *std::max_element(mass.begin(), mass.end());
}

}  // namespace otlab
