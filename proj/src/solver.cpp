#include "otlab/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>

#include "otlab/errors.hpp"

namespace otlab {

namespace {

// Neumaier compensated summation.
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

double pair_cost(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                 std::int64_t i, std::int64_t j) {
  return (mu.points().row(i) - nu.points().row(j)).squaredNorm();
}

// Scale weights to integers summing exactly to D (largest-remainder rounding,
// ties to the lower index). D is a multiple of n*m, so exactly uniform
// weights quantize with zero error.
std::vector<std::int64_t> quantize_weights(const Eigen::VectorXd& w,
                                           std::int64_t D) {
  const std::int64_t n = w.size();
  std::vector<std::int64_t> k(n);
  std::vector<std::pair<double, std::int64_t>> rem(n);
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double scaled = w[i] * static_cast<double>(D);
    std::int64_t f = static_cast<std::int64_t>(std::floor(scaled));
    f = std::clamp<std::int64_t>(f, 0, D);
    k[i] = f;
    total += f;
    rem[i] = {-(scaled - static_cast<double>(f)), i};
  }
  std::int64_t deficit = D - total;
  std::sort(rem.begin(), rem.end());
  if (deficit > 0) {
    std::int64_t base = deficit / n, extra = deficit % n;
    for (std::int64_t i = 0; i < n; ++i) k[i] += base;
    for (std::int64_t t = 0; t < extra; ++t) k[rem[t].second] += 1;
  } else if (deficit < 0) {
    std::int64_t left = -deficit;
    while (left > 0) {
      for (std::int64_t t = n - 1; t >= 0 && left > 0; --t) {
        std::int64_t idx = rem[t].second;
        if (k[idx] > 0) {
          k[idx] -= 1;
          --left;
        }
      }
    }
  }
  return k;
}

struct Simplex {
  std::int64_t n, m, N;
  int d;
  PointMatrix X, Y;  // lexicographically sorted copies
  Eigen::VectorXd nx, ny;
  std::vector<std::int64_t> src_orig, snk_orig;
  std::vector<std::int64_t> supply, demand;    // perturbed units
  std::vector<std::int64_t> supply0, demand0;  // exact quantized units
  std::int64_t D = 0;       // quantization denominator (mass 1 = D units)
  std::int64_t K_pert = 0;  // perturbation scale (= n + m + 1)
  double eps = 0.0;

  std::vector<std::int32_t> parent;
  std::vector<std::int32_t> depth;
  std::vector<std::int64_t> flow_up;  // flow on the arc toward the parent
  std::vector<double> pot;            // f on sources, g on sinks
  std::vector<std::vector<std::int32_t>> children;

  std::vector<std::int32_t> upath, vpath, chain, stack;
  std::vector<std::int64_t> chain_flow;

  double cost(std::int64_t i, std::int64_t j) const {
    const double* a = X.data() + i * d;
    const double* b = Y.data() + j * d;
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += a[k] * b[k];
    return nx[i] + ny[j] - 2.0 * s;
  }

  double reduced(std::int64_t i, std::int64_t j) const {
    return cost(i, j) - pot[i] - pot[n + j];
  }

  void setup(const DiscreteMeasure& mu, const DiscreteMeasure& nu);
  void init_basis();
  void recompute_potentials();
  std::int64_t do_pivot(std::int32_t si, std::int32_t tnode, double r);
  std::int64_t scan_range(std::int64_t cursor, std::int64_t len,
                          double* best_r) const;
  void run(const SolveOptions& opts);
  Coupling finish(const DiscreteMeasure& mu, const DiscreteMeasure& nu) const;

  static void child_erase(std::vector<std::int32_t>& v, std::int32_t x) {
    for (auto& y : v) {
      if (y == x) {
        y = v.back();
        v.pop_back();
        return;
      }
    }
    throw NumericError("transport basis tree lost an edge");
  }
};

std::vector<std::int64_t> lex_order(const PointMatrix& pts) {
  std::vector<std::int64_t> order(pts.rows());
  std::iota(order.begin(), order.end(), 0);
  const int d = static_cast<int>(pts.cols());
  std::sort(order.begin(), order.end(),
            [&](std::int64_t a, std::int64_t b) {
              for (int k = 0; k < d; ++k) {
                if (pts(a, k) != pts(b, k)) return pts(a, k) < pts(b, k);
              }
              return a < b;
            });
  return order;
}

void Simplex::setup(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  n = mu.size();
  m = nu.size();
  N = n + m;
  d = mu.dim();
  src_orig = lex_order(mu.points());
  snk_orig = lex_order(nu.points());
  X.resize(n, d);
  Y.resize(m, d);
  Eigen::VectorXd wsrc(n), wsnk(m);
  for (std::int64_t i = 0; i < n; ++i) {
    X.row(i) = mu.points().row(src_orig[i]);
    wsrc[i] = mu.weights()[src_orig[i]];
  }
  for (std::int64_t j = 0; j < m; ++j) {
    Y.row(j) = nu.points().row(snk_orig[j]);
    wsnk[j] = nu.weights()[snk_orig[j]];
  }
  nx = X.rowwise().squaredNorm();
  ny = Y.rowwise().squaredNorm();

  // Mass is carried in exact integer units. The denominator D is a multiple
  // of n*m (so exactly uniform weights quantize with zero error) and is
  // chosen as large as possible while D*(N+1) still fits comfortably in
  // int64, which the anti-degeneracy perturbation below needs.
  K_pert = N + 1;
  const std::int64_t cells = n * m;
  const std::int64_t budget = (std::int64_t{1} << 60) / K_pert;
  if (cells > budget) throw ConfigError("transport instance is too large");
  const std::int64_t K = std::max<std::int64_t>(1, budget / cells);
  D = cells * K;
  supply0 = quantize_weights(wsrc, D);
  demand0 = quantize_weights(wsnk, D);

  // Dantzig perturbation: scale every unit by K_pert, then add one extra
  // unit per source and n extra units to the last sink. No proper subset of
  // sources can then balance any subset of sinks (counting units mod K_pert
  // would need 0 < |subset| < n to vanish), so every basis is nondegenerate,
  // every pivot strictly improves, and the simplex cannot stall or cycle.
  // The final basis tree is re-solved with the unperturbed units, which
  // keeps it optimal: the duals are untouched and the tree flows stay
  // nonnegative because they are integers within less than one perturbed
  // step of the nonnegative perturbed flows.
  supply.resize(n);
  demand.resize(m);
  for (std::int64_t i = 0; i < n; ++i) supply[i] = supply0[i] * K_pert + 1;
  for (std::int64_t j = 0; j < m; ++j) demand[j] = demand0[j] * K_pert;
  demand[m - 1] += n;

  double rx = nx.maxCoeff(), ry = ny.maxCoeff();
  double cmax = rx + ry + 2.0 * std::sqrt(rx * ry);
  eps = 1e-11 * (1.0 + cmax);
}

void Simplex::init_basis() {
  parent.assign(N, -1);
  depth.assign(N, 0);
  flow_up.assign(N, 0);
  pot.assign(N, 0.0);
  children.assign(N, {});

  // Northwest-corner start on the sorted atoms. In one dimension with equal
  // weights this is already the monotone (optimal) plan.
  std::vector<std::int32_t> adj_node;
  std::vector<std::int64_t> adj_flow;
  std::vector<std::vector<std::int32_t>> adj(N);
  adj_node.reserve(2 * (N - 1));
  std::int64_t a = 0, b = 0, rs = supply[0], rd = demand[0];
  for (;;) {
    std::int64_t q = std::min(rs, rd);
    std::int32_t u = static_cast<std::int32_t>(a);
    std::int32_t v = static_cast<std::int32_t>(n + b);
    adj[u].push_back(static_cast<std::int32_t>(adj_flow.size()));
    adj[v].push_back(static_cast<std::int32_t>(adj_flow.size()));
    adj_node.push_back(u);
    adj_node.push_back(v);
    adj_flow.push_back(q);
    rs -= q;
    rd -= q;
    if (a == n - 1 && b == m - 1) break;
    if (rs == 0 && a < n - 1) {
      ++a;
      rs = supply[a];
    } else {
      ++b;
      rd = demand[b];
    }
  }

  stack.clear();
  stack.push_back(0);
  std::vector<bool> seen(N, false);
  seen[0] = true;
  while (!stack.empty()) {
    std::int32_t v = stack.back();
    stack.pop_back();
    for (std::int32_t eid : adj[v]) {
      std::int32_t w = adj_node[2 * eid] == v ? adj_node[2 * eid + 1]
                                              : adj_node[2 * eid];
      if (seen[w]) continue;
      seen[w] = true;
      parent[w] = v;
      depth[w] = depth[v] + 1;
      flow_up[w] = adj_flow[eid];
      children[v].push_back(w);
      pot[w] = (w < n ? cost(w, v - n) : cost(v, w - n)) - pot[v];
      stack.push_back(w);
    }
  }
}

void Simplex::recompute_potentials() {
  pot[0] = 0.0;
  stack.clear();
  stack.push_back(0);
  while (!stack.empty()) {
    std::int32_t v = stack.back();
    stack.pop_back();
    for (std::int32_t c : children[v]) {
      pot[c] = (c < n ? cost(c, v - n) : cost(v, c - n)) - pot[v];
      stack.push_back(c);
    }
  }
}

std::int64_t Simplex::do_pivot(std::int32_t si, std::int32_t tnode, double r) {
  upath.clear();
  vpath.clear();
  std::int32_t u = si, v = tnode;
  while (depth[u] > depth[v]) {
    upath.push_back(u);
    u = parent[u];
  }
  while (depth[v] > depth[u]) {
    vpath.push_back(v);
    v = parent[v];
  }
  while (u != v) {
    upath.push_back(u);
    u = parent[u];
    vpath.push_back(v);
    v = parent[v];
  }

  // Pushing mass along the entering arc drains the arcs where the cycle runs
  // against the source->sink orientation: on the source-side walk these hang
  // below a source node, on the sink-side walk below a sink node.
  std::int64_t theta = std::numeric_limits<std::int64_t>::max();
  std::int32_t leave = -1;
  bool leave_on_u = true;
  std::int64_t leave_arc_id = -1;
  auto consider = [&](std::int32_t w, bool on_u) {
    std::int64_t arc_id = w < static_cast<std::int32_t>(n)
                              ? w * m + (parent[w] - n)
                              : static_cast<std::int64_t>(parent[w]) * m +
                                    (w - n);
    if (flow_up[w] < theta ||
        (flow_up[w] == theta && arc_id < leave_arc_id)) {
      theta = flow_up[w];
      leave = w;
      leave_on_u = on_u;
      leave_arc_id = arc_id;
    }
  };
  for (std::int32_t w : upath)
    if (w < static_cast<std::int32_t>(n)) consider(w, true);
  for (std::int32_t w : vpath)
    if (w >= static_cast<std::int32_t>(n)) consider(w, false);
  if (leave < 0) throw NumericError("transport pivot found no leaving arc");

  if (theta != 0) {
    for (std::int32_t w : upath)
      flow_up[w] += (w < static_cast<std::int32_t>(n)) ? -theta : theta;
    for (std::int32_t w : vpath)
      flow_up[w] += (w >= static_cast<std::int32_t>(n)) ? -theta : theta;
  }

  std::int32_t e = leave_on_u ? si : tnode;
  std::int32_t o = leave_on_u ? tnode : si;

  chain.clear();
  for (std::int32_t x = e;; x = parent[x]) {
    chain.push_back(x);
    if (x == leave) break;
  }
  chain_flow.resize(chain.size());
  for (std::size_t t = 0; t < chain.size(); ++t)
    chain_flow[t] = flow_up[chain[t]];

  child_erase(children[parent[chain.back()]], chain.back());
  for (std::size_t t = 0; t + 1 < chain.size(); ++t) {
    child_erase(children[chain[t + 1]], chain[t]);
    children[chain[t]].push_back(chain[t + 1]);
  }
  children[o].push_back(chain[0]);

  parent[chain[0]] = o;
  flow_up[chain[0]] = theta;
  for (std::size_t t = 0; t + 1 < chain.size(); ++t) {
    parent[chain[t + 1]] = chain[t];
    flow_up[chain[t + 1]] = chain_flow[t];
  }

  double df = r, dg = -r;
  if (e >= static_cast<std::int32_t>(n)) std::swap(df, dg);
  stack.clear();
  stack.push_back(e);
  depth[e] = depth[o] + 1;
  pot[e] += e < static_cast<std::int32_t>(n) ? df : dg;
  while (!stack.empty()) {
    std::int32_t x = stack.back();
    stack.pop_back();
    for (std::int32_t c : children[x]) {
      depth[c] = depth[x] + 1;
      pot[c] += c < static_cast<std::int32_t>(n) ? df : dg;
      stack.push_back(c);
    }
  }
  return theta;
}

// Scans arcs [cursor, cursor+len) in raster order and returns the most
// negative reduced cost strictly below *best_r, if any.
std::int64_t Simplex::scan_range(std::int64_t cursor, std::int64_t len,
                                 double* best_r) const {
  std::int64_t found = -1;
  std::int64_t t = cursor;
  const std::int64_t stop = cursor + len;
  while (t < stop) {
    const std::int64_t i = t / m;
    std::int64_t j = t % m;
    const std::int64_t row_stop = std::min(stop, (i + 1) * m);
    const double* xi = X.data() + i * d;
    const double base = nx[i] - pot[i];
    for (; t < row_stop; ++t, ++j) {
      const double* yj = Y.data() + j * d;
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += xi[k] * yj[k];
      const double r = base + ny[j] - 2.0 * dot - pot[n + j];
      if (r < *best_r) {
        *best_r = r;
        found = t;
      }
    }
  }
  return found;
}

void Simplex::run(const SolveOptions& opts) {
  const std::int64_t nm = n * m;
  const std::int64_t block =
      std::max<std::int64_t>(64, static_cast<std::int64_t>(
                                     std::sqrt(static_cast<double>(nm))));
  std::int64_t cursor = 0, pivots = 0;
  int cleanup_rounds = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (;;) {
    // Block pricing: resume where the last scan left off, stop at the first
    // block holding an eligible arc, enter its most negative one.
    std::int64_t enter = -1;
    double enter_r = -eps;
    std::int64_t scanned = 0;
    while (scanned < nm) {
      const std::int64_t len = std::min(block, nm - cursor);
      const std::int64_t found = scan_range(cursor, len, &enter_r);
      if (found >= 0) enter = found;
      cursor = (cursor + len) % nm;
      scanned += len;
      if (enter >= 0) break;
    }

    if (enter < 0) {
      // Tentative optimum. Rebuild the potentials exactly from the tree and
      // re-price everything; incremental updates drift over long runs.
      recompute_potentials();
      enter = scan_range(0, nm, &enter_r);
      if (enter < 0) return;
      if (++cleanup_rounds > 50)
        throw NumericError("transport solver could not certify optimality");
    }

    do_pivot(static_cast<std::int32_t>(enter / m),
             static_cast<std::int32_t>(n + enter % m), enter_r);
    ++pivots;
    if (opts.max_pivots > 0 && pivots > opts.max_pivots)
      throw NumericError("transport solver exceeded pivot cap");
    if (opts.time_limit_seconds > 0.0 && (pivots & 0xff) == 0) {
      double el = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
      if (el > opts.time_limit_seconds)
        throw NumericError("transport solver exceeded time limit");
    }
  }
}

Coupling Simplex::finish(const DiscreteMeasure& mu,
                         const DiscreteMeasure& nu) const {
  // Re-solve the optimal basis tree against the exact quantized units.
  // The duals are untouched, so the tree stays optimal; the only question
  // is feasibility, and dropping the perturbation moves each tree flow by
  // less than one perturbed-unit step, so it cannot go negative.
  std::vector<std::int64_t> acc(N);
  std::vector<std::int32_t> order(N);
  for (std::int32_t v = 0; v < static_cast<std::int32_t>(N); ++v) {
    acc[v] = v < static_cast<std::int32_t>(n) ? supply0[v] : -demand0[v - n];
    order[v] = v;
  }
  std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    return depth[a] > depth[b];
  });

  std::vector<CouplingEntry> entries;
  entries.reserve(N);
  for (std::int32_t v : order) {
    if (parent[v] < 0) continue;
    acc[parent[v]] += acc[v];
    // Net surplus of the subtree under v crosses the arc to the parent:
    // out of the subtree when v is a source, into it when v is a sink.
    const std::int64_t flow =
        v < static_cast<std::int32_t>(n) ? acc[v] : -acc[v];
    if (flow < 0)
      throw NumericError("transport basis infeasible for exact weights");
    if (flow == 0) continue;
    std::int64_t i, j;
    if (v < static_cast<std::int32_t>(n)) {
      i = v;
      j = parent[v] - n;
    } else {
      i = parent[v];
      j = v - n;
    }
    entries.push_back({src_orig[i], snk_orig[j],
                       static_cast<double>(flow) / static_cast<double>(D)});
  }
  std::vector<double> f(n), g(m);
  for (std::int64_t i = 0; i < n; ++i) f[src_orig[i]] = pot[i];
  for (std::int64_t j = 0; j < m; ++j) g[snk_orig[j]] = pot[n + j];
  return Coupling(mu, nu, std::move(entries), std::move(f), std::move(g));
}

}  // namespace

Coupling::Coupling(DiscreteMeasure source, DiscreteMeasure target,
                   std::vector<CouplingEntry> entries,
                   std::vector<double> dual_f, std::vector<double> dual_g)
    : source_(std::move(source)),
      target_(std::move(target)),
      dual_f_(std::move(dual_f)),
      dual_g_(std::move(dual_g)) {
  if (source_.dim() != target_.dim())
    throw ConfigError("coupling endpoints live in different dimensions");
  if (dual_f_.empty() != dual_g_.empty())
    throw ConfigError("coupling has only one dual vector");
  if (!dual_f_.empty() &&
      (dual_f_.size() != static_cast<std::size_t>(source_.size()) ||
       dual_g_.size() != static_cast<std::size_t>(target_.size())))
    throw ConfigError("coupling dual vector length mismatch");

  entries_.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.i < 0 || e.i >= source_.size() || e.j < 0 || e.j >= target_.size())
      throw ConfigError("coupling entry index out of range");
    if (!(e.mass >= 0.0) || !std::isfinite(e.mass))
      throw ConfigError("coupling entry mass must be finite and >= 0");
    if (e.mass > 0.0) entries_.push_back(e);
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const CouplingEntry& a, const CouplingEntry& b) {
              return a.i != b.i ? a.i < b.i : a.j < b.j;
            });
  for (std::size_t t = 1; t < entries_.size(); ++t)
    if (entries_[t].i == entries_[t - 1].i &&
        entries_[t].j == entries_[t - 1].j)
      throw ConfigError("coupling has a duplicate entry");

  Eigen::VectorXd row = Eigen::VectorXd::Zero(source_.size());
  Eigen::VectorXd col = Eigen::VectorXd::Zero(target_.size());
  Accum total;
  for (const auto& e : entries_) {
    row[e.i] += e.mass;
    col[e.j] += e.mass;
    total.add(e.mass * pair_cost(source_, target_, e.i, e.j));
  }
  if ((row - source_.weights()).cwiseAbs().maxCoeff() > 1e-9)
    throw ConfigError("coupling row sums do not match source weights");
  if ((col - target_.weights()).cwiseAbs().maxCoeff() > 1e-9)
    throw ConfigError("coupling column sums do not match target weights");
  cost_ = total.get();
}

Eigen::VectorXd Coupling::row_marginals() const {
  Eigen::VectorXd row = Eigen::VectorXd::Zero(source_.size());
  for (const auto& e : entries_) row[e.i] += e.mass;
  return row;
}

Eigen::VectorXd Coupling::col_marginals() const {
  Eigen::VectorXd col = Eigen::VectorXd::Zero(target_.size());
  for (const auto& e : entries_) col[e.j] += e.mass;
  return col;
}

Coupling solve_kantorovich(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           const SolveOptions& opts) {
  if (mu.dim() != nu.dim())
    throw ConfigError("cannot transport between different dimensions");
  Simplex s;
  s.setup(mu, nu);
  s.init_basis();
  s.run(opts);
  return s.finish(mu, nu);
}

double w2(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  return std::sqrt(std::max(0.0, solve_kantorovich(mu, nu).cost()));
}

Coupling brute_force_assignment(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu) {
  const std::int64_t n = mu.size();
  if (nu.size() != n)
    throw ConfigError("assignment oracle needs equal atom counts");
  if (n > 8) throw ConfigError("assignment oracle is capped at 8 atoms");
  double wtol = 1e-12;
  for (std::int64_t i = 0; i < n; ++i)
    if (std::abs(mu.weights()[i] - 1.0 / n) > wtol ||
        std::abs(nu.weights()[i] - 1.0 / n) > wtol)
      throw ConfigError("assignment oracle needs uniform weights");

  std::vector<std::int64_t> perm(n), best(n);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      c += pair_cost(mu, nu, i, perm[i]);
      if (c >= best_cost) break;
    }
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<CouplingEntry> entries(n);
  for (std::int64_t i = 0; i < n; ++i)
    entries[i] = {i, best[i], 1.0 / static_cast<double>(n)};
  return Coupling(mu, nu, std::move(entries));
}

double coupling_correlation(const Coupling& c) {
  Accum acc;
  for (const auto& e : c.entries())
    acc.add(e.mass * c.source().points().row(e.i).dot(
                         c.target().points().row(e.j)));
  return acc.get();
}

DiscreteMeasure coupling_as_measure(const Coupling& c) {
  const int d = c.source().dim();
  const std::int64_t k = static_cast<std::int64_t>(c.entries().size());
  PointMatrix pts(k, 2 * d);
  Eigen::VectorXd w(k);
  for (std::int64_t t = 0; t < k; ++t) {
    const auto& e = c.entries()[static_cast<std::size_t>(t)];
    pts.row(t).head(d) = c.source().points().row(e.i);
    pts.row(t).tail(d) = c.target().points().row(e.j);
    w[t] = e.mass;
  }
  return DiscreteMeasure(std::move(pts), std::move(w));
}

Coupling graph_coupling(const DiscreteMeasure& mu, const MapFn& map) {
  DiscreteMeasure target = pushforward_measure(mu, map);
  std::vector<CouplingEntry> entries(mu.size());
  for (std::int64_t i = 0; i < mu.size(); ++i)
    entries[i] = {i, i, mu.weights()[i]};
  return Coupling(mu, std::move(target), std::move(entries));
}

}  // namespace otlab
