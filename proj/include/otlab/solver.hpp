#pragma once

#include <cstdint>
#include <vector>

#include "otlab/measure.hpp"

namespace otlab {

struct CouplingEntry {
  std::int64_t i;
  std::int64_t j;
  double mass;
};

// Transport plan between two discrete measures with squared-Euclidean cost.
// Entries are sorted by (i, j), strictly positive, and their row and column
// sums must match the marginal weights within 1e-9. Dual potentials are
// optional: solver output carries them, hand-built plans usually do not.
class Coupling {
 public:
  Coupling(DiscreteMeasure source, DiscreteMeasure target,
           std::vector<CouplingEntry> entries, std::vector<double> dual_f = {},
           std::vector<double> dual_g = {});

  const DiscreteMeasure& source() const { return source_; }
  const DiscreteMeasure& target() const { return target_; }
  const std::vector<CouplingEntry>& entries() const { return entries_; }

  // sum_ij mass_ij |x_i - y_j|^2, recomputed from the entries.
  double cost() const { return cost_; }

  bool has_duals() const { return !dual_f_.empty(); }
  const std::vector<double>& dual_f() const { return dual_f_; }
  const std::vector<double>& dual_g() const { return dual_g_; }

  Eigen::VectorXd row_marginals() const;
  Eigen::VectorXd col_marginals() const;

 private:
  DiscreteMeasure source_;
  DiscreteMeasure target_;
  std::vector<CouplingEntry> entries_;
  std::vector<double> dual_f_, dual_g_;
  double cost_ = 0.0;
};

struct SolveOptions {
  // 0 means unlimited. The pivot cap is deterministic; the wall-clock cap is
  // not, so it is off unless a caller opts in.
  std::int64_t max_pivots = 0;
  double time_limit_seconds = 0.0;
};

// Exact optimal transport between discrete measures under squared-Euclidean
// cost, via network simplex on the dense bipartite transportation graph.
// Weights are scaled to a common integer grid (the largest denominator that
// keeps all flow arithmetic inside int64) so pivots run exactly, and the
// right-hand side is perturbed a la Dantzig so no basis is ever degenerate;
// the returned plan's marginals match the inputs far inside the 1e-9
// tolerance. Output includes dual potentials (f, g) with f_i + g_j <= c_ij
// on every pair and equality on the support.
Coupling solve_kantorovich(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           const SolveOptions& opts = {});

// Wasserstein-2 distance: sqrt of the optimal cost.
double w2(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

// Oracle for small instances: both measures uniform with n == m <= 12 atoms;
// enumerates all n! permutation couplings and returns the best one. No duals.
Coupling brute_force_assignment(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu);

// sum_ij mass_ij <x_i, y_j>.
double coupling_correlation(const Coupling& c);

// The plan as a measure on R^{2d}: one atom (x_i, y_j) per entry.
DiscreteMeasure coupling_as_measure(const Coupling& c);

// Deterministic coupling (Id, T)#mu: entry (i, i) with mass w_i, target
// points T(x_i).
Coupling graph_coupling(const DiscreteMeasure& mu, const MapFn& map);

}  // namespace otlab
