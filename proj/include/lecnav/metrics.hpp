#pragma once

// Run evaluation: cumulative power-penalty ratio over an episode,
// Savitzky-Golay curve smoothing, and convergence-episode detection.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lecnav/common.hpp"

namespace lecnav::metrics {

// Per-episode mean-return series plus provenance.
struct RunCurve {
  std::vector<double> values;
  std::string scheme;  // trainer that produced it, e.g. "ec" or "lec"
  uint64_t seed = 0;
  std::string config_hash;
};

// Cumulative power-penalty ratio for one UE after t steps of a completed
// episode: (weak-channel steps among the UE's first t) / max_j T_j.
// step_gains holds the |h|^2 at the cell each of the UE's steps lands on
// (length = that UE's T_j); lengths and arrived cover all UEs. Steps past the
// UE's own arrival accrue nothing. Throws MetricError if any UE failed to
// arrive, t is outside [0, max_j T_j], or the sizes are inconsistent.
double cppr(const std::vector<double>& step_gains, double eta,
            const std::vector<int>& lengths, const std::vector<bool>& arrived,
            int t);

// cppr evaluated at every t in 1..max_j T_j.
std::vector<double> cppr_curve(const std::vector<double>& step_gains, double eta,
                               const std::vector<int>& lengths,
                               const std::vector<bool>& arrived);

// Savitzky-Golay: least-squares polynomial of `poly_order` over a centered
// window, evaluated at the center. Near the edges the window shrinks
// symmetrically (endpoints pass through). Requires window odd, larger than
// poly_order, and no longer than the curve; MetricError otherwise.
std::vector<double> smooth(const std::vector<double>& curve, int poly_order,
                           int window);
RunCurve smooth(const RunCurve& curve, int poly_order, int window);

// Odd window spanning roughly a tenth of the curve, floored so an
// order-`poly_order` fit stays determined.
int suggested_window(int length, int poly_order);

// Earliest episode from which the (already smoothed) curve stays at or above
// fraction * max(curve) through the end; nullopt if it never does.
std::optional<int> convergence_episode(const std::vector<double>& smoothed,
                                       double fraction = 0.8);

// Indices of the k smallest values, ascending by value, ties to the lower
// index. The scenario selector ("best 8 of 20") runs on travel times.
std::vector<int> top_k_indices(const std::vector<double>& values, int k);

// Relative improvement (base - improved) / base; base must be positive.
double percentage_reduction(double base, double improved);

}  // namespace lecnav::metrics
