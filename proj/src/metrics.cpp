#include "lecnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lecnav/channel.hpp"

namespace lecnav::metrics {

namespace {

int checked_max_time(const std::vector<double>& step_gains,
                     const std::vector<int>& lengths,
                     const std::vector<bool>& arrived) {
  if (lengths.empty() || lengths.size() != arrived.size())
    throw MetricError("cppr: episode lengths and arrival flags must match");
  for (bool a : arrived)
    if (!a) throw MetricError("cppr: metric is defined on completed episodes only");
  int max_t = 0;
  for (int l : lengths) {
    if (l <= 0) throw MetricError("cppr: non-positive episode length");
    max_t = std::max(max_t, l);
  }
  if (static_cast<int>(step_gains.size()) > max_t)
    throw MetricError("cppr: more steps than the slowest UE");
  return max_t;
}

// Least-squares polynomial fit over centered offsets, value at offset 0.
// Degree is capped by the number of points; normal equations solved by
// Gaussian elimination with partial pivoting.
double window_fit(const std::vector<double>& y, int center, int half, int order) {
  const int points = 2 * half + 1;
  const int degree = std::min(order, points - 1);
  const int m = degree + 1;
  std::vector<double> moments(2 * degree + 1, 0.0);
  std::vector<double> rhs(m, 0.0);
  for (int dx = -half; dx <= half; ++dx) {
    const double v = y[center + dx];
    double xp = 1.0;
    for (int k = 0; k <= 2 * degree; ++k) {
      moments[k] += xp;
      if (k < m) rhs[k] += xp * v;
      xp *= dx;
    }
  }
  std::vector<double> a(static_cast<size_t>(m) * m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) a[static_cast<size_t>(r) * m + c] = moments[r + c];

  for (int col = 0; col < m; ++col) {
    int pivot = col;
    for (int r = col + 1; r < m; ++r)
      if (std::abs(a[static_cast<size_t>(r) * m + col]) >
          std::abs(a[static_cast<size_t>(pivot) * m + col]))
        pivot = r;
    for (int c = 0; c < m; ++c)
      std::swap(a[static_cast<size_t>(col) * m + c], a[static_cast<size_t>(pivot) * m + c]);
    std::swap(rhs[col], rhs[pivot]);
    const double d = a[static_cast<size_t>(col) * m + col];
    for (int r = col + 1; r < m; ++r) {
      const double f = a[static_cast<size_t>(r) * m + col] / d;
      for (int c = col; c < m; ++c)
        a[static_cast<size_t>(r) * m + c] -= f * a[static_cast<size_t>(col) * m + c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> coef(m);
  for (int r = m - 1; r >= 0; --r) {
    double s = rhs[r];
    for (int c = r + 1; c < m; ++c) s -= a[static_cast<size_t>(r) * m + c] * coef[c];
    coef[r] = s / a[static_cast<size_t>(r) * m + r];
  }
  return coef[0];
}

}  // namespace

double cppr(const std::vector<double>& step_gains, double eta,
            const std::vector<int>& lengths, const std::vector<bool>& arrived,
            int t) {
  const int max_t = checked_max_time(step_gains, lengths, arrived);
  if (t < 0 || t > max_t)
    throw MetricError("cppr: t = " + std::to_string(t) + " outside [0, " +
                      std::to_string(max_t) + "]");
  const int upto = std::min<int>(t, static_cast<int>(step_gains.size()));
  int weak = 0;
  for (int u = 0; u < upto; ++u)
    if (chan::is_weak(step_gains[u], eta)) ++weak;
  return static_cast<double>(weak) / max_t;
}

std::vector<double> cppr_curve(const std::vector<double>& step_gains, double eta,
                               const std::vector<int>& lengths,
                               const std::vector<bool>& arrived) {
  const int max_t = checked_max_time(step_gains, lengths, arrived);
  std::vector<double> out;
  out.reserve(max_t);
  int weak = 0;
  for (int t = 1; t <= max_t; ++t) {
    if (t <= static_cast<int>(step_gains.size()) &&
        chan::is_weak(step_gains[t - 1], eta))
      ++weak;
    out.push_back(static_cast<double>(weak) / max_t);
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& curve, int poly_order,
                           int window) {
  const int n = static_cast<int>(curve.size());
  if (poly_order < 0) throw MetricError("smooth: negative polynomial order");
  if (window % 2 == 0) throw MetricError("smooth: window must be odd");
  if (window <= poly_order)
    throw MetricError("smooth: window must exceed the polynomial order");
  if (window > n) throw MetricError("smooth: window longer than the curve");

  const int half = window / 2;
  std::vector<double> out(curve.size());
  for (int i = 0; i < n; ++i) {
    const int h = std::min({half, i, n - 1 - i});
    out[i] = h == 0 ? curve[i] : window_fit(curve, i, h, poly_order);
  }
  return out;
}

RunCurve smooth(const RunCurve& curve, int poly_order, int window) {
  RunCurve out = curve;
  out.values = smooth(curve.values, poly_order, window);
  return out;
}

int suggested_window(int length, int poly_order) {
  int w = std::max(length / 10, poly_order + 2);
  if (w % 2 == 0) ++w;
  return w;
}

std::optional<int> convergence_episode(const std::vector<double>& smoothed,
                                       double fraction) {
  if (smoothed.empty()) throw MetricError("convergence_episode: empty curve");
  if (fraction <= 0.0 || fraction > 1.0)
    throw MetricError("convergence_episode: fraction outside (0, 1]");
  const double r_max = *std::max_element(smoothed.begin(), smoothed.end());
  const double threshold = fraction * r_max;
  int first = static_cast<int>(smoothed.size());
  for (int i = static_cast<int>(smoothed.size()) - 1; i >= 0; --i) {
    if (smoothed[i] < threshold) break;
    first = i;
  }
  if (first == static_cast<int>(smoothed.size())) return std::nullopt;
  return first;
}

std::vector<int> top_k_indices(const std::vector<double>& values, int k) {
  if (k < 0) throw MetricError("top_k_indices: negative k");
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return values[a] < values[b]; });
  idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(k)));
  return idx;
}

double percentage_reduction(double base, double improved) {
  if (base <= 0.0) throw MetricError("percentage_reduction: base must be positive");
  return (base - improved) / base;
}

}  // namespace lecnav::metrics
