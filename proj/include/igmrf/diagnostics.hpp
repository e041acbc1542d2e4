#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "igmrf/error.hpp"
#include "igmrf/mesh.hpp"

namespace igmrf {

enum class R2Baseline { constant, grain_means };

/// Adjusted coefficient of determination 1 - (1 - R^2)(n - 1)/(n - p - 1),
/// with R^2 = 1 - SSE / SST and SST taken about the chosen baseline
/// (overall mean, or per-grain means).
inline double r2_adjusted(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted, int p_effective,
                          R2Baseline baseline, const std::vector<int>& grain_of_element = {}) {
  const auto n = y.size();
  if (fitted.size() != n) throw std::invalid_argument("r2_adjusted: y and fitted lengths differ");
  if (p_effective < 0 || p_effective >= n - 1) {
    throw NumericError("r2_adjusted: p_effective=" + std::to_string(p_effective) + " leaves no residual degrees of freedom (n=" +
                       std::to_string(n) + ")");
  }
  Eigen::VectorXd base(n);
  if (baseline == R2Baseline::constant) {
    base.setConstant(y.mean());
  } else {
    if (static_cast<Eigen::Index>(grain_of_element.size()) != n) {
      throw std::invalid_argument("r2_adjusted: grain-means baseline needs grain_of_element");
    }
    const int G = *std::max_element(grain_of_element.begin(), grain_of_element.end());
    std::vector<double> sum(static_cast<std::size_t>(G), 0.0), count(static_cast<std::size_t>(G), 0.0);
    for (Eigen::Index m = 0; m < n; ++m) {
      sum[static_cast<std::size_t>(grain_of_element[m] - 1)] += y[m];
      count[static_cast<std::size_t>(grain_of_element[m] - 1)] += 1.0;
    }
    for (Eigen::Index m = 0; m < n; ++m) {
      const auto g = static_cast<std::size_t>(grain_of_element[m] - 1);
      base[m] = sum[g] / count[g];
    }
  }
  const double sse = (y - fitted).squaredNorm();
  const double sst = (y - base).squaredNorm();
  if (!(sst > 0.0)) return sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  const double r2 = 1.0 - sse / sst;
  const double nn = static_cast<double>(n);
  return 1.0 - (1.0 - r2) * (nn - 1.0) / (nn - p_effective - 1.0);
}

/// r_m / (sqrt(omega_m) sigma), all from the same iteration.
inline Eigen::VectorXd standardized_residuals(const Eigen::VectorXd& residual, const Eigen::VectorXd& omega,
                                              double sigma2) {
  if (omega.size() != residual.size()) throw std::invalid_argument("standardized_residuals: length mismatch");
  return (residual.array() / (omega.array().sqrt() * std::sqrt(sigma2))).matrix();
}

/// Distance from every element centroid to the nearest boundary node of any order.
inline std::vector<double> boundary_distances(const GrainMesh& mesh, const BoundaryGeometry& bg) {
  std::vector<int> nodes(bg.second.node_of.begin(), bg.second.node_of.end());
  nodes.insert(nodes.end(), bg.third.node_of.begin(), bg.third.node_of.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  const auto cents = centroids(mesh);
  std::vector<double> out(cents.size(), std::numeric_limits<double>::infinity());
  for (std::size_t m = 0; m < cents.size(); ++m) {
    for (int v : nodes) out[m] = std::min(out[m], (cents[m] - mesh.nodes[static_cast<std::size_t>(v)]).norm());
  }
  return out;
}

struct DistanceBin {
  double lower = 0.0;
  double upper = 0.0;
  double center = 0.0;
  long count = 0;
  double mean = 0.0;
  double sd = 0.0;  // NaN when count < 2
};

/// Values binned on equal-width distance bins spanning [0, max distance];
/// every realization contributes its values to the pooled per-bin moments.
inline std::vector<DistanceBin> boundary_distance_profile(const std::vector<double>& distances,
                                                          const std::vector<Eigen::VectorXd>& realizations,
                                                          int bins) {
  if (bins < 1) throw std::invalid_argument("boundary_distance_profile: bins must be positive");
  double dmax = 0.0;
  for (double d : distances) dmax = std::max(dmax, d);
  const double width = dmax > 0.0 ? dmax / bins : 1.0;
  std::vector<DistanceBin> out(static_cast<std::size_t>(bins));
  std::vector<double> sum(out.size(), 0.0), sumsq(out.size(), 0.0);
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].lower = b * width;
    out[static_cast<std::size_t>(b)].upper = (b + 1) * width;
    out[static_cast<std::size_t>(b)].center = (b + 0.5) * width;
  }
  // Two passes per bin (mean, then squared deviations) for accuracy.
  std::vector<int> bin_of(distances.size());
  for (std::size_t m = 0; m < distances.size(); ++m) {
    bin_of[m] = std::min(bins - 1, static_cast<int>(distances[m] / width));
  }
  for (const auto& values : realizations) {
    if (static_cast<std::size_t>(values.size()) != distances.size()) {
      throw std::invalid_argument("boundary_distance_profile: values and distances differ in length");
    }
    for (std::size_t m = 0; m < distances.size(); ++m) {
      const auto b = static_cast<std::size_t>(bin_of[m]);
      sum[b] += values[static_cast<Eigen::Index>(m)];
      ++out[b].count;
    }
  }
  for (std::size_t b = 0; b < out.size(); ++b) out[b].mean = out[b].count > 0 ? sum[b] / out[b].count : 0.0;
  for (const auto& values : realizations) {
    for (std::size_t m = 0; m < distances.size(); ++m) {
      const auto b = static_cast<std::size_t>(bin_of[m]);
      const double d = values[static_cast<Eigen::Index>(m)] - out[b].mean;
      sumsq[b] += d * d;
    }
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].sd = out[b].count > 1 ? std::sqrt(sumsq[b] / (out[b].count - 1)) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline std::vector<DistanceBin> boundary_distance_profile(const GrainMesh& mesh, const BoundaryGeometry& bg,
                                                          const Eigen::VectorXd& values, int bins) {
  return boundary_distance_profile(boundary_distances(mesh, bg), std::vector<Eigen::VectorXd>{values}, bins);
}

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct TraceSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  double lag1 = 0.0;  // lag-1 autocorrelation; NaN for constant or short traces
};

inline TraceSummary summarize_trace(const std::string& name, const std::vector<double>& x) {
  TraceSummary s;
  s.name = name;
  const auto n = x.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (n == 0) {
    s.mean = s.sd = s.q05 = s.q50 = s.q95 = s.lag1 = nan;
    return s;
  }
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (x[i] - s.mean) * (x[i] - s.mean);
  for (std::size_t i = 1; i < n; ++i) cross += (x[i] - s.mean) * (x[i - 1] - s.mean);
  s.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : nan;
  s.lag1 = (n > 2 && ss > 0.0) ? cross / ss : nan;
  s.q05 = quantile(x, 0.05);
  s.q50 = quantile(x, 0.5);
  s.q95 = quantile(x, 0.95);
  return s;
}

/// Asymptotic Kolmogorov distribution tail P(K > x).
inline double kolmogorov_tail(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-300) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction of the effective size).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d)};
}

/// One-sample KS test against a continuous CDF.
template <class Cdf>
KsResult ks_one_sample(std::vector<double> x, Cdf cdf) {
  if (x.empty()) throw std::invalid_argument("ks_one_sample: empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double ne = std::sqrt(n);
  return {d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d)};
}

struct TrendResult {
  double tau = 0.0;           // Kendall's tau between position and value
  long statistic = 0;         // S = concordant - discordant pairs
  double p_decreasing = 1.0;  // exact P(S <= observed) under exchangeability
  double p_increasing = 1.0;  // exact P(S >= observed)
};

/// Exact Kendall (Mann-Kendall) trend test of a sequence against its order.
/// Ties contribute zero to S; the null distribution assumes no ties.
inline TrendResult kendall_trend_test(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 2) throw std::invalid_argument("kendall_trend_test: need at least 2 values");
  if (n > 60) throw std::invalid_argument("kendall_trend_test: exact distribution limited to 60 values");
  TrendResult r;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (x[static_cast<std::size_t>(j)] > x[static_cast<std::size_t>(i)]) ++r.statistic;
      if (x[static_cast<std::size_t>(j)] < x[static_cast<std::size_t>(i)]) --r.statistic;
    }
  }
  const long pairs = static_cast<long>(n) * (n - 1) / 2;
  r.tau = static_cast<double>(r.statistic) / static_cast<double>(pairs);
  // Number of permutations of k items with j inversions (Mahonian numbers),
  // kept as probabilities to stay in range.
  std::vector<double> dist{1.0};
  for (int k = 2; k <= n; ++k) {
    std::vector<double> next(dist.size() + static_cast<std::size_t>(k - 1), 0.0);
    for (std::size_t j = 0; j < dist.size(); ++j) {
      for (int add = 0; add < k; ++add) next[j + static_cast<std::size_t>(add)] += dist[j] / k;
    }
    dist = std::move(next);
  }
  // S = pairs - 2 * inversions in the absence of ties.
  const double s_obs = static_cast<double>(r.statistic);
  double p_le = 0.0, p_ge = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    const double s = static_cast<double>(pairs) - 2.0 * static_cast<double>(j);
    if (s <= s_obs + 1e-9) p_le += dist[j];
    if (s >= s_obs - 1e-9) p_ge += dist[j];
  }
  r.p_decreasing = std::min(1.0, p_le);
  r.p_increasing = std::min(1.0, p_ge);
  return r;
}

/// Goodness-of-fit summary of one fitted chain.
struct FitReport {
  double r2_adj_constant = 0.0;
  double r2_adj_grain = 0.0;
  int p_effective = 0;
  int iteration = 0;  // iteration the residual diagnostics refer to
  Eigen::VectorXd residuals;
  Eigen::VectorXd standardized;
  std::vector<TraceSummary> traces;
  std::vector<DistanceBin> profile;
};

}  // namespace igmrf
