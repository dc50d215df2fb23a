#pragma once

// Rank and linear correlation between predicted and ground-truth scores.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dna/errors.hpp"

namespace dna {

namespace detail {
inline void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("correlation inputs differ in length");
  if (a.size() < 2) throw ContractError("correlation needs at least two samples");
}
inline int sign(double v) { return (v > 0) - (v < 0); }
}  // namespace detail

// Kendall tau-b.
inline double kendall_tau(std::span<const double> pred, std::span<const double> truth) {
  detail::check_pair(pred, truth);
  const std::size_t n = pred.size();
  long long concordant = 0, discordant = 0, ties_pred = 0, ties_truth = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const int a = detail::sign(pred[i] - pred[j]);
      const int b = detail::sign(truth[i] - truth[j]);
      if (a == 0) ++ties_pred;
      if (b == 0) ++ties_truth;
      if (a == 0 || b == 0) continue;
      (a == b ? concordant : discordant)++;
    }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((pairs - static_cast<double>(ties_pred)) * (pairs - static_cast<double>(ties_truth)));
  if (denom == 0.0) throw UndefinedCorrelationError("kendall tau undefined: an input is constant");
  return static_cast<double>(concordant - discordant) / denom;
}

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("pearson r undefined: an input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson_r(rx, ry);
}

struct RankingReport {
  double kendall_tau = 0.0;
  double spearman_rho = 0.0;
  double pearson_r = 0.0;
  std::size_t n = 0;
};

// Both inputs are losses (lower is better), so a positive coefficient means agreement.
inline RankingReport correlate(std::span<const double> pred, std::span<const double> truth) {
  return {kendall_tau(pred, truth), spearman_rho(pred, truth), pearson_r(pred, truth), pred.size()};
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dna
