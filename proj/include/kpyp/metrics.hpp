#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace kpyp {

namespace detail {

struct Contingency {
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> row_sums, col_sums;
  double n = 0.0;

  Contingency(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) {
      throw std::invalid_argument("label vectors must have equal length");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      cells[{a[i], b[i]}] += 1.0;
      row_sums[a[i]] += 1.0;
      col_sums[b[i]] += 1.0;
      n += 1.0;
    }
  }
};

inline double choose2(double m) { return 0.5 * m * (m - 1.0); }

}  // namespace detail

/// Adjusted Rand index between two labelings, in [-1, 1]; invariant to label
/// permutations of either argument.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  detail::Contingency ct(a, b);
  if (ct.n < 2.0) return 1.0;
  double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, v] : ct.cells) sum_cells += detail::choose2(v);
  for (const auto& [key, v] : ct.row_sums) sum_rows += detail::choose2(v);
  for (const auto& [key, v] : ct.col_sums) sum_cols += detail::choose2(v);
  const double expected = sum_rows * sum_cols / detail::choose2(ct.n);
  const double maximum = 0.5 * (sum_rows + sum_cols);
  if (maximum == expected) return 1.0;  // both partitions trivial
  return (sum_cells - expected) / (maximum - expected);
}

/// Normalized mutual information with arithmetic-mean normalization, in
/// [0, 1]. Two single-cluster partitions compare as 1 by convention.
inline double normalized_mutual_info(const std::vector<int>& a, const std::vector<int>& b) {
  detail::Contingency ct(a, b);
  double h_a = 0.0, h_b = 0.0, mi = 0.0;
  for (const auto& [key, v] : ct.row_sums) {
    const double p = v / ct.n;
    h_a -= p * std::log(p);
  }
  for (const auto& [key, v] : ct.col_sums) {
    const double p = v / ct.n;
    h_b -= p * std::log(p);
  }
  for (const auto& [key, v] : ct.cells) {
    const double p = v / ct.n;
    const double pa = ct.row_sums.at(key.first) / ct.n;
    const double pb = ct.col_sums.at(key.second) / ct.n;
    mi += p * std::log(p / (pa * pb));
  }
  const double denom = 0.5 * (h_a + h_b);
  if (denom <= 0.0) return 1.0;  // both partitions are single clusters
  return std::max(0.0, mi / denom);
}

}  // namespace kpyp
