#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace kpyp {

/// Partition of the observations into groups sharing bitwise-identical
/// predictor coordinates. Stick posteriors are maintained per unique location.
struct LocationGroups {
  Eigen::MatrixXd unique;                 // U x D, one row per unique location
  std::vector<std::vector<int>> members;  // observation indices per group
  std::vector<int> group_of;              // N, observation -> group index
  Eigen::VectorXd sizes;                  // U, members per group

  int count() const { return static_cast<int>(members.size()); }
};

namespace detail {

struct CoordKey {
  std::vector<std::uint64_t> bits;
  bool operator==(const CoordKey&) const = default;
};

struct CoordKeyHash {
  std::size_t operator()(const CoordKey& k) const {
    std::size_t h = 1469598103934665603ull;
    for (std::uint64_t b : k.bits) {
      h ^= b;
      h *= 1099511628211ull;
    }
    return h;
  }
};

}  // namespace detail

/// Groups rows of `locations` by exact (bitwise) coordinate equality.
inline LocationGroups group_locations(const Eigen::MatrixXd& locations) {
  const int n = static_cast<int>(locations.rows());
  const int d = static_cast<int>(locations.cols());
  if (n == 0 || d == 0) throw std::invalid_argument("group_locations: empty input");
  if (!locations.allFinite()) {
    throw std::invalid_argument("group_locations: locations must be finite");
  }

  LocationGroups g;
  g.group_of.resize(n);
  std::unordered_map<detail::CoordKey, int, detail::CoordKeyHash> index;
  index.reserve(n);
  std::vector<int> first_row;
  for (int i = 0; i < n; ++i) {
    detail::CoordKey key;
    key.bits.resize(d);
    for (int j = 0; j < d; ++j) key.bits[j] = std::bit_cast<std::uint64_t>(locations(i, j));
    auto [it, inserted] = index.emplace(std::move(key), static_cast<int>(g.members.size()));
    if (inserted) {
      g.members.emplace_back();
      first_row.push_back(i);
    }
    g.members[it->second].push_back(i);
    g.group_of[i] = it->second;
  }

  const int u = static_cast<int>(g.members.size());
  g.unique.resize(u, d);
  g.sizes.resize(u);
  for (int k = 0; k < u; ++k) {
    g.unique.row(k) = locations.row(first_row[k]);
    g.sizes[k] = static_cast<double>(g.members[k].size());
  }
  return g;
}

/// Overload for explicit location lists; validates dimensional consistency.
inline LocationGroups group_locations(const std::vector<Eigen::VectorXd>& locations) {
  if (locations.empty()) throw std::invalid_argument("group_locations: empty input");
  const Eigen::Index d = locations.front().size();
  for (const auto& x : locations) {
    if (x.size() != d) {
      throw std::invalid_argument("group_locations: inconsistent location dimensionality");
    }
  }
  Eigen::MatrixXd m(static_cast<int>(locations.size()), d);
  for (std::size_t i = 0; i < locations.size(); ++i) m.row(static_cast<int>(i)) = locations[i];
  return group_locations(m);
}

}  // namespace kpyp
