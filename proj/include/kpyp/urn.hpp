#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "kpyp/kernel.hpp"

namespace kpyp {

enum class UrnMode { DP, PYP, KPYP };

/// Occupancy state of the generalized Polya urn after M-1 draws.
///
/// discount_or_kernel holds, per existing cluster, the PYP discount d (PYP
/// mode) or the kernel value k(x, center_c; width_c) at the next draw's
/// location (KPYP mode); it is ignored in DP mode.
struct UrnState {
  std::vector<int> counts;
  std::vector<double> discount_or_kernel;
  double innovation = 1.0;  // alpha

  int total() const {
    int t = 0;
    for (int f : counts) t += f;
    return t;
  }
};

/// Predictive probabilities over [existing clusters..., new draw].
///
/// Numerators: f_c (DP), f_c - d (PYP), f_c + k_c - 1 (KPYP); the new-draw
/// mass is alpha, alpha + d*C, or alpha + sum_c (1 - k_c) respectively. The
/// shared denominator alpha + M - 1 makes the vector sum to 1.
inline std::vector<double> urn_predictive(const UrnState& state, UrnMode mode) {
  const std::size_t C = state.counts.size();
  for (int f : state.counts) {
    if (f < 1) throw std::invalid_argument("urn_predictive: cluster counts must be >= 1");
  }
  const double alpha = state.innovation;
  if (mode == UrnMode::PYP) {
    if (C > 0 && state.discount_or_kernel.size() != C) {
      throw std::invalid_argument("urn_predictive: discount vector size mismatch");
    }
    for (double d : state.discount_or_kernel) {
      if (!(d >= 0.0 && d < 1.0)) {
        throw std::invalid_argument("urn_predictive: PYP discount must lie in [0, 1)");
      }
      if (!(alpha > -d)) {
        throw std::invalid_argument("urn_predictive: PYP requires alpha > -d");
      }
    }
  } else if (!(alpha > 0.0)) {
    throw std::invalid_argument("urn_predictive: alpha must be positive");
  }
  if (mode == UrnMode::KPYP) {
    if (state.discount_or_kernel.size() != C) {
      throw std::invalid_argument("urn_predictive: kernel vector size mismatch");
    }
    for (double k : state.discount_or_kernel) {
      if (!(k > 0.0 && k <= 1.0)) {
        throw std::invalid_argument("urn_predictive: kernel values must lie in (0, 1]");
      }
    }
  }

  std::vector<double> p(C + 1, 0.0);
  double new_mass = alpha;
  for (std::size_t c = 0; c < C; ++c) {
    switch (mode) {
      case UrnMode::DP:
        p[c] = state.counts[c];
        break;
      case UrnMode::PYP:
        p[c] = state.counts[c] - state.discount_or_kernel[c];
        new_mass += state.discount_or_kernel[c];
        break;
      case UrnMode::KPYP:
        p[c] = state.counts[c] + state.discount_or_kernel[c] - 1.0;
        new_mass += 1.0 - state.discount_or_kernel[c];
        break;
    }
  }
  p[C] = new_mass;
  const double denom = alpha + state.total();
  for (double& q : p) q /= denom;
  return p;
}

/// Configuration for a sequential urn simulation.
///
/// KPYP draws need locations: each draw is placed uniformly at random on the
/// unit lattice [0,1]^dim and a cluster founded by a draw takes that draw's
/// location as its center.
struct UrnPathConfig {
  UrnMode mode = UrnMode::DP;
  double alpha = 1.0;
  double discount = 0.0;      // PYP
  double kernel_width = 0.5;  // KPYP
  double kernel_floor = 1e-6; // KPYP
  int dim = 2;                // KPYP lattice dimension
};

/// Simulates M sequential draws from the urn and returns the number of unique
/// clusters after each draw. Deterministic for a fixed seed.
inline std::vector<int> sample_urn_path(const UrnPathConfig& cfg, int draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("sample_urn_path: need at least one draw");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<int> counts;
  std::vector<Location> centers;
  std::vector<int> trajectory;
  trajectory.reserve(draws);
  int total = 0;

  const double inv_w2 = 1.0 / (cfg.kernel_width * cfg.kernel_width);
  const auto kernel_at = [&](std::size_t c, const Location& x) {
    const double v = std::exp(-(x - centers[c]).squaredNorm() * inv_w2);
    return std::max(v, cfg.kernel_floor);
  };

  Location x(cfg.dim);
  for (int m = 0; m < draws; ++m) {
    if (cfg.mode == UrnMode::KPYP) {
      for (int d = 0; d < cfg.dim; ++d) x[d] = unif(rng);
    }
    // Walk the unnormalized predictive mass; whatever u is left after the
    // existing clusters falls into the new-draw bucket.
    const std::size_t C = counts.size();
    const double denom = cfg.alpha + total;
    double u = unif(rng) * denom;
    std::size_t pick = C;
    for (std::size_t c = 0; c < C; ++c) {
      double numer = counts[c];
      if (cfg.mode == UrnMode::PYP) {
        numer -= cfg.discount;
      } else if (cfg.mode == UrnMode::KPYP) {
        numer += kernel_at(c, x) - 1.0;
      }
      if (u < numer) {
        pick = c;
        break;
      }
      u -= numer;
    }
    if (pick == C) {
      counts.push_back(1);
      if (cfg.mode == UrnMode::KPYP) centers.push_back(x);
    } else {
      ++counts[pick];
    }
    ++total;
    trajectory.push_back(static_cast<int>(counts.size()));
  }
  return trajectory;
}

}  // namespace kpyp
