#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kpyp/special_math.hpp"

namespace kpyp {

/// Truncated stick sequence: every entry in [0, 1], last entry exactly 1.
struct StickVector {
  std::vector<double> v;

  StickVector() = default;
  explicit StickVector(std::vector<double> values) : v(std::move(values)) {
    if (v.empty()) throw std::invalid_argument("StickVector: empty");
    for (double s : v) {
      if (!(s >= 0.0 && s <= 1.0)) {
        throw std::invalid_argument("StickVector: entries must lie in [0, 1]");
      }
    }
    if (v.back() != 1.0) {
      throw std::invalid_argument("StickVector: final stick must be exactly 1");
    }
  }

  std::size_t size() const { return v.size(); }
};

/// Mixture weights w_c = v_c * prod_{j<c} (1 - v_j); sums to 1 by the
/// telescoping identity when the final stick is 1.
inline std::vector<double> stick_weights(const StickVector& sticks) {
  std::vector<double> w(sticks.size());
  double remaining = 1.0;
  for (std::size_t c = 0; c < sticks.size(); ++c) {
    w[c] = sticks.v[c] * remaining;
    remaining *= 1.0 - sticks.v[c];
  }
  return w;
}

/// Stick prior Beta(k, alpha + c(1-k)) for the c-th stick (1-based) at kernel
/// value k. With constant k = 1-d this is the Pitman-Yor stick prior
/// Beta(1-d, alpha + dc); with k = 1 it is the Dirichlet-process Beta(1, alpha).
inline BetaParams kpyp_stick_prior(double k_val, double alpha, int c) {
  if (!(k_val > 0.0) || !(k_val <= 1.0)) {
    throw std::invalid_argument("kpyp_stick_prior: kernel value must lie in (0, 1]; clamp via "
                                "KernelSpec.floor before calling");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("kpyp_stick_prior: alpha must be positive");
  if (c < 1) throw std::invalid_argument("kpyp_stick_prior: stick index must be >= 1");
  return BetaParams(k_val, alpha + static_cast<double>(c) * (1.0 - k_val));
}

/// Mean and variance of the stick prior above, in closed form.
inline std::pair<double, double> kpyp_stick_moments(double k_val, double alpha, int c) {
  return beta_mean_var(kpyp_stick_prior(k_val, alpha, c));
}

/// Mean and variance of the kernel stick-breaking stick v = V * k with
/// V ~ Beta(1, alpha).
inline std::pair<double, double> ksbp_stick_moments(double k_val, double alpha) {
  if (!(k_val >= 0.0 && k_val <= 1.0)) {
    throw std::invalid_argument("ksbp_stick_moments: kernel value must lie in [0, 1]");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("ksbp_stick_moments: alpha must be positive");
  const double mean = k_val / (1.0 + alpha);
  const double var = k_val * k_val * alpha / ((1.0 + alpha) * (1.0 + alpha) * (alpha + 2.0));
  return {mean, var};
}

}  // namespace kpyp
