#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "kpyp/groups.hpp"
#include "kpyp/kernel.hpp"
#include "kpyp/lbfgs.hpp"
#include "kpyp/special_math.hpp"

// Learning the per-cluster kernel centers and widths by maximizing the
// kernel-dependent part of the free energy, plus the random-selection
// baseline. Widths are optimized in log space so they stay positive.

namespace kpyp {

struct LocationParams {
  Eigen::MatrixXd centers;      // C x D
  Eigen::VectorXd log_widths;   // C entries, or a single shared entry
  bool shared_width = false;

  int clusters() const { return static_cast<int>(centers.rows()); }
  int dim() const { return static_cast<int>(centers.cols()); }

  double width(int c) const {
    return std::exp(shared_width ? log_widths[0] : log_widths[c]);
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(centers.size() + log_widths.size());
    for (int c = 0; c < clusters(); ++c) {
      v.segment(c * dim(), dim()) = centers.row(c).transpose();
    }
    v.tail(log_widths.size()) = log_widths;
    return v;
  }

  static LocationParams unflatten(const Eigen::VectorXd& v, int C, int D, bool shared) {
    LocationParams p;
    p.shared_width = shared;
    p.centers.resize(C, D);
    for (int c = 0; c < C; ++c) p.centers.row(c) = v.segment(c * D, D).transpose();
    p.log_widths = v.tail(shared ? 1 : C);
    return p;
  }
};

/// Builds the per-cluster kernel specs from location parameters.
inline std::vector<KernelSpec> make_kernels(const LocationParams& params, KernelFamily family,
                                            double floor) {
  std::vector<KernelSpec> kernels(params.clusters());
  for (int c = 0; c < params.clusters(); ++c) {
    kernels[c] = KernelSpec{family, params.centers.row(c).transpose(), params.width(c), floor};
    kernels[c].validate();
  }
  return kernels;
}

/// Inputs the location objective needs from the inference state: current
/// stick-posterior log expectations per (unique location, stick) and the
/// posterior mean of alpha. Each unique location's stick appears once.
struct StickObjectiveData {
  Eigen::MatrixXd elogv;   // U x (C-1), E[log v]
  Eigen::MatrixXd e1mv;    // U x (C-1), E[log(1-v)]
  Eigen::MatrixXd unique;  // U x D unique locations
  double alpha_mean = 1.0;
  double floor = 1e-6;
};

/// Kernel-dependent free-energy terms and their gradient with respect to the
/// flattened (centers, log-widths) vector. Kernel evaluations clamped at the
/// floor contribute zero gradient.
inline std::pair<double, Eigen::VectorXd> objective_and_gradient(
    const LocationParams& params, const StickObjectiveData& data) {
  const int C = params.clusters();
  const int D = params.dim();
  const int U = static_cast<int>(data.unique.rows());
  const int sticks = static_cast<int>(data.elogv.cols());
  if (sticks > C - 1) throw std::invalid_argument("objective_and_gradient: stick/cluster mismatch");
  const double A = data.alpha_mean;

  double value = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(C * D + params.log_widths.size());

  for (int c = 0; c < sticks; ++c) {
    const double psi = params.width(c);
    const double inv_w2 = 1.0 / (psi * psi);
    const double t = c + 1.0;
    const int wslot = C * D + (params.shared_width ? 0 : c);
    for (int u = 0; u < U; ++u) {
      const Eigen::VectorXd diff = data.unique.row(u).transpose() - params.centers.row(c).transpose();
      const double r2 = diff.squaredNorm();
      const double k_raw = std::exp(-r2 * inv_w2);
      const bool clamped = k_raw < data.floor;
      const double k = clamped ? data.floor : k_raw;
      const double alpha_c = A + t * (1.0 - k);
      value += (k - 1.0) * data.elogv(u, c) + (alpha_c - 1.0) * data.e1mv(u, c) -
               log_beta(k, alpha_c);
      if (clamped) continue;
      const double dvalue_dk =
          data.elogv(u, c) - t * data.e1mv(u, c) - digamma(k) + t * digamma(alpha_c) -
          (t - 1.0) * digamma(k + alpha_c);
      grad.segment(c * D, D) += dvalue_dk * k * (2.0 * inv_w2) * diff;
      grad[wslot] += dvalue_dk * k * 2.0 * r2 * inv_w2;
    }
  }
  if (!std::isfinite(value) || !grad.allFinite()) {
    for (int c = 0; c < C; ++c) {
      if (!grad.segment(c * D, D).allFinite()) {
        throw std::runtime_error("objective_and_gradient: non-finite gradient for cluster " +
                                 std::to_string(c + 1));
      }
    }
    throw std::runtime_error("objective_and_gradient: non-finite value");
  }
  return {value, std::move(grad)};
}

/// Bounded L-BFGS ascent on (centers, log-widths). Returns the best iterate
/// seen; never worse than the starting point.
inline LocationParams optimize_locations(const LocationParams& start,
                                         const StickObjectiveData& data, int budget) {
  if (budget <= 0) return start;
  const int C = start.clusters();
  const int D = start.dim();
  const bool shared = start.shared_width;

  const auto negative = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const LocationParams p = LocationParams::unflatten(x, C, D, shared);
    auto [value, grad] = objective_and_gradient(p, data);
    g = -grad;
    return -value;
  };

  LbfgsOptions opts;
  opts.memory = 10;
  opts.max_iterations = budget;
  opts.c1 = 1e-4;
  opts.c2 = 0.9;
  const LbfgsResult res = lbfgs_minimize(negative, start.flatten(), opts);

  const auto [f0, g0] = objective_and_gradient(start, data);
  if (-res.fx < f0 - 1e-10) return start;
  return LocationParams::unflatten(res.x, C, D, shared);
}

/// Cluster centers sampled uniformly from the observed locations, without
/// replacement when C <= N (with replacement otherwise). Widths are set to
/// half the lattice diagonal. Deterministic for a fixed seed.
inline LocationParams random_locations(const Eigen::MatrixXd& locations, int C,
                                       std::uint64_t seed, bool shared_width = false) {
  const int n = static_cast<int>(locations.rows());
  if (n == 0) throw std::invalid_argument("random_locations: empty lattice");
  std::mt19937_64 rng(seed);

  LocationParams p;
  p.shared_width = shared_width;
  p.centers.resize(C, locations.cols());
  if (C <= n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int c = 0; c < C; ++c) {
      std::uniform_int_distribution<int> pick(c, n - 1);
      std::swap(idx[c], idx[pick(rng)]);
      p.centers.row(c) = locations.row(idx[c]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int c = 0; c < C; ++c) p.centers.row(c) = locations.row(pick(rng));
  }
  p.log_widths = Eigen::VectorXd::Constant(shared_width ? 1 : C,
                                           std::log(half_lattice_diagonal(locations)));
  return p;
}

}  // namespace kpyp
