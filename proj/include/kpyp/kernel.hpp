#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "kpyp/special_math.hpp"

namespace kpyp {

/// Predictor position on the D-dimensional lattice (pixel coordinates for
/// images, time index for sequences).
using Location = Eigen::VectorXd;

enum class KernelFamily {
  RBF,  ///< exp(-||x - center||^2 / width^2)
  One,  ///< constant 1 everywhere; reduces the prior to its kernel-free form
};

/// Proximity kernel attached to one cluster: family, center and width, with a
/// lower clamp that keeps every evaluation inside [floor, 1] so downstream
/// Beta shapes stay valid.
struct KernelSpec {
  KernelFamily family = KernelFamily::RBF;
  Location center;
  double width = 1.0;
  double floor = 1e-6;

  void validate() const {
    if (!(width > 0.0) || !std::isfinite(width)) {
      throw std::invalid_argument("KernelSpec: width must be finite and positive");
    }
    if (!(floor > 0.0) || !(floor < 0.5)) {
      throw std::invalid_argument("KernelSpec: floor must lie in (0, 0.5)");
    }
    if (family == KernelFamily::RBF && !center.allFinite()) {
      throw std::invalid_argument("KernelSpec: center must be finite");
    }
  }
};

/// Kernel value at location x, clamped to [floor, 1]. Equals 1 exactly at the
/// center and decreases monotonically with distance.
inline double kernel_eval(const KernelSpec& spec, const Location& x) {
  if (spec.family == KernelFamily::One) return 1.0;
  if (x.size() != spec.center.size()) {
    throw std::invalid_argument("kernel_eval: location dimension " + std::to_string(x.size()) +
                                " does not match center dimension " +
                                std::to_string(spec.center.size()));
  }
  const double d2 = (x - spec.center).squaredNorm();
  const double v = std::exp(-d2 / (spec.width * spec.width));
  return std::max(v, spec.floor);
}

/// Half the diagonal of the bounding box of a set of locations (rows); the
/// default kernel width at initialization.
inline double half_lattice_diagonal(const Eigen::MatrixXd& locations) {
  if (locations.rows() == 0) throw std::invalid_argument("half_lattice_diagonal: empty input");
  const Eigen::VectorXd span =
      locations.colwise().maxCoeff() - locations.colwise().minCoeff();
  const double diag = span.norm();
  return diag > 0.0 ? 0.5 * diag : 1.0;
}

}  // namespace kpyp
