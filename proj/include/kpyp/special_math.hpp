#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

// Scalar special functions and Beta/Gamma distribution summaries used by the
// stick-breaking priors and the variational updates. All functions are pure
// and thread-safe.

namespace kpyp {

namespace detail {

// Smallest argument accepted by the digamma/log-gamma family. Kernel values
// are clamped well above this, but user-supplied shapes may come close.
inline constexpr double kMinShapeArg = 1e-12;

inline void check_shape_arg(double x, const char* fn) {
  if (!(x >= kMinShapeArg) || !std::isfinite(x)) {
    throw std::domain_error(std::string(fn) + ": argument must be finite and >= 1e-12, got " +
                            std::to_string(x));
  }
}

}  // namespace detail

/// Digamma psi(x) for x > 0. Recurrence shift to x >= 10, then the asymptotic
/// expansion in Bernoulli numbers; absolute error below 1e-12 over the
/// supported range.
inline double digamma(double x) {
  detail::check_shape_arg(x, "digamma");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // B_2/2, B_4/4, ... B_16/16 over x^{2k}
  const double series = inv2 * (1.0 / 12.0 -
                        inv2 * (1.0 / 120.0 -
                        inv2 * (1.0 / 252.0 -
                        inv2 * (1.0 / 240.0 -
                        inv2 * (1.0 / 132.0 -
                        inv2 * (691.0 / 32760.0 -
                        inv2 * (1.0 / 12.0)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

/// Trigamma psi'(x) for x > 0, same shift-plus-asymptotic-series scheme.
inline double trigamma(double x) {
  detail::check_shape_arg(x, "trigamma");
  double shift = 0.0;
  while (x < 10.0) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // 1/x + 1/(2x^2) + sum B_2k / x^{2k+1}
  const double series = inv * (1.0 +
                        inv * (0.5 +
                        inv * (1.0 / 6.0 -
                        inv2 * (1.0 / 30.0 -
                        inv2 * (1.0 / 42.0 -
                        inv2 * (1.0 / 30.0 -
                        inv2 * (5.0 / 66.0 -
                        inv2 * (691.0 / 2730.0))))))));
  return shift + series;
}

/// ln Gamma(x) for x > 0 via recurrence shift plus the Stirling series.
inline double log_gamma(double x) {
  detail::check_shape_arg(x, "log_gamma");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= std::log(x);
    x += 1.0;
  }
  constexpr double half_log_two_pi = 0.91893853320467274178;
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // B_2k / (2k(2k-1) x^{2k-1})
  const double series = inv * (1.0 / 12.0 -
                        inv2 * (1.0 / 360.0 -
                        inv2 * (1.0 / 1260.0 -
                        inv2 * (1.0 / 1680.0 -
                        inv2 * (1.0 / 1188.0 -
                        inv2 * (691.0 / 360360.0))))));
  return shift + (x - 0.5) * std::log(x) - x + half_log_two_pi + series;
}

/// ln B(a, b) = ln Gamma(a) + ln Gamma(b) - ln Gamma(a + b).
inline double log_beta(double a, double b) {
  return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

/// Shape pair of a Beta distribution; both shapes strictly positive.
struct BetaParams {
  double a = 1.0;
  double b = 1.0;

  BetaParams() = default;
  BetaParams(double a_, double b_) : a(a_), b(b_) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
      throw std::invalid_argument("BetaParams: shapes must be finite and positive");
    }
  }
};

/// Shape/rate pair of a Gamma distribution.
struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;

  GammaParams() = default;
  GammaParams(double shape_, double rate_) : shape(shape_), rate(rate_) {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
      throw std::invalid_argument("GammaParams: shape and rate must be finite and positive");
    }
  }

  double mean() const { return shape / rate; }
};

/// Mean and variance of Beta(a, b).
inline std::pair<double, double> beta_mean_var(const BetaParams& p) {
  const double s = p.a + p.b;
  const double mean = p.a / s;
  const double var = p.a * p.b / (s * s * (s + 1.0));
  return {mean, var};
}

/// (E[log v], E[log(1-v)]) under v ~ Beta(a, b).
inline std::pair<double, double> expected_log_stick(const BetaParams& p) {
  const double dsum = digamma(p.a + p.b);
  return {digamma(p.a) - dsum, digamma(p.b) - dsum};
}

/// KL(Beta(q) || Beta(p)).
inline double beta_kl(const BetaParams& q, const BetaParams& p) {
  const double dq = digamma(q.a + q.b);
  return log_beta(p.a, p.b) - log_beta(q.a, q.b) + (q.a - p.a) * (digamma(q.a) - dq) +
         (q.b - p.b) * (digamma(q.b) - dq);
}

/// KL(Gamma(q) || Gamma(p)), shape/rate parameterization.
inline double gamma_kl(const GammaParams& q, const GammaParams& p) {
  return (q.shape - p.shape) * digamma(q.shape) - log_gamma(q.shape) + log_gamma(p.shape) +
         p.shape * (std::log(q.rate) - std::log(p.rate)) + q.shape * (p.rate - q.rate) / q.rate;
}

}  // namespace kpyp
