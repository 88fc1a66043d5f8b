#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "kpyp/special_math.hpp"

// Conjugate Gaussian observation model: full-covariance Normal-Wishart, with a
// Diagonal option (independent Normal-Gamma per dimension, shared dof/scale)
// for high-dimensional features.

namespace kpyp {

enum class CovarianceType { Full, Diagonal };

/// Normal-Wishart parameters (mean m, scale kappa, dof nu, and the inverse
/// scale matrix of the Wishart, stored as `scatter`).
struct NWParams {
  Eigen::VectorXd mean;
  double scale = 1.0;   // kappa
  double dof = 1.0;     // nu
  Eigen::MatrixXd scatter;
  CovarianceType cov = CovarianceType::Full;

  int dim() const { return static_cast<int>(mean.size()); }

  void validate() const {
    const int d = dim();
    if (d < 1) throw std::invalid_argument("NWParams: empty mean");
    if (!(scale > 0.0)) throw std::invalid_argument("NWParams: scale must be positive");
    if (!(dof > d - 1.0)) throw std::invalid_argument("NWParams: dof must exceed dim - 1");
    if (scatter.rows() != d || scatter.cols() != d) {
      throw std::invalid_argument("NWParams: scatter shape mismatch");
    }
    if (!mean.allFinite() || !scatter.allFinite()) {
      throw std::invalid_argument("NWParams: non-finite entries");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(scatter);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("NWParams: scatter is not positive definite");
    }
  }
};

/// Responsibility-weighted zeroth/first/second moments of the data.
struct SufficientStats {
  double weight = 0.0;
  Eigen::VectorXd weighted_sum;
  Eigen::MatrixXd weighted_outer;
};

/// Accumulates sum_n r_n, sum_n r_n y_n, sum_n r_n y_n y_n^T for one cluster.
/// Rows of `data` are observations.
inline SufficientStats accumulate_stats(const Eigen::VectorXd& responsibilities,
                                        const Eigen::MatrixXd& data) {
  if (responsibilities.size() != data.rows()) {
    throw std::invalid_argument("accumulate_stats: responsibility/data length mismatch");
  }
  for (Eigen::Index n = 0; n < responsibilities.size(); ++n) {
    const double r = responsibilities[n];
    if (!(r >= 0.0 && r <= 1.0 + 1e-12)) {
      throw std::invalid_argument("accumulate_stats: responsibilities must lie in [0, 1]");
    }
  }
  const int d = static_cast<int>(data.cols());
  SufficientStats s;
  s.weight = responsibilities.sum();
  s.weighted_sum = data.transpose() * responsibilities;
  s.weighted_outer = data.transpose() * responsibilities.asDiagonal() * data;
  if (s.weight == 0.0) {
    s.weighted_sum.setZero(d);
    s.weighted_outer.setZero(d, d);
  }
  return s;
}

/// Closed-form Normal-Wishart posterior given prior and accumulated stats.
/// With zero weight the prior is returned unchanged.
inline NWParams nw_posterior(const NWParams& prior, const SufficientStats& stats) {
  const double w = stats.weight;
  NWParams post = prior;
  if (w <= 0.0) return post;

  const Eigen::VectorXd ybar = stats.weighted_sum / w;
  post.scale = prior.scale + w;
  post.dof = prior.dof + w;
  post.mean = (prior.scale * prior.mean + stats.weighted_sum) / post.scale;

  Eigen::MatrixXd centered =
      stats.weighted_outer - stats.weighted_sum * stats.weighted_sum.transpose() / w;
  const Eigen::VectorXd diff = prior.mean - ybar;
  Eigen::MatrixXd shift = (prior.scale * w / post.scale) * (diff * diff.transpose());
  post.scatter = prior.scatter + centered + shift;
  if (prior.cov == CovarianceType::Diagonal) {
    const Eigen::VectorXd diag = post.scatter.diagonal();
    post.scatter = diag.asDiagonal();
  }

  Eigen::LLT<Eigen::MatrixXd> llt(post.scatter);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("nw_posterior: updated scatter is not positive definite");
  }
  return post;
}

/// Cached per-cluster quantities for evaluating <log N(y | mu, Lambda^{-1})>
/// under q(mu, Lambda) = NW. Build once per cluster, evaluate per observation.
class NWPredictor {
 public:
  explicit NWPredictor(const NWParams& p) : p_(p), llt_(p.scatter) {
    if (llt_.info() != Eigen::Success) {
      throw std::runtime_error("NWPredictor: scatter is not positive definite");
    }
    const int d = p.dim();
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt_.matrixL()(i, i));
    double psi_sum = 0.0;
    if (p.cov == CovarianceType::Diagonal) {
      psi_sum = d * digamma(0.5 * p.dof);
    } else {
      for (int i = 0; i < d; ++i) psi_sum += digamma(0.5 * (p.dof - i));
    }
    constexpr double ln2 = 0.6931471805599453;
    constexpr double ln2pi = 1.8378770664093455;
    e_logdet_ = psi_sum + d * ln2 - logdet;
    const_term_ = 0.5 * e_logdet_ - 0.5 * d / p.scale - 0.5 * d * ln2pi;
  }

  double operator()(const Eigen::VectorXd& y) const {
    if (y.size() != p_.mean.size()) {
      throw std::invalid_argument("expected_log_lik: dimension mismatch");
    }
    const Eigen::VectorXd diff = y - p_.mean;
    const double quad = diff.dot(llt_.solve(diff));
    return const_term_ - 0.5 * p_.dof * quad;
  }

  double expected_logdet() const { return e_logdet_; }

 private:
  NWParams p_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double e_logdet_ = 0.0;
  double const_term_ = 0.0;
};

/// Expected Gaussian log-density <log N(y | mu, Lambda^{-1})>_{q(mu, Lambda)}.
inline double expected_log_lik(const NWParams& post, const Eigen::VectorXd& y) {
  return NWPredictor(post)(y);
}

/// KL(NW(q) || NW(p)); both arguments must share the dimension.
inline double nw_kl(const NWParams& q, const NWParams& p) {
  const int d = q.dim();
  if (p.dim() != d) throw std::invalid_argument("nw_kl: dimension mismatch");

  NWPredictor qp(q);
  const double e_logdet = qp.expected_logdet();

  Eigen::LLT<Eigen::MatrixXd> llt_q(q.scatter);
  const Eigen::VectorXd diff = q.mean - p.mean;
  const double quad = diff.dot(llt_q.solve(diff));

  // Conditional Gaussian part, expectation over q(Lambda).
  const double gauss = 0.5 * (d * p.scale / q.scale + p.scale * q.dof * quad - d +
                              d * std::log(q.scale / p.scale));

  // Wishart part. log normalizers use ln|W| = -ln|scatter|.
  double logdet_q = 0.0, logdet_p = 0.0;
  for (int i = 0; i < d; ++i) logdet_q += 2.0 * std::log(llt_q.matrixL()(i, i));
  Eigen::LLT<Eigen::MatrixXd> llt_p(p.scatter);
  if (llt_p.info() != Eigen::Success) {
    throw std::runtime_error("nw_kl: prior scatter is not positive definite");
  }
  for (int i = 0; i < d; ++i) logdet_p += 2.0 * std::log(llt_p.matrixL()(i, i));

  const double trace_term = (llt_q.solve(p.scatter)).trace() * q.dof;
  constexpr double ln2 = 0.6931471805599453;
  double mvlg_q = 0.0, mvlg_p = 0.0;  // multivariate log-gamma without the pi factor
  if (q.cov == CovarianceType::Diagonal) {
    mvlg_q = d * log_gamma(0.5 * q.dof);
    mvlg_p = d * log_gamma(0.5 * p.dof);
  } else {
    for (int i = 0; i < d; ++i) {
      mvlg_q += log_gamma(0.5 * (q.dof - i));
      mvlg_p += log_gamma(0.5 * (p.dof - i));
    }
  }
  const double wish = 0.5 * (q.dof - p.dof) * e_logdet - 0.5 * q.dof * d +
                      0.5 * trace_term +
                      0.5 * q.dof * logdet_q - 0.5 * p.dof * logdet_p +
                      0.5 * d * (p.dof - q.dof) * ln2 + mvlg_p - mvlg_q;
  return gauss + wish;
}

/// Weakly informative, scale-aware default prior: mean at the data mean,
/// small kappa, dof = dim + 2, scatter from the per-dimension data variance.
inline NWParams default_nw_prior(const Eigen::MatrixXd& data,
                                 CovarianceType cov = CovarianceType::Full) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  if (n < 1 || d < 1) throw std::invalid_argument("default_nw_prior: empty data");
  NWParams prior;
  prior.cov = cov;
  prior.mean = data.colwise().mean();
  prior.scale = 1e-2;
  prior.dof = d + 2.0;
  Eigen::VectorXd var(d);
  for (int j = 0; j < d; ++j) {
    const double m = prior.mean[j];
    var[j] = (data.col(j).array() - m).square().sum() / std::max(1, n - 1);
    if (!(var[j] > 0.0)) var[j] = 1.0;
  }
  prior.scatter = var.asDiagonal();
  return prior;
}

}  // namespace kpyp
