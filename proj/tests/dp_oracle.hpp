#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "kpyp/gaussian.hpp"
#include "kpyp/groups.hpp"
#include "kpyp/special_math.hpp"

// Independently coded truncated Dirichlet-process Gaussian-mixture VB, used
// as the oracle for the kernel == 1 reduction. Sticks carry Beta(1, alpha)
// priors and are maintained per unique location group, matching the model
// being checked but with none of its kernel machinery. Deliberately written
// as one flat loop: no code shared with the library's inference path beyond
// scalar special functions and the Normal-Wishart conjugacy formulas.

namespace dporacle {

struct Result {
  std::vector<double> free_energy;      // one entry per sweep, index 0 = init
  Eigen::MatrixXd responsibilities;     // final
  double alpha_mean = 0.0;
};

inline Result run(const Eigen::MatrixXd& data, const Eigen::MatrixXd& locations,
                  const Eigen::MatrixXd& init_resp, double eta1, double eta2, int sweeps,
                  kpyp::CovarianceType cov = kpyp::CovarianceType::Full) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const int N = static_cast<int>(data.rows());
  const int C = static_cast<int>(init_resp.cols());

  const kpyp::LocationGroups groups = kpyp::group_locations(locations);
  const int U = groups.count();
  const kpyp::NWParams prior = kpyp::default_nw_prior(data, cov);

  MatrixXd resp = init_resp;
  MatrixXd bt(U, C - 1), bh(U, C - 1);

  const auto stick_update = [&](double alpha_mean) {
    for (int u = 0; u < U; ++u) {
      VectorXd mass = VectorXd::Zero(C);
      for (int n : groups.members[u]) mass += resp.row(n).transpose();
      for (int c = 0; c < C - 1; ++c) {
        double beyond = 0.0;
        for (int c2 = c + 1; c2 < C; ++c2) beyond += mass[c2];
        bt(u, c) = 1.0 + mass[c];
        bh(u, c) = alpha_mean + beyond;
      }
    }
  };

  const auto alpha_update = [&]() {
    double acc = 0.0;
    for (int u = 0; u < U; ++u) {
      for (int c = 0; c < C - 1; ++c) {
        acc += groups.members[u].size() *
               (kpyp::digamma(bh(u, c)) - kpyp::digamma(bt(u, c) + bh(u, c)));
      }
    }
    return kpyp::GammaParams(eta1 + static_cast<double>(N) * (C - 1), eta2 - acc);
  };

  // Initialization mirrors the engine: sticks at the prior mean of alpha,
  // then the closed-form alpha update, then the cluster refit.
  stick_update(eta1 / eta2);
  kpyp::GammaParams alpha_post = alpha_update();

  std::vector<kpyp::NWParams> clusters(C, prior);
  const auto cluster_update = [&]() {
    for (int c = 0; c < C; ++c) {
      const kpyp::SufficientStats stats = kpyp::accumulate_stats(resp.col(c), data);
      clusters[c] = stats.weight < 1e-8 ? prior : kpyp::nw_posterior(prior, stats);
    }
  };
  cluster_update();

  MatrixXd loglik(N, C);
  const auto loglik_update = [&]() {
    for (int c = 0; c < C; ++c) {
      const kpyp::NWPredictor pred(clusters[c]);
      for (int n = 0; n < N; ++n) loglik(n, c) = pred(data.row(n).transpose());
    }
  };
  loglik_update();

  const auto elbo = [&]() {
    double value = -kpyp::gamma_kl(alpha_post, kpyp::GammaParams(eta1, eta2));
    const double am = alpha_post.mean();
    for (int u = 0; u < U; ++u) {
      for (int c = 0; c < C - 1; ++c) {
        value -= kpyp::beta_kl(kpyp::BetaParams(bt(u, c), bh(u, c)), kpyp::BetaParams(1.0, am));
      }
    }
    for (int c = 0; c < C; ++c) value -= kpyp::nw_kl(clusters[c], prior);
    for (int n = 0; n < N; ++n) {
      const int u = groups.group_of[n];
      for (int c = 0; c < C; ++c) {
        const double q = resp(n, c);
        if (q <= 0.0) continue;
        double elogpi = 0.0;
        for (int c2 = 0; c2 < c; ++c2) {
          elogpi += kpyp::digamma(bh(u, c2)) - kpyp::digamma(bt(u, c2) + bh(u, c2));
        }
        if (c < C - 1) {
          elogpi += kpyp::digamma(bt(u, c)) - kpyp::digamma(bt(u, c) + bh(u, c));
        }
        value += q * (elogpi + loglik(n, c) - std::log(q));
      }
    }
    return value;
  };

  Result out;
  out.free_energy.push_back(elbo());
  for (int sweep = 1; sweep <= sweeps; ++sweep) {
    stick_update(alpha_post.mean());
    alpha_post = alpha_update();
    for (int n = 0; n < N; ++n) {
      const int u = groups.group_of[n];
      VectorXd logits(C);
      for (int c = 0; c < C; ++c) {
        double elogpi = 0.0;
        for (int c2 = 0; c2 < c; ++c2) {
          elogpi += kpyp::digamma(bh(u, c2)) - kpyp::digamma(bt(u, c2) + bh(u, c2));
        }
        if (c < C - 1) {
          elogpi += kpyp::digamma(bt(u, c)) - kpyp::digamma(bt(u, c) + bh(u, c));
        }
        logits[c] = elogpi + loglik(n, c);
      }
      const double m = logits.maxCoeff();
      const VectorXd w = (logits.array() - m).exp();
      resp.row(n) = w.transpose() / w.sum();
    }
    cluster_update();
    loglik_update();
    out.free_energy.push_back(elbo());
  }
  out.responsibilities = resp;
  out.alpha_mean = alpha_post.mean();
  return out;
}

}  // namespace dporacle
