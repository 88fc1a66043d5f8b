#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace kpyp {

namespace detail {

struct KmeansRun {
  std::vector<int> labels;
  double sse = std::numeric_limits<double>::infinity();
};

inline KmeansRun kmeans_once(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng,
                             int lloyd_iters) {
  const int n = static_cast<int>(points.rows());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> any_row(0, n - 1);

  Eigen::MatrixXd centers(k, points.cols());
  centers.row(0) = points.row(any_row(rng));
  Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      double u = unif(rng) * total;
      for (int i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
        pick = i;
      }
    } else {
      pick = any_row(rng);
    }
    centers.row(c) = points.row(pick);
    d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  KmeansRun run;
  run.labels.assign(n, 0);
  Eigen::VectorXd dist(k);
  for (int iter = 0; iter < lloyd_iters; ++iter) {
    bool changed = false;
    double sse = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < k; ++c) {
        dist[c] = (points.row(i) - centers.row(c)).squaredNorm();
      }
      int best = 0;
      sse += dist.minCoeff(&best);
      if (run.labels[i] != best) {
        run.labels[i] = best;
        changed = true;
      }
    }
    run.sse = sse;
    if (!changed && iter > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      sums.row(run.labels[i]) += points.row(i);
      counts[run.labels[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0.0) centers.row(c) = sums.row(c) / counts[c];
    }
  }
  return run;
}

}  // namespace detail

/// k-means++ seeding plus Lloyd iterations, restarted several times with the
/// lowest within-cluster squared error kept. Returns hard labels in [0, k).
/// Deterministic for a fixed seed; used only to initialize responsibilities.
inline std::vector<int> kmeans_labels(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                                      int lloyd_iters = 25, int restarts = 8) {
  const int n = static_cast<int>(points.rows());
  if (k <= 1 || n == 0) return std::vector<int>(n, 0);
  std::mt19937_64 rng(seed);
  detail::KmeansRun best;
  for (int r = 0; r < restarts; ++r) {
    detail::KmeansRun run = detail::kmeans_once(points, k, rng, lloyd_iters);
    if (run.sse < best.sse) best = std::move(run);
  }
  return best.labels;
}

/// Feature/location embedding used for initialization: features standardized
/// per dimension, locations scaled isotropically (one shared factor) so the
/// lattice geometry the kernel metric uses is preserved. Both blocks are
/// normalized to unit total variance, giving features and locations equal say
/// in the seeding.
inline Eigen::MatrixXd init_embedding(const Eigen::MatrixXd& features,
                                      const Eigen::MatrixXd& locations) {
  const int n = static_cast<int>(features.rows());
  Eigen::MatrixXd out(n, features.cols() + locations.cols());
  const double fnorm = std::sqrt(static_cast<double>(features.cols()));
  for (int j = 0; j < features.cols(); ++j) {
    const double m = features.col(j).mean();
    double sd = std::sqrt((features.col(j).array() - m).square().sum() / std::max(1, n - 1));
    if (!(sd > 0.0)) sd = 1.0;
    out.col(j) = (features.col(j).array() - m) / (sd * fnorm);
  }
  Eigen::RowVectorXd lmean = locations.colwise().mean();
  double lscale = std::sqrt((locations.rowwise() - lmean).squaredNorm() / std::max(1, n - 1));
  if (!(lscale > 0.0)) lscale = 1.0;
  for (int j = 0; j < locations.cols(); ++j) {
    out.col(features.cols() + j) = (locations.col(j).array() - lmean[j]) / lscale;
  }
  return out;
}

}  // namespace kpyp
