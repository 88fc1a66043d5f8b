#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpyp/gaussian.hpp"
#include "kpyp/groups.hpp"
#include "kpyp/kernel.hpp"
#include "kpyp/kmeans.hpp"
#include "kpyp/location_opt.hpp"
#include "kpyp/parallel.hpp"
#include "kpyp/special_math.hpp"

// Truncated variational inference for the kernel-dependent stick-breaking
// mixture: per-location Beta stick posteriors, a Gamma posterior on the
// innovation parameter, multinomial responsibilities, Normal-Wishart cluster
// posteriors, and the free-energy objective driving convergence checks and
// location learning.

namespace kpyp {

enum class LocationMode { Random, Optimized };

struct VBConfig {
  int truncation = 20;                    // C
  GammaParams alpha_prior{1e-2, 1e-2};    // (eta1, eta2)
  int max_iters = 200;
  double free_energy_rel_tol = 1e-6;
  std::uint64_t seed = 0;
  LocationMode location_mode = LocationMode::Optimized;
  bool shared_width = false;
  KernelFamily kernel_family = KernelFamily::RBF;
  double kernel_floor = 1e-6;
  CovarianceType covariance = CovarianceType::Full;
  int location_every = 5;     // optimize locations on every k-th sweep
  int location_budget = 50;   // L-BFGS iterations per invocation
  int jobs = 1;

  void validate() const {
    if (truncation < 2) throw std::invalid_argument("VBConfig: truncation must be >= 2");
    if (!(free_energy_rel_tol > 0.0)) throw std::invalid_argument("VBConfig: tolerance must be positive");
    if (max_iters < 1) throw std::invalid_argument("VBConfig: max_iters must be >= 1");
    if (location_every < 1) throw std::invalid_argument("VBConfig: location_every must be >= 1");
    if (!(kernel_floor > 0.0 && kernel_floor < 0.5)) {
      throw std::invalid_argument("VBConfig: kernel_floor must lie in (0, 0.5)");
    }
  }
};

/// Beta shape tables of q(v_c(x)), one row per unique location, one column per
/// stick c = 1..C-1 (the final stick is fixed at 1 by truncation).
struct StickPosterior {
  Eigen::MatrixXd beta_tilde;
  Eigen::MatrixXd beta_hat;

  int sticks() const { return static_cast<int>(beta_tilde.cols()); }
};

struct SweepRecord {
  int iter = 0;
  double free_energy = 0.0;
  double alpha_mean = 0.0;
  int active = 0;
};

struct VBState {
  Eigen::MatrixXd responsibilities;  // N x C, rows sum to 1
  StickPosterior sticks;
  GammaParams alpha_post;
  std::vector<NWParams> clusters;
  std::vector<KernelSpec> kernels;
  std::vector<double> free_energy_trace;
  std::vector<SweepRecord> sweep_log;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  int truncation() const { return static_cast<int>(responsibilities.cols()); }
};

/// Kernel values at each unique location (rows) for each cluster (columns).
inline Eigen::MatrixXd kernel_matrix(const std::vector<KernelSpec>& kernels,
                                     const Eigen::MatrixXd& unique_locations) {
  const int u = static_cast<int>(unique_locations.rows());
  const int c = static_cast<int>(kernels.size());
  Eigen::MatrixXd k(u, c);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < u; ++i) {
      k(i, j) = kernel_eval(kernels[j], unique_locations.row(i).transpose());
    }
  }
  return k;
}

namespace detail {

/// Per-group responsibility mass: counts(u, c) = sum over members of group u.
inline Eigen::MatrixXd group_counts(const Eigen::MatrixXd& resp, const LocationGroups& groups) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(groups.count(), resp.cols());
  for (int u = 0; u < groups.count(); ++u) {
    for (int n : groups.members[u]) counts.row(u) += resp.row(n);
  }
  return counts;
}

}  // namespace detail

/// Stick posterior update: for stick c (1-based) at unique location u,
///   beta_tilde = k_c(x_u) + sum of the group's responsibilities for c,
///   beta_hat   = <alpha> + c (1 - k_c(x_u)) + the group's mass beyond c.
inline StickPosterior update_sticks(const Eigen::MatrixXd& resp, const LocationGroups& groups,
                                    const Eigen::MatrixXd& kernel_values, double alpha_mean) {
  const int u_count = groups.count();
  const int c_count = static_cast<int>(resp.cols());
  const Eigen::MatrixXd counts = detail::group_counts(resp, groups);

  StickPosterior post;
  post.beta_tilde.resize(u_count, c_count - 1);
  post.beta_hat.resize(u_count, c_count - 1);
  for (int u = 0; u < u_count; ++u) {
    double tail = counts.row(u).sum();
    for (int c = 0; c < c_count - 1; ++c) {
      tail -= counts(u, c);
      const double k = kernel_values(u, c);
      post.beta_tilde(u, c) = k + counts(u, c);
      post.beta_hat(u, c) = alpha_mean + (c + 1.0) * (1.0 - k) + tail;
    }
  }
  return post;
}

/// (E[log v], E[log(1-v)]) tables for a stick posterior.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> stick_log_expectations(
    const StickPosterior& sticks) {
  Eigen::MatrixXd elogv(sticks.beta_tilde.rows(), sticks.beta_tilde.cols());
  Eigen::MatrixXd e1mv(sticks.beta_tilde.rows(), sticks.beta_tilde.cols());
  for (int u = 0; u < sticks.beta_tilde.rows(); ++u) {
    for (int c = 0; c < sticks.beta_tilde.cols(); ++c) {
      const double bt = sticks.beta_tilde(u, c);
      const double bh = sticks.beta_hat(u, c);
      const double dsum = digamma(bt + bh);
      elogv(u, c) = digamma(bt) - dsum;
      e1mv(u, c) = digamma(bh) - dsum;
    }
  }
  return {std::move(elogv), std::move(e1mv)};
}

/// Closed-form Gamma posterior update for the innovation parameter:
/// shape = eta1 + N (C-1), rate = eta2 - sum over sticks and observations of
/// E[log(1 - v)]. Every observation contributes through its group's sticks.
inline GammaParams update_alpha(const GammaParams& prior, const StickPosterior& sticks,
                                const LocationGroups& groups) {
  const double n = groups.sizes.sum();
  const double shape = prior.shape + n * sticks.sticks();
  double acc = 0.0;
  for (int u = 0; u < sticks.beta_tilde.rows(); ++u) {
    for (int c = 0; c < sticks.sticks(); ++c) {
      const double bt = sticks.beta_tilde(u, c);
      const double bh = sticks.beta_hat(u, c);
      acc += groups.sizes[u] * (digamma(bh) - digamma(bt + bh));
    }
  }
  return GammaParams(shape, prior.rate - acc);
}

/// E[log pi_c(x_u)] table: prefix sums of E[log(1-v)] plus E[log v] (zero for
/// the final truncated stick).
inline Eigen::MatrixXd expected_log_weights(const StickPosterior& sticks) {
  const auto [elogv, e1mv] = stick_log_expectations(sticks);
  const int u_count = static_cast<int>(elogv.rows());
  const int c_count = static_cast<int>(elogv.cols()) + 1;
  Eigen::MatrixXd elogpi(u_count, c_count);
  for (int u = 0; u < u_count; ++u) {
    double prefix = 0.0;
    for (int c = 0; c < c_count; ++c) {
      elogpi(u, c) = prefix + (c < c_count - 1 ? elogv(u, c) : 0.0);
      if (c < c_count - 1) prefix += e1mv(u, c);
    }
  }
  return elogpi;
}

/// Responsibility update: softmax over clusters of E[log pi_c(x_n)] + phi_nc.
inline Eigen::MatrixXd update_responsibilities(const StickPosterior& sticks,
                                               const LocationGroups& groups,
                                               const Eigen::MatrixXd& loglik, int jobs = 1) {
  const int n_count = static_cast<int>(loglik.rows());
  const int c_count = static_cast<int>(loglik.cols());
  const Eigen::MatrixXd elogpi = expected_log_weights(sticks);

  Eigen::MatrixXd resp(n_count, c_count);
  std::vector<std::string> errors;
  parallel_for_rows(n_count, jobs, [&](int lo, int hi) {
    Eigen::RowVectorXd logits(c_count);
    for (int n = lo; n < hi; ++n) {
      logits = elogpi.row(groups.group_of[n]) + loglik.row(n);
      const double m = logits.maxCoeff();
      if (!std::isfinite(m)) {
        resp.row(n).setConstant(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const Eigen::RowVectorXd w = (logits.array() - m).exp();
      resp.row(n) = w / w.sum();
    }
  });
  if (!resp.allFinite()) {
    throw std::runtime_error("update_responsibilities: degenerate (all -inf) assignment row");
  }
  return resp;
}

/// Normal-Wishart refit for every cluster; clusters with negligible total
/// responsibility keep the prior.
inline std::vector<NWParams> update_clusters(const NWParams& prior, const Eigen::MatrixXd& resp,
                                             const Eigen::MatrixXd& data,
                                             double min_weight = 1e-8) {
  std::vector<NWParams> out;
  out.reserve(resp.cols());
  for (int c = 0; c < resp.cols(); ++c) {
    SufficientStats stats = accumulate_stats(resp.col(c), data);
    if (stats.weight < min_weight) {
      out.push_back(prior);
      continue;
    }
    try {
      out.push_back(nw_posterior(prior, stats));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("update_clusters: cluster " + std::to_string(c + 1) + ": " +
                               e.what());
    }
  }
  return out;
}

/// phi_nc = <log p(y_n | theta_c)> for every observation and cluster.
inline Eigen::MatrixXd expected_loglik_matrix(const std::vector<NWParams>& clusters,
                                              const Eigen::MatrixXd& data, int jobs = 1) {
  const int n_count = static_cast<int>(data.rows());
  const int c_count = static_cast<int>(clusters.size());
  Eigen::MatrixXd loglik(n_count, c_count);
  std::vector<NWPredictor> predictors;
  predictors.reserve(clusters.size());
  for (const auto& cl : clusters) predictors.emplace_back(cl);
  parallel_for_rows(n_count, jobs, [&](int lo, int hi) {
    for (int n = lo; n < hi; ++n) {
      const Eigen::VectorXd y = data.row(n).transpose();
      for (int c = 0; c < c_count; ++c) loglik(n, c) = predictors[c](y);
    }
  });
  return loglik;
}

/// The four groups of free-energy terms; L = assignment - (sum of KLs). The
/// stick-prior KL is evaluated at the posterior mean of alpha. Observations
/// sharing a location share one stick variable, so each unique location
/// contributes its stick KL once.
struct FreeEnergyTerms {
  double alpha_kl = 0.0;
  double stick_kl = 0.0;
  double cluster_kl = 0.0;
  double assignment = 0.0;

  double total() const { return assignment - alpha_kl - stick_kl - cluster_kl; }
};

inline FreeEnergyTerms free_energy_terms(
    const Eigen::MatrixXd& resp, const StickPosterior& sticks, const GammaParams& alpha_post,
    const std::vector<NWParams>& clusters, const LocationGroups& groups,
    const Eigen::MatrixXd& kernel_values, const Eigen::MatrixXd& loglik,
    const GammaParams& alpha_prior, const NWParams& cluster_prior) {
  FreeEnergyTerms terms;
  terms.alpha_kl = gamma_kl(alpha_post, alpha_prior);

  const double alpha_mean = alpha_post.mean();
  for (int u = 0; u < sticks.beta_tilde.rows(); ++u) {
    for (int c = 0; c < sticks.sticks(); ++c) {
      const double k = kernel_values(u, c);
      const BetaParams prior(k, alpha_mean + (c + 1.0) * (1.0 - k));
      const BetaParams q(sticks.beta_tilde(u, c), sticks.beta_hat(u, c));
      terms.stick_kl += beta_kl(q, prior);
    }
  }

  for (const auto& cl : clusters) terms.cluster_kl += nw_kl(cl, cluster_prior);

  const Eigen::MatrixXd elogpi = expected_log_weights(sticks);
  for (int n = 0; n < resp.rows(); ++n) {
    const int u = groups.group_of[n];
    for (int c = 0; c < resp.cols(); ++c) {
      const double q = resp(n, c);
      if (q <= 0.0) continue;
      terms.assignment += q * (elogpi(u, c) + loglik(n, c) - std::log(q));
    }
  }

  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("free_energy: non-finite ") + name + " term");
    }
  };
  check(terms.alpha_kl, "alpha-KL");
  check(terms.stick_kl, "stick-KL");
  check(terms.cluster_kl, "cluster-KL");
  check(terms.assignment, "assignment");
  return terms;
}

inline double free_energy(const Eigen::MatrixXd& resp, const StickPosterior& sticks,
                          const GammaParams& alpha_post, const std::vector<NWParams>& clusters,
                          const LocationGroups& groups, const Eigen::MatrixXd& kernel_values,
                          const Eigen::MatrixXd& loglik, const GammaParams& alpha_prior,
                          const NWParams& cluster_prior) {
  return free_energy_terms(resp, sticks, alpha_post, clusters, groups, kernel_values, loglik,
                           alpha_prior, cluster_prior)
      .total();
}

namespace detail {

/// alpha-dependent part of the free energy as a function of the Gamma
/// posterior (a, b): -KL[q(alpha)||p(alpha)] plus the stick-prior cross terms
/// evaluated at <alpha> = a/b.
struct AlphaObjective {
  const Eigen::MatrixXd* elogv;
  const Eigen::MatrixXd* e1mv;
  const Eigen::MatrixXd* kernel_values;
  GammaParams prior;

  double value(double a, double b) const {
    const double mean = a / b;
    double acc = -gamma_kl(GammaParams(a, b), prior);
    for (int u = 0; u < elogv->rows(); ++u) {
      for (int c = 0; c < elogv->cols(); ++c) {
        const double k = (*kernel_values)(u, c);
        const double alpha_c = mean + (c + 1.0) * (1.0 - k);
        acc += (k - 1.0) * (*elogv)(u, c) + (alpha_c - 1.0) * (*e1mv)(u, c) -
               log_beta(k, alpha_c);
      }
    }
    return acc;
  }

  // d/dA of the stick-prior cross terms at <alpha> = A.
  double cross_slope(double mean) const {
    double acc = 0.0;
    for (int u = 0; u < elogv->rows(); ++u) {
      for (int c = 0; c < elogv->cols(); ++c) {
        const double k = (*kernel_values)(u, c);
        const double alpha_c = mean + (c + 1.0) * (1.0 - k);
        acc += (*e1mv)(u, c) - digamma(alpha_c) + digamma(k + alpha_c);
      }
    }
    return acc;
  }

  double cross_curvature(double mean) const {
    double acc = 0.0;
    for (int u = 0; u < elogv->rows(); ++u) {
      for (int c = 0; c < elogv->cols(); ++c) {
        const double k = (*kernel_values)(u, c);
        const double alpha_c = mean + (c + 1.0) * (1.0 - k);
        acc += trigamma(k + alpha_c) - trigamma(alpha_c);
      }
    }
    return acc;
  }
};

/// Rate-coordinate ascent for q(alpha): keeps the closed-form shape and moves
/// the rate to the maximizer of the alpha objective. The closed-form rate is
/// already stationary whenever all kernel values are 1, and is returned
/// unchanged in that case. b -> value(a, b) is unimodal (the derivative
/// b^2 f'(b) = -eta1 b + a eta2 - a S'(a/b) is strictly decreasing), so the
/// result never has a lower objective than any other rate, including the
/// current one.
inline GammaParams refine_alpha_rate(const GammaParams& closed_form, const AlphaObjective& obj,
                                     const GammaParams& current) {
  const double a = closed_form.shape;
  const double eta1 = obj.prior.shape;
  const double eta2 = obj.prior.rate;
  const auto slope = [&](double b) { return -eta1 * b + a * eta2 - a * obj.cross_slope(a / b); };

  const double b0 = closed_form.rate;
  const double g0 = slope(b0);
  const double scale = eta1 * b0 + a * eta2 + std::abs(a * obj.cross_slope(a / b0));
  if (std::abs(g0) <= 1e-10 * std::max(1.0, scale)) return closed_form;

  // Bracket the root; slope is strictly decreasing in b. Cap the expansion so
  // the plug-in mean stays within the digamma domain.
  double lo = b0, hi = b0;
  const double b_cap = a / 1e-9;
  if (g0 > 0.0) {
    do {
      lo = hi;
      hi = std::min(2.0 * hi, b_cap);
    } while (slope(hi) > 0.0 && hi < b_cap);
  } else {
    do {
      hi = lo;
      lo = 0.5 * lo;
    } while (slope(lo) < 0.0 && lo > 1e-300);
  }

  double b = 0.5 * (lo + hi);
  for (int it = 0; it < 100; ++it) {
    const double g = slope(b);
    if (g > 0.0) lo = b; else hi = b;
    const double mean = a / b;
    const double dg = -eta1 + (a * a / (b * b)) * obj.cross_curvature(mean);
    double next = dg < 0.0 ? b - g / dg : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - b) <= 1e-13 * b) {
      b = next;
      break;
    }
    b = next;
  }

  const GammaParams refined(a, b);
  // Guard against root-finding slop: never hand back something worse than
  // where we already are.
  if (obj.value(refined.shape, refined.rate) <
      obj.value(current.shape, current.rate) - 1e-12 * std::max(1.0, std::abs(obj.value(current.shape, current.rate)))) {
    return current;
  }
  return refined;
}

}  // namespace detail

/// Optional warm-start values for fit().
struct FitInit {
  std::optional<Eigen::MatrixXd> responsibilities;
  std::optional<LocationParams> locations;
};

/// Runs the full inference loop: per sweep, sticks -> alpha -> responsibilities
/// -> clusters, with location/width optimization interleaved every
/// `location_every` sweeps when enabled. Stops when the relative free-energy
/// change drops below tolerance or max_iters is reached.
inline VBState fit(const Eigen::MatrixXd& data, const Eigen::MatrixXd& locations,
                   const VBConfig& config, const FitInit& init = {}) {
  config.validate();
  const int n_count = static_cast<int>(data.rows());
  const int c_count = config.truncation;
  if (n_count == 0) throw std::invalid_argument("fit: empty dataset");
  if (locations.rows() != n_count) throw std::invalid_argument("fit: data/location row mismatch");
  if (!data.allFinite()) throw std::invalid_argument("fit: data must be finite");

  VBState state;
  if (n_count < c_count) {
    state.warnings.push_back("fewer observations (" + std::to_string(n_count) +
                             ") than truncation level (" + std::to_string(c_count) + ")");
  }

  const LocationGroups groups = group_locations(locations);
  const NWParams cluster_prior = default_nw_prior(data, config.covariance);

  // --- Initialization ---------------------------------------------------
  if (init.responsibilities) {
    state.responsibilities = *init.responsibilities;
    if (state.responsibilities.rows() != n_count || state.responsibilities.cols() != c_count) {
      throw std::invalid_argument("fit: init responsibilities shape mismatch");
    }
  } else {
    const std::vector<int> labels =
        kmeans_labels(init_embedding(data, locations), c_count, config.seed);
    state.responsibilities =
        Eigen::MatrixXd::Constant(n_count, c_count, 0.1 / c_count);
    for (int n = 0; n < n_count; ++n) state.responsibilities(n, labels[n]) += 0.9;
  }

  LocationParams loc_params;
  if (init.locations) {
    loc_params = *init.locations;
  } else if (config.location_mode == LocationMode::Random) {
    loc_params = random_locations(locations, c_count, config.seed, config.shared_width);
  } else {
    // Responsibility-weighted mean location per cluster; width at half the
    // lattice diagonal.
    loc_params.shared_width = config.shared_width;
    loc_params.centers.resize(c_count, locations.cols());
    const Eigen::RowVectorXd overall = locations.colwise().mean();
    for (int c = 0; c < c_count; ++c) {
      const double mass = state.responsibilities.col(c).sum();
      if (mass > 1e-12) {
        loc_params.centers.row(c) =
            (state.responsibilities.col(c).transpose() * locations) / mass;
      } else {
        loc_params.centers.row(c) = overall;
      }
    }
    loc_params.log_widths = Eigen::VectorXd::Constant(
        config.shared_width ? 1 : c_count, std::log(half_lattice_diagonal(locations)));
  }
  state.kernels = make_kernels(loc_params, config.kernel_family, config.kernel_floor);
  Eigen::MatrixXd kvals = kernel_matrix(state.kernels, groups.unique);

  state.sticks = update_sticks(state.responsibilities, groups, kvals, config.alpha_prior.mean());
  state.alpha_post = update_alpha(config.alpha_prior, state.sticks, groups);
  state.clusters = update_clusters(cluster_prior, state.responsibilities, data);
  Eigen::MatrixXd loglik = expected_loglik_matrix(state.clusters, data, config.jobs);

  const auto active_count = [&]() {
    const double threshold = 1e-3 * n_count;
    int active = 0;
    for (int c = 0; c < c_count; ++c) {
      if (state.responsibilities.col(c).sum() >= threshold) ++active;
    }
    return active;
  };
  const auto record = [&](int iter, double fe) {
    state.free_energy_trace.push_back(fe);
    state.sweep_log.push_back({iter, fe, state.alpha_post.mean(), active_count()});
  };

  double fe = free_energy(state.responsibilities, state.sticks, state.alpha_post, state.clusters,
                          groups, kvals, loglik, config.alpha_prior, cluster_prior);
  record(0, fe);

  // --- Sweeps -----------------------------------------------------------
  const bool optimize_kernels =
      config.location_mode == LocationMode::Optimized && config.kernel_family == KernelFamily::RBF;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    state.sticks =
        update_sticks(state.responsibilities, groups, kvals, state.alpha_post.mean());

    const auto [elogv, e1mv] = stick_log_expectations(state.sticks);
    const GammaParams closed = update_alpha(config.alpha_prior, state.sticks, groups);
    detail::AlphaObjective alpha_obj{&elogv, &e1mv, &kvals, config.alpha_prior};
    state.alpha_post = detail::refine_alpha_rate(closed, alpha_obj, state.alpha_post);

    state.responsibilities = update_responsibilities(state.sticks, groups, loglik, config.jobs);
    state.clusters = update_clusters(cluster_prior, state.responsibilities, data);
    loglik = expected_loglik_matrix(state.clusters, data, config.jobs);

    if (optimize_kernels && iter % config.location_every == 0) {
      StickObjectiveData obj_data{elogv, e1mv, groups.unique,
                                  state.alpha_post.mean(), config.kernel_floor};
      loc_params = optimize_locations(loc_params, obj_data, config.location_budget);
      state.kernels = make_kernels(loc_params, config.kernel_family, config.kernel_floor);
      kvals = kernel_matrix(state.kernels, groups.unique);
    }

    const double fe_prev = fe;
    fe = free_energy(state.responsibilities, state.sticks, state.alpha_post, state.clusters,
                     groups, kvals, loglik, config.alpha_prior, cluster_prior);
    record(iter, fe);
    state.iterations = iter;
    if (std::abs(fe - fe_prev) <= config.free_energy_rel_tol * std::max(1.0, std::abs(fe))) {
      state.converged = true;
      break;
    }
  }
  return state;
}

/// Spec'd convenience overload: location objective/gradient from a VBState.
inline std::pair<double, Eigen::VectorXd> objective_and_gradient(const LocationParams& params,
                                                                 const VBState& state,
                                                                 const LocationGroups& groups) {
  const auto [elogv, e1mv] = stick_log_expectations(state.sticks);
  StickObjectiveData data{elogv, e1mv, groups.unique, state.alpha_post.mean(),
                          state.kernels.empty() ? 1e-6 : state.kernels.front().floor};
  return objective_and_gradient(params, data);
}

}  // namespace kpyp
