#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

// Limited-memory BFGS with a strong-Wolfe line search. The objective functor
// has signature double(const VectorXd& x, VectorXd& grad).

namespace kpyp {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 50;
  int max_linesearch = 40;
  double c1 = 1e-4;   // sufficient decrease
  double c2 = 0.9;    // curvature
  double grad_tol = 1e-9;
  double f_rel_tol = 1e-14;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double fx = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

namespace detail {

struct BestPoint {
  Eigen::VectorXd x;
  double fx = std::numeric_limits<double>::infinity();
  void offer(const Eigen::VectorXd& cand, double f) {
    if (f < fx) {
      fx = f;
      x = cand;
    }
  }
};

}  // namespace detail

template <typename F>
LbfgsResult lbfgs_minimize(F&& objective, const Eigen::VectorXd& x0,
                           const LbfgsOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  LbfgsResult res;
  res.x = x0;
  Eigen::VectorXd grad(n);
  double fx = objective(res.x, grad);
  res.fx = fx;
  detail::BestPoint best;
  best.offer(res.x, fx);

  if (opts.max_iterations <= 0) return res;

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd q(n), direction(n), x_new(n), grad_new(n);

  auto zoom = [&](double lo, double f_lo, double dphi_lo, double hi, double f_hi,
                  const Eigen::VectorXd& x, double f0, double dphi0,
                  const Eigen::VectorXd& d, double& step_out, double& f_out,
                  Eigen::VectorXd& g_out) -> bool {
    for (int i = 0; i < opts.max_linesearch; ++i) {
      // Quadratic interpolation with a bisection safeguard.
      double t = 0.5 * (lo + hi);
      const double denom = f_hi - f_lo - dphi_lo * (hi - lo);
      if (std::abs(denom) > 1e-300) {
        const double t_quad = lo - 0.5 * dphi_lo * (hi - lo) * (hi - lo) / denom;
        const double lo_b = std::min(lo, hi), hi_b = std::max(lo, hi);
        const double margin = 0.1 * (hi_b - lo_b);
        if (t_quad > lo_b + margin && t_quad < hi_b - margin) t = t_quad;
      }
      x_new = x + t * d;
      const double ft = objective(x_new, grad_new);
      best.offer(x_new, ft);
      const double dphit = grad_new.dot(d);
      if (ft > f0 + opts.c1 * t * dphi0 || ft >= f_lo) {
        hi = t;
        f_hi = ft;
      } else {
        if (std::abs(dphit) <= -opts.c2 * dphi0) {
          step_out = t;
          f_out = ft;
          g_out = grad_new;
          return true;
        }
        if (dphit * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
        }
        lo = t;
        f_lo = ft;
        dphi_lo = dphit;
      }
      if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
    }
    return false;
  };

  auto line_search = [&](const Eigen::VectorXd& x, double f0, const Eigen::VectorXd& g0,
                         const Eigen::VectorXd& d, double& step_out, double& f_out,
                         Eigen::VectorXd& g_out) -> bool {
    const double dphi0 = g0.dot(d);
    if (dphi0 >= 0.0) return false;  // not a descent direction
    double prev_t = 0.0, prev_f = f0, prev_dphi = dphi0;
    double t = 1.0;
    for (int i = 0; i < opts.max_linesearch; ++i) {
      x_new = x + t * d;
      const double ft = objective(x_new, grad_new);
      best.offer(x_new, ft);
      const double dphit = grad_new.dot(d);
      if (ft > f0 + opts.c1 * t * dphi0 || (i > 0 && ft >= prev_f)) {
        return zoom(prev_t, prev_f, prev_dphi, t, ft, x, f0, dphi0, d, step_out, f_out, g_out);
      }
      if (std::abs(dphit) <= -opts.c2 * dphi0) {
        step_out = t;
        f_out = ft;
        g_out = grad_new;
        return true;
      }
      if (dphit >= 0.0) {
        return zoom(t, ft, dphit, prev_t, prev_f, x, f0, dphi0, d, step_out, f_out, g_out);
      }
      prev_t = t;
      prev_f = ft;
      prev_dphi = dphit;
      t *= 2.0;
      if (t > 1e12) break;
    }
    return false;
  };

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    q = grad;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    direction = -q;

    double step = 0.0, f_next = 0.0;
    Eigen::VectorXd g_next(n);
    if (!line_search(res.x, fx, grad, direction, step, f_next, g_next)) {
      res.line_search_failed = true;
      break;
    }

    const Eigen::VectorXd s = step * direction;
    const Eigen::VectorXd y = g_next - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    res.x += s;
    const double f_prev = fx;
    fx = f_next;
    grad = g_next;
    res.iterations = iter + 1;
    if (std::abs(f_prev - fx) <= opts.f_rel_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
  }

  // Never return anything worse than the best point evaluated.
  if (best.fx < fx) {
    res.x = best.x;
    res.fx = best.fx;
  } else {
    res.fx = fx;
  }
  return res;
}

}  // namespace kpyp
