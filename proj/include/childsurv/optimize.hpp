#pragma once

// Dense Newton maximiser with Levenberg damping, and a BFGS minimiser on
// central finite-difference gradients for the low-dimensional outer loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "childsurv/error.hpp"

namespace childsurv {

struct NewtonOptions {
  double grad_tol = 1e-8;
  int max_iter = 200;
  int max_backtracks = 50;
  // gradient norm accepted when the line search can no longer make progress
  double stall_tol = 1e-6;
};

struct NewtonResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

// f(x, grad, hess) returns the objective; grad/hess are filled when non-null.
// Non-finite values mark infeasible points and are rejected by the line search.
using NewtonObjective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*, Eigen::MatrixXd*)>;

inline NewtonResult newton_maximize(const NewtonObjective& f, Eigen::VectorXd x,
                                    const NewtonOptions& opt = {}) {
  const Eigen::Index n = x.size();
  NewtonResult r;
  Eigen::VectorXd g(n);
  Eigen::MatrixXd H(n, n);
  double fx = f(x, &g, &H);
  if (!std::isfinite(fx)) throw NumericError("Newton start point is infeasible");

  int it = 0;
  for (; it < opt.max_iter; ++it) {
    r.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (r.grad_norm < opt.grad_tol) {
      r.converged = true;
      break;
    }
    const double scale = std::max(1.0, (-H).diagonal().cwiseAbs().maxCoeff());
    double lambda = 0.0;  // Levenberg damping, relative to the largest curvature
    bool moved = false, settled = false;
    for (int damp = 0; damp < 30 && !moved; ++damp) {
      Eigen::MatrixXd M = -H;
      if (lambda > 0.0) M.diagonal().array() += lambda * scale;
      Eigen::LLT<Eigen::MatrixXd> llt(M);
      if (llt.info() == Eigen::Success) {
        const Eigen::VectorXd p = llt.solve(g);
        const double slope = g.dot(p);
        if (lambda == 0.0 && slope < std::max(1e-9, 1e-12 * std::abs(fx))) {
          // predicted gain below the rounding noise of f: the full Newton
          // step lands on the optimum to working precision
          const Eigen::VectorXd xt = x + p;
          if (std::isfinite(f(xt, nullptr, nullptr))) {
            x = xt;
            moved = settled = true;
          }
        } else {
          double t = 1.0;
          for (int bt = 0; bt < opt.max_backtracks && !moved; ++bt, t *= 0.5) {
            const Eigen::VectorXd xt = x + t * p;
            const double ft = f(xt, nullptr, nullptr);
            if (std::isfinite(ft) && ft >= fx + 1e-4 * t * slope) {
              x = xt;
              moved = true;
            }
          }
        }
      }
      if (!moved) lambda = lambda == 0.0 ? 1e-8 : lambda * 10.0;
    }
    if (!moved) {
      r.converged = r.grad_norm < opt.stall_tol;
      break;
    }
    fx = f(x, &g, &H);
    if (settled) {
      ++it;
      r.converged = true;
      break;
    }
  }
  r.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (it == opt.max_iter && !r.converged) r.converged = r.grad_norm < opt.grad_tol;
  r.x = std::move(x);
  r.value = fx;
  r.gradient = std::move(g);
  r.hessian = std::move(H);
  r.iterations = it;
  return r;
}

struct BfgsOptions {
  double grad_tol = 1e-5;
  int max_iter = 200;
  double fd_step = 1e-4;
  double max_step = 2.0;  // largest coordinate move per iteration
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

inline BfgsResult bfgs_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x, const BfgsOptions& opt = {}) {
  const Eigen::Index n = x.size();
  BfgsResult r;
  auto eval = [&](const Eigen::VectorXd& y) {
    ++r.evaluations;
    const double v = f(y);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  auto gradient = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd yp = y, ym = y;
      yp[i] += opt.fd_step;
      ym[i] -= opt.fd_step;
      g[i] = (eval(yp) - eval(ym)) / (2.0 * opt.fd_step);
    }
    return g;
  };

  double fx = eval(x);
  if (!std::isfinite(fx)) throw NumericError("BFGS start point is infeasible");
  Eigen::VectorXd g = gradient(x);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    r.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (!g.allFinite()) throw NumericError("non-finite finite-difference gradient");
    if (r.grad_norm < opt.grad_tol) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd p = -Hinv * g;
    if (g.dot(p) >= 0.0) {
      Hinv.setIdentity();
      p = -g;
    }
    const double longest = p.lpNorm<Eigen::Infinity>();
    if (longest > opt.max_step) p *= opt.max_step / longest;

    double t = 1.0, ft = fx;
    Eigen::VectorXd xt = x;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
      xt = x + t * p;
      ft = eval(xt);
      if (ft <= fx + 1e-4 * t * g.dot(p)) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      if (Hinv.isIdentity()) break;
      Hinv.setIdentity();
      continue;
    }
    const Eigen::VectorXd gt = gradient(xt);
    const Eigen::VectorXd s = xt - x, y = gt - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (it == 0) Hinv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    x = xt;
    fx = ft;
    g = gt;
  }
  r.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (!r.converged) r.converged = r.grad_norm < opt.grad_tol;
  r.x = std::move(x);
  r.value = fx;
  r.gradient = std::move(g);
  r.iterations = it;
  return r;
}

}  // namespace childsurv
