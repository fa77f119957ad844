#pragma once

// Empirical Bayes fit: Newton mode of the latent field for fixed
// hyperparameters, Laplace approximation of the marginal likelihood,
// quasi-Newton search over log-precisions, Gaussian draws at the mode.
// Also independent per-year Poisson fits to VR counts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "childsurv/model.hpp"
#include "childsurv/optimize.hpp"

namespace childsurv {

struct InnerMode {
  Eigen::VectorXd x;
  double value = 0.0;  // joint log posterior at the mode
  Eigen::MatrixXd neg_hessian;
  Eigen::MatrixXd factor;  // lower Cholesky factor of neg_hessian
  double logdet = 0.0;     // log det(neg_hessian)
  int iterations = 0;
  double grad_norm = 0.0;
};

struct InnerOptions {
  NewtonOptions newton;
};

inline InnerMode inner_mode(const Model& m, const Eigen::VectorXd& eta, const Eigen::VectorXd& x0,
                            const InnerOptions& opt = {}) {
  const NewtonObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g,
                                Eigen::MatrixXd* H) -> double {
    if (g || H) return m.joint_logpost(x, eta, g, H);
    try {
      return m.joint_logpost(x, eta, nullptr, nullptr, true);
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto r = newton_maximize(f, x0, opt.newton);
  if (!r.converged)
    throw ConvergenceError("inner Newton did not converge (gradient " + std::to_string(r.grad_norm) +
                           " after " + std::to_string(r.iterations) + " iterations)");
  InnerMode out;
  out.iterations = r.iterations;
  // one more undamped step: quadratic convergence takes the mode to rounding
  // level, which keeps finite differences over the hyperparameters smooth
  {
    Eigen::LLT<Eigen::MatrixXd> llt(-r.hessian);
    if (llt.info() == Eigen::Success) {
      const Eigen::VectorXd xt = r.x + llt.solve(r.gradient);
      Eigen::VectorXd gt;
      Eigen::MatrixXd Ht;
      try {
        const double ft = m.joint_logpost(xt, eta, &gt, &Ht);
        if (std::isfinite(ft) && gt.lpNorm<Eigen::Infinity>() <= r.grad_norm) {
          r.x = xt;
          r.value = ft;
          r.gradient = gt;
          r.hessian = Ht;
          r.grad_norm = gt.lpNorm<Eigen::Infinity>();
        }
      } catch (const NumericError&) {
      }
    }
  }
  out.x = std::move(r.x);
  out.value = r.value;
  out.grad_norm = r.grad_norm;
  out.neg_hessian = -r.hessian;
  Eigen::LLT<Eigen::MatrixXd> llt(out.neg_hessian);
  if (llt.info() != Eigen::Success)
    throw NumericError("negative Hessian at the mode is not positive definite");
  out.factor = llt.matrixL();
  out.logdet = 2.0 * out.factor.diagonal().array().log().sum();
  return out;
}

// joint at mode without the hyperprior + (n/2) log 2 pi - 1/2 log det(-H)
inline double laplace_marginal(const Model& m, const Eigen::VectorXd& eta, const InnerMode& mode) {
  const double n = static_cast<double>(mode.x.size());
  return mode.value - m.logprior_hyper(eta) + 0.5 * n * kLog2Pi - 0.5 * mode.logdet;
}

inline double laplace_marginal(const Model& m, const Eigen::VectorXd& eta) {
  return laplace_marginal(m, eta, inner_mode(m, eta, m.initial_latent()));
}

struct HyperOptions {
  BfgsOptions bfgs{1e-5, 100, 1e-4, 2.0};
  // accepted gradient norm when the line search stalls at rounding noise
  double stall_tol = 1e-3;
  InnerOptions inner;
};

struct HyperFit {
  Eigen::VectorXd eta;
  double objective = 0.0;     // Laplace marginal + hyperprior
  double log_marginal = 0.0;  // Laplace marginal alone
  InnerMode mode;
  int iterations = 0;
  int evaluations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

// Maximises laplace_marginal + logprior_hyper over eta; inner solves start
// from the previous mode.
inline HyperFit optimize_hyper(const Model& m, const Eigen::VectorXd& eta0,
                               const HyperOptions& opt = {}) {
  Eigen::VectorXd warm = m.initial_latent();
  const auto objective = [&](const Eigen::VectorXd& eta) -> double {
    if (!eta.allFinite() || eta.cwiseAbs().maxCoeff() > 40.0)
      return std::numeric_limits<double>::infinity();
    try {
      const auto mode = inner_mode(m, eta, warm, opt.inner);
      warm = mode.x;
      return -(laplace_marginal(m, eta, mode) + m.logprior_hyper(eta));
    } catch (const ConvergenceError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto r = bfgs_minimize(objective, eta0, opt.bfgs);
  HyperFit out;
  out.eta = r.x;
  out.iterations = r.iterations;
  out.evaluations = r.evaluations;
  out.grad_norm = r.grad_norm;
  if (r.iterations >= opt.bfgs.max_iter)
    throw ConvergenceError("hyperparameter search hit " + std::to_string(opt.bfgs.max_iter) +
                           " iterations; best objective " + std::to_string(-r.value) +
                           ", gradient " + std::to_string(r.grad_norm));
  out.converged = r.converged || r.grad_norm < opt.stall_tol;
  out.mode = inner_mode(m, r.x, warm, opt.inner);
  out.log_marginal = laplace_marginal(m, r.x, out.mode);
  out.objective = out.log_marginal + m.logprior_hyper(r.x);
  return out;
}

// N draws from N(mode, (L L')^-1): x = mode + L'^-1 z.
inline Eigen::MatrixXd sample_posterior(const Eigen::VectorXd& mode, const Eigen::MatrixXd& L,
                                        int N, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> Z(0.0, 1.0);
  const Eigen::Index n = mode.size();
  Eigen::MatrixXd out(N, n);
  Eigen::VectorXd z(n);
  const auto U = L.transpose().triangularView<Eigen::Upper>();
  for (int d = 0; d < N; ++d) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = Z(rng);
    out.row(d) = (mode + U.solve(z)).transpose();
  }
  return out;
}

// ---- fitted posterior ---------------------------------------------------------

struct FitDiagnostics {
  int inner_iterations = 0;
  double inner_grad_norm = 0.0;
  int outer_iterations = 0;
  int outer_evaluations = 0;
  double outer_grad_norm = 0.0;
  bool outer_converged = false;
  double log_marginal = 0.0;
  double objective = 0.0;
};

struct PosteriorFit {
  static constexpr const char* kFormat = "childsurv-posterior";
  static constexpr int kVersion = 1;

  std::string country;
  Family family = Family::LogLogistic;
  int first_year = 0;
  int last_year = 0;
  std::vector<std::string> hyper_names;
  Eigen::VectorXd eta_hat;
  Eigen::VectorXd x_mode;
  Eigen::MatrixXd precision_factor;  // lower Cholesky factor of the negative Hessian
  Eigen::VectorXd theta_mode;        // index t K + k
  Eigen::MatrixXd theta_draws;       // draws x (T K)
  std::uint64_t seed = 0;
  FitDiagnostics diagnostics;
  nlohmann::ordered_json settings = nlohmann::ordered_json::object();
  std::vector<std::string> notices;

  int K() const { return num_params(family); }
  int T() const { return last_year - first_year + 1; }
  int draws() const { return static_cast<int>(theta_draws.rows()); }
  SurvivalParams draw_params(int d, int t) const {
    SurvivalParams p{family, {}};
    for (int k = 0; k < K(); ++k) p.theta[k] = theta_draws(d, t * K() + k);
    return p;
  }
  SurvivalParams mode_params(int t) const {
    SurvivalParams p{family, {}};
    for (int k = 0; k < K(); ++k) p.theta[k] = theta_mode[t * K() + k];
    return p;
  }
};

namespace detail {

inline nlohmann::ordered_json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const PosteriorFit& f) {
  nlohmann::ordered_json j;
  j["format"] = PosteriorFit::kFormat;
  j["version"] = PosteriorFit::kVersion;
  j["country"] = f.country;
  j["family"] = std::string(to_string(f.family));
  j["first_year"] = f.first_year;
  j["last_year"] = f.last_year;
  j["seed"] = f.seed;
  j["hyper_names"] = f.hyper_names;
  j["eta_hat"] = detail::vec_json(f.eta_hat);
  j["x_mode"] = detail::vec_json(f.x_mode);
  j["theta_mode"] = detail::vec_json(f.theta_mode);
  // packed lower triangle, row by row
  std::vector<double> L;
  for (Eigen::Index i = 0; i < f.precision_factor.rows(); ++i)
    for (Eigen::Index k = 0; k <= i; ++k) L.push_back(f.precision_factor(i, k));
  j["precision_factor"] = {{"n", f.precision_factor.rows()}, {"lower", L}};
  auto& d = j["diagnostics"];
  d["inner_iterations"] = f.diagnostics.inner_iterations;
  d["inner_grad_norm"] = f.diagnostics.inner_grad_norm;
  d["outer_iterations"] = f.diagnostics.outer_iterations;
  d["outer_evaluations"] = f.diagnostics.outer_evaluations;
  d["outer_grad_norm"] = f.diagnostics.outer_grad_norm;
  d["outer_converged"] = f.diagnostics.outer_converged;
  d["log_marginal"] = f.diagnostics.log_marginal;
  d["objective"] = f.diagnostics.objective;
  j["settings"] = f.settings;
  j["notices"] = f.notices;
  nlohmann::ordered_json draws = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < f.theta_draws.rows(); ++r)
    draws.push_back(detail::vec_json(f.theta_draws.row(r).transpose()));
  j["theta_draws"] = std::move(draws);
  return j;
}

inline PosteriorFit fit_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != PosteriorFit::kFormat)
      throw FormatError("not a posterior fit file");
    const int v = j.at("version").get<int>();
    if (v != PosteriorFit::kVersion)
      throw FormatError("posterior fit version " + std::to_string(v) + " is not supported (expected " +
                        std::to_string(PosteriorFit::kVersion) + ")");
    PosteriorFit f;
    f.country = j.at("country").get<std::string>();
    f.family = parse_family(j.at("family").get<std::string>());
    f.first_year = j.at("first_year").get<int>();
    f.last_year = j.at("last_year").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.hyper_names = j.at("hyper_names").get<std::vector<std::string>>();
    f.eta_hat = detail::json_vec(j.at("eta_hat"));
    f.x_mode = detail::json_vec(j.at("x_mode"));
    f.theta_mode = detail::json_vec(j.at("theta_mode"));
    const auto n = j.at("precision_factor").at("n").get<Eigen::Index>();
    const auto L = j.at("precision_factor").at("lower").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(L.size()) != n * (n + 1) / 2) throw FormatError("bad precision factor");
    f.precision_factor = Eigen::MatrixXd::Zero(n, n);
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k <= i; ++k) f.precision_factor(i, k) = L[at++];
    const auto& d = j.at("diagnostics");
    f.diagnostics.inner_iterations = d.at("inner_iterations").get<int>();
    f.diagnostics.inner_grad_norm = d.at("inner_grad_norm").get<double>();
    f.diagnostics.outer_iterations = d.at("outer_iterations").get<int>();
    f.diagnostics.outer_evaluations = d.at("outer_evaluations").get<int>();
    f.diagnostics.outer_grad_norm = d.at("outer_grad_norm").get<double>();
    f.diagnostics.outer_converged = d.at("outer_converged").get<bool>();
    f.diagnostics.log_marginal = d.at("log_marginal").get<double>();
    f.diagnostics.objective = d.at("objective").get<double>();
    f.settings = j.at("settings");
    f.notices = j.at("notices").get<std::vector<std::string>>();
    const auto& draws = j.at("theta_draws");
    const Eigen::Index TK = f.T() * f.K();
    if (f.theta_mode.size() != TK) throw FormatError("theta_mode has the wrong length");
    f.theta_draws.resize(static_cast<Eigen::Index>(draws.size()), TK);
    for (std::size_t r = 0; r < draws.size(); ++r) {
      const auto row = detail::json_vec(draws[r]);
      if (row.size() != TK) throw FormatError("draw " + std::to_string(r) + " has the wrong length");
      f.theta_draws.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("posterior fit: ") + e.what());
  }
}

inline void save_fit(const PosteriorFit& f, const std::string& path) {
  std::ofstream o(path);
  if (!o) throw DataError("cannot write " + path);
  o << to_json(f).dump() << '\n';
}

inline PosteriorFit load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return fit_from_json(j);
}

struct FitOptions {
  int draws = 1000;
  std::uint64_t seed = 1;
  HyperOptions hyper;
  std::optional<Eigen::VectorXd> eta0;
};

inline PosteriorFit fit_country(const Model& m, const CountryDataset& ds, const FitOptions& opt = {}) {
  if (opt.draws < 1) throw DomainError("at least one posterior draw is needed");
  const auto h = optimize_hyper(m, opt.eta0 ? *opt.eta0 : m.initial_hyper(), opt.hyper);
  PosteriorFit f;
  f.country = ds.country;
  f.family = m.family();
  f.first_year = ds.first_year;
  f.last_year = ds.last_year;
  f.hyper_names = m.hyper_names();
  f.eta_hat = h.eta;
  f.x_mode = h.mode.x;
  f.precision_factor = h.mode.factor;
  f.theta_mode = m.theta(h.mode.x);
  f.seed = opt.seed;
  const Eigen::MatrixXd xs = sample_posterior(h.mode.x, h.mode.factor, opt.draws, opt.seed);
  f.theta_draws.resize(opt.draws, m.T() * m.K());
  for (int d = 0; d < opt.draws; ++d) f.theta_draws.row(d) = m.theta(xs.row(d).transpose()).transpose();
  f.diagnostics = {h.mode.iterations, h.mode.grad_norm, h.iterations, h.evaluations,
                   h.grad_norm,       h.converged,      h.log_marginal, h.objective};
  if (!h.converged)
    f.notices.push_back("hyperparameter search stopped with gradient " + std::to_string(h.grad_norm));
  return f;
}

// ---- independent yearly VR fits ---------------------------------------------------

struct YearlyMle {
  int year = 0;
  Family family = Family::LogLogistic;
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd covariance;
  SurvivalParams params() const {
    SurvivalParams p{family, {}};
    for (int k = 0; k < theta_hat.size(); ++k) p.theta[k] = theta_hat[k];
    return p;
  }
};

inline YearlyMle yearly_vr_mle(const CountryDataset& ds, int year, Family family) {
  std::vector<VrObservation> obs;
  for (const auto& o : ds.vr)
    if (o.year == year) obs.push_back(o);
  const std::string yr = "VR " + std::to_string(year) + ": ";
  if (obs.empty()) throw DataError(yr + "no VR counts");
  const int K = num_params(family);
  if (static_cast<int>(obs.size()) < K)
    throw IdentifiabilityError(yr + std::to_string(obs.size()) + " count(s) cannot determine " +
                               std::to_string(K) + " parameters");
  const auto neonatal = std::find_if(obs.begin(), obs.end(),
                                     [](const auto& o) { return o.kind == VrKind::Neonatal; });
  if (family == Family::PiecewiseExponential && neonatal == obs.end())
    throw IdentifiabilityError(yr + "piecewise-exponential fit needs a neonatal count");

  const NewtonObjective f = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g,
                                Eigen::MatrixXd* H) -> double {
    SurvivalParams p{family, {}};
    for (int k = 0; k < K; ++k) p.theta[k] = th[k];
    double ll = 0.0;
    if (g) g->setZero(K);
    if (H) H->setZero(K, K);
    Eigen::VectorXd gi;
    Eigen::MatrixXd Hi;
    for (const auto& o : obs) {
      if (!g && !H) {
        try {
          ll += loglik_vr(o, p, 0.0);
        } catch (const NumericError&) {
          return -std::numeric_limits<double>::infinity();
        }
        continue;
      }
      ll += loglik_vr(o, p, 0.0, &gi, &Hi);
      if (g) *g += gi.head(K);
      if (H) *H += Hi.topLeftCorner(K, K);
    }
    return ll;
  };

  std::vector<Eigen::VectorXd> starts;
  if (family == Family::PiecewiseExponential) {
    const double q1 = std::clamp(static_cast<double>(neonatal->deaths) / (neonatal->f * neonatal->births),
                                 1e-6, 0.5);
    const double h0 = -std::log1p(-q1);
    starts.push_back(Eigen::Vector3d(std::log(0.002), std::log(0.004), std::log(std::max(h0 - 0.006, 0.1 * h0))));
    starts.push_back(Eigen::Vector3d(std::log(0.01 * h0), std::log(0.05 * h0), std::log(0.94 * h0)));
  } else {
    for (double lm : {13.0, 9.0, 17.0})
      for (double s : {0.27, 0.45}) starts.push_back(Eigen::Vector2d(lm, logit(s)));
  }
  std::optional<NewtonResult> best;
  for (const auto& s : starts) {
    if (!std::isfinite(f(s, nullptr, nullptr))) continue;
    try {
      auto r = newton_maximize(f, s);
      if (r.converged && (!best || r.value > best->value)) best = std::move(r);
    } catch (const NumericError&) {
    }
  }
  if (!best) throw IdentifiabilityError(yr + "no maximum found; parameters not identified");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-best->hessian);
  const auto ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-10 * std::max(1.0, ev.maxCoeff())))
    throw IdentifiabilityError(yr + "information matrix is singular; parameters not identified");
  YearlyMle out;
  out.year = year;
  out.family = family;
  out.theta_hat = best->x;
  out.covariance = (-best->hessian).inverse();
  return out;
}

}  // namespace childsurv
