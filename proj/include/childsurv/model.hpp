#pragma once

// Joint log posterior of the latent field: survey estimates as Gaussian
// pseudo-observations, Poisson-lognormal VR counts, logit-normal rates,
// RW2 + iid temporal priors and PC hyperpriors. Gradients and Hessians are
// analytic in the latent field.
//
// Latent layout, per survival parameter k: [beta_k, gamma_k, u_k (T-2),
// eps_k (T)], then one overdispersion effect kappa per canonical VR count.
//   theta_{t,k} = beta_k + gamma_k c_t + (Z u_k)_t + eps_{k,t}
// Z spans the RW2 directions orthogonal to constants and linear trends, so
// delta = Z u meets both identifiability constraints; gamma carries the
// linear trend the constraint removes.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "childsurv/ad.hpp"
#include "childsurv/data.hpp"
#include "childsurv/survival.hpp"

namespace childsurv {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// ---- PC prior on a precision ----------------------------------------------

struct PcPrior {
  double U = 1.0;
  double alpha = 0.01;

  double lambda() const { return -std::log(alpha) / U; }
  void validate() const {
    if (!(U > 0.0) || !(alpha > 0.0 && alpha < 1.0))
      throw DomainError("PC prior needs U > 0 and 0 < alpha < 1");
  }
};

// pi(tau) = (lambda/2) tau^(-3/2) exp(-lambda tau^(-1/2))
inline double pc_log_density_precision(double tau, const PcPrior& pc) {
  const double l = pc.lambda();
  return std::log(l / 2.0) - 1.5 * std::log(tau) - l / std::sqrt(tau);
}

// Same density on eta = log tau.
inline double pc_log_density_log_precision(double eta, const PcPrior& pc) {
  const double l = pc.lambda();
  return std::log(l / 2.0) - 0.5 * eta - l * std::exp(-0.5 * eta);
}

inline double pc_median_log_precision(const PcPrior& pc) {
  return 2.0 * std::log(pc.lambda() / std::numbers::ln2);
}

struct PriorSettings {
  Family family = Family::LogLogistic;
  std::array<double, 3> intercept_mean{std::log(300.0), 0.0, 0.0};
  double intercept_sd = 4.0;
  double slope_sd = 4.0;  // per unit of rescaled time (whole period = 1)
  PcPrior rw2{1.0, 0.01};
  PcPrior iid{0.5, 0.01};
  PcPrior vr{0.25, 0.01};

  static PriorSettings defaults(Family f) {
    PriorSettings p;
    p.family = f;
    if (f == Family::PiecewiseExponential) p.intercept_mean = {-8.0, -6.0, -4.0};
    return p;
  }
  void validate() const {
    if (!(intercept_sd > 0.0) || !(slope_sd > 0.0)) throw DomainError("prior sds must be positive");
    rw2.validate();
    iid.validate();
    vr.validate();
  }
};

// ---- survey estimates -----------------------------------------------------

struct FbhTerm {
  std::string survey_id;
  int offset = 0;  // first theta index (year-major) covered by the survey
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd V_inv;
  double log_norm = 0.0;  // -1/2 log |2 pi V|
  double ridge = 0.0;

  // Cholesky of V, adding a ridge of 1e-8 mean(diag V) escalated x10 up to
  // 1e-4 when V is not numerically positive definite.
  static FbhTerm make(const SurveyEstimate& e, int first_year) {
    FbhTerm t;
    t.survey_id = e.survey_id;
    t.offset = (e.first_year() - first_year) * e.K();
    t.theta_hat = e.theta_hat;
    const Eigen::Index n = e.V_hat.rows();
    if (n != e.theta_hat.size() || e.V_hat.cols() != n)
      throw DataError("survey " + e.survey_id + ": covariance size mismatch");
    const double scale = e.V_hat.diagonal().mean();
    Eigen::MatrixXd V = 0.5 * (e.V_hat + e.V_hat.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    for (double r = 1e-8; llt.info() != Eigen::Success || !pd(llt); r *= 10.0) {
      if (r > 1e-4 * (1.0 + 1e-9))
        throw NumericError("survey " + e.survey_id + ": covariance is singular after ridge");
      t.ridge = r * scale;
      Eigen::MatrixXd Vr = V;
      Vr.diagonal().array() += t.ridge;
      llt.compute(Vr);
    }
    t.V_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    t.log_norm = -0.5 * (static_cast<double>(n) * kLog2Pi + logdet);
    return t;
  }

 private:
  static bool pd(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const auto d = llt.matrixLLT().diagonal();
    return (d.array() > 0.0).all() && d.allFinite() &&
           d.minCoeff() > 1e-13 * std::max(1.0, d.maxCoeff());
  }
};

// log N(theta_hat; theta, V); gradient V^-1 (theta_hat - theta), Hessian -V^-1.
inline double loglik_fbh(const FbhTerm& t, const Eigen::VectorXd& theta_block,
                         Eigen::VectorXd* g = nullptr, Eigen::MatrixXd* H = nullptr) {
  const Eigen::VectorXd r = t.theta_hat - theta_block;
  const Eigen::VectorXd Vr = t.V_inv * r;
  if (g) *g = Vr;
  if (H) *H = -t.V_inv;
  return t.log_norm - 0.5 * r.dot(Vr);
}

// ---- VR counts --------------------------------------------------------------

// Expected deaths before the overdispersion factor exp(kappa).
template <class S>
S vr_mean(const VrObservation& o, const SurvivalParamsT<S>& p) {
  if (o.kind == VrKind::Neonatal) return death_prob(p, 1.0) * (o.f * o.births);
  if (o.kind == VrKind::PostNeonatal && o.infant_identity)
    return person_time_rate(p, AgeBand{0, 12}) * (o.f * o.population) -
           death_prob(p, 1.0) * (o.f * o.births);
  return person_time_rate(p, o.band) * (o.f * o.population);
}

// Poisson log-pmf of the count at mean vr_mean * exp(kappa). Gradient and
// Hessian are over (theta_t, kappa), kappa last. A non-positive post-neonatal
// mean is an error, except in value-only line-search evaluations where it
// is clamped to 1e-12.
inline double loglik_vr(const VrObservation& o, const SurvivalParams& p, double kappa,
                        Eigen::VectorXd* g = nullptr, Eigen::MatrixXd* H = nullptr,
                        bool line_search = false) {
  const int K = p.size();
  const double D = static_cast<double>(o.deaths);
  const double lgD = std::lgamma(D + 1.0);
  const double ek = std::exp(kappa);
  if (!g && !H) {
    double m = vr_mean(o, p);
    if (!(m > 0.0)) {
      if (!line_search)
        throw NumericError("VR " + std::to_string(o.year) + ": non-positive post-neonatal mean");
      m = 1e-12;
    }
    return D * (std::log(m) + kappa) - m * ek - lgD;
  }
  const auto d = vr_mean(o, seed_params<3>(p));
  if (!(d.v > 0.0))
    throw NumericError("VR " + std::to_string(o.year) + ": non-positive post-neonatal mean");
  const double a = D / d.v - ek;
  if (g) {
    g->resize(K + 1);
    for (int i = 0; i < K; ++i) (*g)[i] = a * d.g[i];
    (*g)[K] = D - d.v * ek;
  }
  if (H) {
    H->resize(K + 1, K + 1);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) (*H)(i, j) = a * d.hess(i, j) - D / (d.v * d.v) * d.g[i] * d.g[j];
      (*H)(i, K) = (*H)(K, i) = -ek * d.g[i];
    }
    (*H)(K, K) = -d.v * ek;
  }
  return D * (std::log(d.v) + kappa) - d.v * ek - lgD;
}

// ---- rates ------------------------------------------------------------------

// logit(q_obs) ~ N(logit(1 - S(age)), logit_var)
inline double loglik_rate(const RateRecord& r, const SurvivalParams& p,
                          Eigen::VectorXd* g = nullptr, Eigen::MatrixXd* H = nullptr) {
  const int K = p.size();
  const double y = logit(r.q);
  const double nu = r.logit_var;
  if (!g && !H) {
    const double e = y - logit_death_prob(p, r.age);
    return -0.5 * (kLog2Pi + std::log(nu)) - 0.5 * e * e / nu;
  }
  const auto m = logit_death_prob(seed_params<3>(p), r.age);
  const double e = y - m.v;
  if (g) {
    g->resize(K);
    for (int i = 0; i < K; ++i) (*g)[i] = e / nu * m.g[i];
  }
  if (H) {
    H->resize(K, K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) (*H)(i, j) = (e * m.hess(i, j) - m.g[i] * m.g[j]) / nu;
  }
  return -0.5 * (kLog2Pi + std::log(nu)) - 0.5 * e * e / nu;
}

// Bivariate normal for a (q1, q5) pair from one record, both in the same year.
inline double loglik_rate_pair(const RateRecord& a, const RateRecord& b, const SurvivalParams& p,
                               Eigen::VectorXd* g = nullptr, Eigen::MatrixXd* H = nullptr) {
  const int K = p.size();
  Eigen::Matrix2d S;
  S << a.logit_var, a.logit_cov, a.logit_cov, b.logit_var;
  const double det = S.determinant();
  if (!(det > 0.0)) throw DataError("SBH pair " + a.source + ": covariance not positive definite");
  const Eigen::Matrix2d P = S.inverse();
  const auto ma = logit_death_prob(seed_params<3>(p), a.age);
  const auto mb = logit_death_prob(seed_params<3>(p), b.age);
  const Eigen::Vector2d e(logit(a.q) - ma.v, logit(b.q) - mb.v);
  const Eigen::Vector2d Pe = P * e;
  if (g) {
    g->resize(K);
    for (int i = 0; i < K; ++i) (*g)[i] = Pe[0] * ma.g[i] + Pe[1] * mb.g[i];
  }
  if (H) {
    H->resize(K, K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) {
        const Eigen::Vector2d gi(ma.g[i], mb.g[i]), gj(ma.g[j], mb.g[j]);
        (*H)(i, j) = Pe[0] * ma.hess(i, j) + Pe[1] * mb.hess(i, j) - gi.dot(P * gj);
      }
  }
  return -kLog2Pi - 0.5 * std::log(det) - 0.5 * e.dot(Pe);
}

// ---- RW2 basis ----------------------------------------------------------------

struct Rw2Basis {
  int T = 0;
  Eigen::MatrixXd Z;       // T x (T-2), orthonormal, orthogonal to 1 and t
  Eigen::VectorXd lambda;  // eigenvalues of D'D on those directions
  Eigen::VectorXd c;       // centred, rescaled time (t - (T-1)/2) / (T-1)
};

inline Eigen::MatrixXd rw2_structure(int T) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(T - 2, T);
  for (int i = 0; i < T - 2; ++i) D.row(i).segment(i, 3) << 1.0, -2.0, 1.0;
  return D.transpose() * D;
}

inline Rw2Basis make_rw2_basis(int T) {
  if (T < 3) throw DomainError("RW2 needs at least 3 time points");
  Rw2Basis b;
  b.T = T;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rw2_structure(T));
  // eigenvalues ascending: the first two span constants and linear trends
  b.Z = es.eigenvectors().rightCols(T - 2);
  b.lambda = es.eigenvalues().tail(T - 2);
  // remove the rounding-level component along 1 and t
  Eigen::MatrixXd N(T, 2);
  for (int t = 0; t < T; ++t) N.row(t) << 1.0, t;
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(N);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(T, 2);
  b.Z -= Q * (Q.transpose() * b.Z);
  b.c.resize(T);
  for (int t = 0; t < T; ++t) b.c[t] = (t - 0.5 * (T - 1)) / (T - 1);
  return b;
}

// RW2 log density of delta = Z u restricted to the constrained subspace:
// sum_j [1/2 log(tau lambda_j / 2 pi) - 1/2 tau lambda_j u_j^2].
inline double rw2_log_density(const Eigen::VectorXd& u, const Eigen::VectorXd& lambda,
                              double log_tau) {
  const double tau = std::exp(log_tau);
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j)
    s += 0.5 * (log_tau + std::log(lambda[j]) - kLog2Pi) - 0.5 * tau * lambda[j] * u[j] * u[j];
  return s;
}

// ---- the model ----------------------------------------------------------------

struct LatentLayout {
  int K = 0;
  int T = 0;
  int n_kappa = 0;

  int block() const { return 2 * T; }
  int beta(int k) const { return k * block(); }
  int gamma(int k) const { return k * block() + 1; }
  int u(int k, int j) const { return k * block() + 2 + j; }
  int eps(int k, int t) const { return k * block() + T + t; }
  int kappa(int i) const { return K * block() + i; }
  int n() const { return K * block() + n_kappa; }
  int theta_index(int t, int k) const { return t * K + k; }
};

class Model {
 public:
  Model(const CountryDataset& ds, const std::vector<SurveyEstimate>& surveys,
        PriorSettings prior)
      : prior_(std::move(prior)),
        first_year_(ds.first_year),
        T_(ds.T()),
        basis_(make_rw2_basis(ds.T())),
        vr_(ds.vr),
        rates_(ds.rates) {
    prior_.validate();
    const int K = num_params(prior_.family);
    layout_ = {K, T_, static_cast<int>(vr_.size())};
    for (const auto& s : surveys) {
      if (s.family != prior_.family)
        throw DataError("survey " + s.survey_id + " was estimated with another family");
      if (s.first_year() < ds.first_year || s.last_year() > ds.last_year)
        throw DataError("survey " + s.survey_id + " extends outside the estimation period");
      fbh_.push_back(FbhTerm::make(s, ds.first_year));
    }
    for (std::size_t i = 0; i < rates_.size(); ++i) {
      const int p = rates_[i].partner;
      if (p >= 0 && (p >= static_cast<int>(rates_.size()) || rates_[p].partner != static_cast<int>(i) ||
                     rates_[p].year != rates_[i].year))
        throw DataError("rate " + rates_[i].source + ": inconsistent pairing");
    }
    B_.resize(T_, 2 * T_);
    B_.col(0).setOnes();
    B_.col(1) = basis_.c;
    B_.middleCols(2, T_ - 2) = basis_.Z;
    B_.rightCols(T_).setIdentity();
  }

  const LatentLayout& layout() const { return layout_; }
  const PriorSettings& prior() const { return prior_; }
  const Rw2Basis& basis() const { return basis_; }
  Family family() const { return prior_.family; }
  int K() const { return layout_.K; }
  int T() const { return T_; }
  int first_year() const { return first_year_; }
  bool has_vr() const { return !vr_.empty(); }
  const std::vector<FbhTerm>& fbh_terms() const { return fbh_; }
  const std::vector<VrObservation>& vr() const { return vr_; }
  const std::vector<RateRecord>& rates() const { return rates_; }

  // [log tau_rw2(k)..., log tau_iid(k)..., log phi if any VR counts]
  int n_hyper() const { return 2 * K() + (has_vr() ? 1 : 0); }
  std::vector<std::string> hyper_names() const {
    std::vector<std::string> n;
    for (int k = 0; k < K(); ++k) n.push_back("log_tau_rw2_" + std::to_string(k + 1));
    for (int k = 0; k < K(); ++k) n.push_back("log_tau_iid_" + std::to_string(k + 1));
    if (has_vr()) n.push_back("log_phi");
    return n;
  }

  Eigen::VectorXd initial_hyper() const {
    Eigen::VectorXd eta(n_hyper());
    for (int k = 0; k < K(); ++k) {
      eta[k] = pc_median_log_precision(prior_.rw2);
      eta[K() + k] = pc_median_log_precision(prior_.iid);
    }
    if (has_vr()) eta[2 * K()] = pc_median_log_precision(prior_.vr);
    return eta;
  }

  Eigen::VectorXd initial_latent() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(layout_.n());
    for (int k = 0; k < K(); ++k) x[layout_.beta(k)] = prior_.intercept_mean[k];
    return x;
  }

  // Stacked theta, index t K + k.
  Eigen::VectorXd theta(const Eigen::VectorXd& x) const {
    Eigen::VectorXd th(T_ * K());
    for (int k = 0; k < K(); ++k) {
      const Eigen::VectorXd tk = B_ * x.segment(layout_.beta(k), 2 * T_);
      for (int t = 0; t < T_; ++t) th[t * K() + k] = tk[t];
    }
    return th;
  }

  // theta = J x_block for each k; J is T x 2T.
  const Eigen::MatrixXd& design() const { return B_; }

  SurvivalParams params(const Eigen::VectorXd& theta, int t) const {
    SurvivalParams p{prior_.family, {}};
    for (int k = 0; k < K(); ++k) p.theta[k] = theta[t * K() + k];
    return p;
  }

  // Data log likelihood in theta/kappa coordinates. g_theta (TK), H_theta
  // (TK x TK), g_kappa, diagonal h_kappa and the theta-kappa cross block.
  struct ThetaDerivs {
    Eigen::VectorXd g_theta, g_kappa, h_kappa;
    Eigen::MatrixXd H_theta, H_theta_kappa;
  };

  double loglik(const Eigen::VectorXd& x, ThetaDerivs* d, bool line_search = false) const {
    const int K = this->K();
    const int TK = T_ * K;
    const Eigen::VectorXd th = theta(x);
    if (d) {
      d->g_theta = Eigen::VectorXd::Zero(TK);
      d->H_theta = Eigen::MatrixXd::Zero(TK, TK);
      d->g_kappa = Eigen::VectorXd::Zero(layout_.n_kappa);
      d->h_kappa = Eigen::VectorXd::Zero(layout_.n_kappa);
      d->H_theta_kappa = Eigen::MatrixXd::Zero(TK, layout_.n_kappa);
    }
    double ll = 0.0;
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    for (const auto& f : fbh_) {
      const auto n = f.theta_hat.size();
      ll += loglik_fbh(f, th.segment(f.offset, n), d ? &g : nullptr, d ? &H : nullptr);
      if (d) {
        d->g_theta.segment(f.offset, n) += g;
        d->H_theta.block(f.offset, f.offset, n, n) += H;
      }
    }
    for (int i = 0; i < layout_.n_kappa; ++i) {
      const auto& o = vr_[i];
      const int t = o.year - first_year_;
      const double kap = x[layout_.kappa(i)];
      ll += loglik_vr(o, params(th, t), kap, d ? &g : nullptr, d ? &H : nullptr, line_search);
      if (d) {
        d->g_theta.segment(t * K, K) += g.head(K);
        d->H_theta.block(t * K, t * K, K, K) += H.topLeftCorner(K, K);
        d->g_kappa[i] += g[K];
        d->h_kappa[i] += H(K, K);
        d->H_theta_kappa.col(i).segment(t * K, K) += H.col(K).head(K);
      }
    }
    for (std::size_t i = 0; i < rates_.size(); ++i) {
      const auto& r = rates_[i];
      if (r.partner >= 0 && r.partner < static_cast<int>(i)) continue;
      const int t = r.year - first_year_;
      const auto p = params(th, t);
      if (r.partner >= 0)
        ll += loglik_rate_pair(r, rates_[r.partner], p, d ? &g : nullptr, d ? &H : nullptr);
      else
        ll += loglik_rate(r, p, d ? &g : nullptr, d ? &H : nullptr);
      if (d) {
        d->g_theta.segment(t * K, K) += g;
        d->H_theta.block(t * K, t * K, K, K) += H;
      }
    }
    return ll;
  }

  // Latent prior given hyperparameters; its Hessian is diagonal.
  double logprior_latent(const Eigen::VectorXd& x, const Eigen::VectorXd& eta,
                         Eigen::VectorXd* g = nullptr, Eigen::VectorXd* hdiag = nullptr) const {
    const int K = this->K();
    const int n = layout_.n();
    if (g) *g = Eigen::VectorXd::Zero(n);
    if (hdiag) *hdiag = Eigen::VectorXd::Zero(n);
    double lp = 0.0;
    auto normal = [&](int i, double mean, double prec, double log_prec) {
      const double r = x[i] - mean;
      lp += 0.5 * (log_prec - kLog2Pi) - 0.5 * prec * r * r;
      if (g) (*g)[i] -= prec * r;
      if (hdiag) (*hdiag)[i] -= prec;
    };
    const double pb = 1.0 / (prior_.intercept_sd * prior_.intercept_sd);
    const double pg = 1.0 / (prior_.slope_sd * prior_.slope_sd);
    for (int k = 0; k < K; ++k) {
      normal(layout_.beta(k), prior_.intercept_mean[k], pb, std::log(pb));
      normal(layout_.gamma(k), 0.0, pg, std::log(pg));
      const double ld = eta[k], td = std::exp(ld);
      for (int j = 0; j < T_ - 2; ++j)
        normal(layout_.u(k, j), 0.0, td * basis_.lambda[j], ld + std::log(basis_.lambda[j]));
      const double le = eta[K + k], te = std::exp(le);
      for (int t = 0; t < T_; ++t) normal(layout_.eps(k, t), 0.0, te, le);
    }
    if (has_vr()) {
      const double lf = eta[2 * K], tf = std::exp(lf);
      for (int i = 0; i < layout_.n_kappa; ++i) normal(layout_.kappa(i), 0.0, tf, lf);
    }
    return lp;
  }

  double logprior_hyper(const Eigen::VectorXd& eta) const {
    const int K = this->K();
    double lp = 0.0;
    for (int k = 0; k < K; ++k) {
      lp += pc_log_density_log_precision(eta[k], prior_.rw2);
      lp += pc_log_density_log_precision(eta[K + k], prior_.iid);
    }
    if (has_vr()) lp += pc_log_density_log_precision(eta[2 * K], prior_.vr);
    return lp;
  }

  // log p(data | x) + log p(x | eta) + log p(eta), with gradient and
  // Hessian in x.
  double joint_logpost(const Eigen::VectorXd& x, const Eigen::VectorXd& eta,
                       Eigen::VectorXd* g = nullptr, Eigen::MatrixXd* H = nullptr,
                       bool line_search = false) const {
    const bool derivs = g || H;
    ThetaDerivs d;
    Eigen::VectorXd gp, hp;
    const double ll = loglik(x, derivs ? &d : nullptr, line_search);
    const double lp = logprior_latent(x, eta, derivs ? &gp : nullptr, derivs ? &hp : nullptr);
    const double value = ll + lp + logprior_hyper(eta);
    if (!derivs) return value;

    const int K = this->K();
    const int n = layout_.n();
    const int nb = 2 * T_;
    const int nk = layout_.n_kappa;
    const int kb = K * nb;
    // per-parameter slices of the theta derivatives
    auto slice_g = [&](int k) {
      Eigen::VectorXd v(T_);
      for (int t = 0; t < T_; ++t) v[t] = d.g_theta[t * K + k];
      return v;
    };
    if (g) {
      g->resize(n);
      for (int k = 0; k < K; ++k) g->segment(k * nb, nb) = B_.transpose() * slice_g(k);
      g->tail(nk) = d.g_kappa;
      *g += gp;
    }
    if (H) {
      H->setZero(n, n);
      for (int k = 0; k < K; ++k) {
        for (int l = k; l < K; ++l) {
          Eigen::MatrixXd Hkl(T_, T_);
          for (int t = 0; t < T_; ++t)
            for (int s = 0; s < T_; ++s) Hkl(t, s) = d.H_theta(t * K + k, s * K + l);
          const Eigen::MatrixXd blk = B_.transpose() * Hkl * B_;
          H->block(k * nb, l * nb, nb, nb) = blk;
          if (l != k) H->block(l * nb, k * nb, nb, nb) = blk.transpose();
        }
        if (nk > 0) {
          Eigen::MatrixXd Ck(T_, nk);
          for (int t = 0; t < T_; ++t) Ck.row(t) = d.H_theta_kappa.row(t * K + k);
          const Eigen::MatrixXd blk = B_.transpose() * Ck;
          H->block(k * nb, kb, nb, nk) = blk;
          H->block(kb, k * nb, nk, nb) = blk.transpose();
        }
      }
      for (int i = 0; i < nk; ++i) (*H)(kb + i, kb + i) += d.h_kappa[i];
      H->diagonal() += hp;
    }
    return value;
  }

 private:
  PriorSettings prior_;
  int first_year_;
  int T_;
  Rw2Basis basis_;
  LatentLayout layout_;
  Eigen::MatrixXd B_;
  std::vector<FbhTerm> fbh_;
  std::vector<VrObservation> vr_;
  std::vector<RateRecord> rates_;
};

}  // namespace childsurv
