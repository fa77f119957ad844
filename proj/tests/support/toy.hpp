#pragma once

// Small synthetic countries with every observation channel, and random
// latent states around a plausible mortality level.

#include <random>

#include "childsurv/model.hpp"
#include "support/oracles.hpp"
#include "support/simulate.hpp"

namespace toy {

namespace cs = childsurv;

inline cs::SurvivalParams reference(cs::Family f) {
  if (f == cs::Family::LogLogistic) return {f, {13.0, oracle::logit(0.27), 0.0}};
  return cs::piecewise_exponential(0.0025, 0.0015, 0.025);
}

// Mid-year population in a band for a stationary birth cohort of size B.
inline double population(const cs::SurvivalParams& p, double B, double a, double n) {
  const auto S = [&](double x) { return sim::survival(p, x); };
  std::vector<double> cuts{a};
  for (double c : {1.0, 12.0})
    if (c > a && c < a + n) cuts.push_back(c);
  cuts.push_back(a + n);
  return B * oracle::integrate_pieces(S, cuts) / 12.0;
}

// T-year country starting in 2000 with one survey covering every year,
// neonatal / post-neonatal (infant identity) / child counts in every year,
// a band count with its own population, one plain rate and one census SBH pair.
inline cs::CountryDataset country(cs::Family f, int T = 3, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  const auto ref = reference(f);
  const int K = cs::num_params(f);
  cs::DatasetInputs in;
  in.country = "Toy";
  in.first_year = 2000;
  in.last_year = 2000 + T - 1;

  cs::SurveyEstimate e;
  e.survey_id = "S";
  e.family = f;
  for (int y = in.first_year; y <= in.last_year; ++y) e.years.push_back(y);
  e.identified.assign(T, true);
  e.theta_hat.resize(T * K);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) e.theta_hat[t * K + k] = ref.theta[k] + 0.1 * N(rng);
  Eigen::MatrixXd A(T * K, T * K);
  for (int i = 0; i < T * K; ++i)
    for (int j = 0; j < T * K; ++j) A(i, j) = 0.1 * N(rng);
  e.V_hat = A * A.transpose() + 0.02 * Eigen::MatrixXd::Identity(T * K, T * K);
  in.surveys.push_back(e);

  const double B = 50000.0;
  for (int y = in.first_year; y <= in.last_year; ++y) {
    const double q1 = 1.0 - sim::survival(ref, 1.0);
    const double q12 = 1.0 - sim::survival(ref, 12.0);
    const double q60 = 1.0 - sim::survival(ref, 60.0);
    in.vr.push_back({y, cs::parse_vr_band("neonatal"), std::lround(B * q1), 1.0});
    in.vr.push_back({y, cs::parse_vr_band("infant"), std::lround(B * q12), 1.0});
    in.vr.push_back({y, cs::parse_vr_band("under5"), std::lround(B * q60), 1.0});
    in.exposure.births[y] = B;
    in.exposure.population[{y, {0, 12}}] = population(ref, B, 0, 12);
    in.exposure.population[{y, {12, 48}}] = population(ref, B, 12, 48);
  }
  const int y0 = in.first_year;
  in.rates.push_back({"R", y0 + T - 1, 36.0, 0.06, 0.04, cs::RateKind::Other});
  in.sbh.push_back({"C", y0 + 0.5, "30-34", 0.045, 0.07, true});
  return cs::build_dataset(in);
}

inline cs::Model model(const cs::CountryDataset& ds, cs::Family f) {
  return cs::Model(ds, ds.surveys, cs::PriorSettings::defaults(f));
}

inline Eigen::VectorXd random_latent(const cs::Model& m, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  const auto& L = m.layout();
  const auto ref = reference(m.family());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(L.n());
  for (int k = 0; k < L.K; ++k) {
    x[L.beta(k)] = ref.theta[k] + 0.2 * N(rng);
    x[L.gamma(k)] = 0.3 * N(rng);
    for (int j = 0; j < L.T - 2; ++j) x[L.u(k, j)] = 0.1 * N(rng);
    for (int t = 0; t < L.T; ++t) x[L.eps(k, t)] = 0.1 * N(rng);
  }
  for (int i = 0; i < L.n_kappa; ++i) x[L.kappa(i)] = 0.1 * N(rng);
  return x;
}

inline Eigen::VectorXd random_hyper(const cs::Model& m, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::VectorXd eta = m.initial_hyper();
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] += N(rng);
  return eta;
}

// max |a - b| / max(|b|_inf, 1e-300)
inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace toy
