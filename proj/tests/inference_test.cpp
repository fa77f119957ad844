#include <cstdio>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "childsurv/inference.hpp"
#include "support/gaussian.hpp"
#include "support/toy.hpp"

namespace cs = childsurv;

namespace {

constexpr cs::Family kFamilies[] = {cs::Family::LogLogistic, cs::Family::PiecewiseExponential};

cs::CountryDataset survey_only(cs::Family f, int T, const std::vector<std::pair<int, int>>& spans,
                               std::uint64_t seed) {
  cs::DatasetInputs in;
  in.country = "Gauss";
  in.first_year = 1990;
  in.last_year = 1990 + T - 1;
  in.surveys = gauss_oracle::surveys(f, in.first_year, T, spans, seed);
  return cs::build_dataset(in);
}

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd C = X.rowwise() - X.colwise().mean();
  return C.transpose() * C / static_cast<double>(X.rows() - 1);
}

}  // namespace

TEST(InnerMode, GaussianDataMatchesClosedForm) {
  std::mt19937_64 rng(11);
  for (auto f : kFamilies) {
    for (int T : {3, 8}) {
      const std::vector<std::pair<int, int>> spans =
          T == 3 ? std::vector<std::pair<int, int>>{{0, 2}} : std::vector<std::pair<int, int>>{{0, 5}, {3, 7}};
      const auto ds = survey_only(f, T, spans, 7 + T);
      const auto m = toy::model(ds, f);
      for (int rep = 0; rep < 3; ++rep) {
        const auto eta = toy::random_hyper(m, rng);
        const auto mode = cs::inner_mode(m, eta, m.initial_latent());
        const auto ref = gauss_oracle::solve(m.prior(), ds.first_year, T, eta, ds.surveys);
        EXPECT_LE(mode.iterations, 2);
        EXPECT_LT(toy::rel_err(m.theta(mode.x), ref.mean), 1e-10);
        const auto J = gauss_oracle::theta_jacobian(m);
        const Eigen::MatrixXd cov = J * mode.neg_hessian.inverse() * J.transpose();
        EXPECT_LT(toy::rel_err(cov, ref.cov), 1e-8);
        EXPECT_NEAR(cs::laplace_marginal(m, eta, mode), ref.log_marginal, 1e-8);
      }
    }
  }
}

TEST(InnerMode, VarianceScaling) {
  // scaling every prior and sampling variance by c keeps the mean and
  // scales the posterior covariance by c
  const auto f = cs::Family::PiecewiseExponential;
  const auto ds = survey_only(f, 6, {{0, 3}, {2, 5}}, 3);
  const auto m1 = toy::model(ds, f);
  std::mt19937_64 rng(2);
  const auto eta = toy::random_hyper(m1, rng);
  const auto a = cs::inner_mode(m1, eta, m1.initial_latent());
  for (double c : {0.25, 3.0}) {
    auto prior = cs::PriorSettings::defaults(f);
    prior.intercept_sd *= std::sqrt(c);
    prior.slope_sd *= std::sqrt(c);
    auto surveys = ds.surveys;
    for (auto& s : surveys) s.V_hat *= c;
    const cs::Model m2(ds, surveys, prior);
    const Eigen::VectorXd eta2 = eta.array() - std::log(c);
    const auto b = cs::inner_mode(m2, eta2, m2.initial_latent());
    EXPECT_LT(toy::rel_err(m2.theta(b.x), m1.theta(a.x)), 1e-10);
    const auto J = gauss_oracle::theta_jacobian(m1);
    const Eigen::MatrixXd ca = J * a.neg_hessian.inverse() * J.transpose();
    const Eigen::MatrixXd cb = J * b.neg_hessian.inverse() * J.transpose();
    EXPECT_LT(toy::rel_err(cb, c * ca), 1e-9);
  }
}

TEST(InnerMode, EmptyDatasetSitsAtPriorMean) {
  for (auto f : kFamilies) {
    cs::DatasetInputs in;
    in.country = "Empty";
    in.first_year = 2000;
    in.last_year = 2009;
    const auto ds = cs::build_dataset(in);
    const cs::Model m(ds, {}, cs::PriorSettings::defaults(f));
    std::mt19937_64 rng(4);
    const auto mode = cs::inner_mode(m, m.initial_hyper(), toy::random_latent(m, rng));
    const auto& L = m.layout();
    for (int k = 0; k < m.K(); ++k) EXPECT_NEAR(mode.x[L.beta(k)], m.prior().intercept_mean[k], 1e-10);
    Eigen::VectorXd rest = mode.x;
    for (int k = 0; k < m.K(); ++k) rest[L.beta(k)] = 0.0;
    EXPECT_LT(rest.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(InnerMode, ConvergesOnNonGaussianToyCountry) {
  std::mt19937_64 rng(8);
  for (auto f : kFamilies) {
    const auto ds = toy::country(f, 5, 3);
    const auto m = toy::model(ds, f);
    const auto eta = m.initial_hyper();
    const auto mode = cs::inner_mode(m, eta, m.initial_latent());
    EXPECT_LT(mode.grad_norm, 1e-8);
    // a different start lands on the same mode
    const auto other = cs::inner_mode(m, eta, toy::random_latent(m, rng));
    EXPECT_LT((other.x - mode.x).cwiseAbs().maxCoeff(), 1e-7);
    // Laplace marginal equals the joint with the latent field integrated out
    // to second order: check it is finite and below the unnormalised peak
    const double lm = cs::laplace_marginal(m, eta, mode);
    EXPECT_TRUE(std::isfinite(lm));
  }
}

TEST(OptimizeHyper, MatchesClosedFormMarginal) {
  const auto f = cs::Family::LogLogistic;
  const int T = 12;
  const auto ds = survey_only(f, T, {{0, 7}, {4, 11}}, 21);
  const auto m = toy::model(ds, f);
  const auto fit = cs::optimize_hyper(m, m.initial_hyper());
  EXPECT_TRUE(fit.converged);

  // independent maximisation of the exact marginal + hyperprior
  const auto exact = [&](const Eigen::VectorXd& eta) {
    if (eta.cwiseAbs().maxCoeff() > 40.0) return std::numeric_limits<double>::infinity();
    return -(gauss_oracle::solve(m.prior(), ds.first_year, T, eta, ds.surveys).log_marginal +
             m.logprior_hyper(eta));
  };
  const auto ref = cs::bfgs_minimize(exact, m.initial_hyper(), {1e-7, 500, 1e-5, 2.0});
  EXPECT_LT((fit.eta - ref.x).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_NEAR(fit.objective, -ref.value, 1e-6);

  const auto again = cs::optimize_hyper(m, fit.eta);
  EXPECT_LE(again.iterations, 2);
  EXPECT_LT((again.eta - fit.eta).cwiseAbs().maxCoeff(), 1e-4);

  const Eigen::VectorXd lo = m.initial_hyper().array() - 1.5;
  const Eigen::VectorXd hi = m.initial_hyper().array() + 1.5;
  const auto a = cs::optimize_hyper(m, lo);
  const auto b = cs::optimize_hyper(m, hi);
  EXPECT_LT((a.eta - b.eta).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(OptimizeHyper, RecoversSimulatedRw2Precision) {
  // theta_k = level + RW2 path with known precision; three overlapping surveys
  const auto f = cs::Family::LogLogistic;
  const int T = 60;
  const int K = 2;
  const double log_tau = 4.0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> N(0.0, 1.0);
  const auto base = cs::PriorSettings::defaults(f).intercept_mean;
  Eigen::MatrixXd truth(T, K);
  for (int k = 0; k < K; ++k) {
    double v = base[k], slope = 0.0;
    for (int t = 0; t < T; ++t) {
      truth(t, k) = v;
      slope += std::exp(-0.5 * log_tau) * N(rng);
      v += slope;
    }
    truth.col(k).array() -= truth.col(k).mean() - base[k];
  }
  cs::DatasetInputs in;
  in.country = "Sim";
  in.first_year = 1950;
  in.last_year = 1950 + T - 1;
  const std::pair<int, int> spans[] = {{0, 29}, {15, 44}, {30, 59}};
  int id = 0;
  for (const auto& [a, b] : spans) {
    cs::SurveyEstimate e;
    e.survey_id = "S" + std::to_string(++id);
    e.family = f;
    const int n = (b - a + 1) * K;
    for (int y = a; y <= b; ++y) e.years.push_back(in.first_year + y);
    e.identified.assign(e.years.size(), true);
    e.V_hat = 0.0025 * Eigen::MatrixXd::Identity(n, n);
    e.theta_hat.resize(n);
    for (int i = 0; i < n; ++i) e.theta_hat[i] = truth(a + i / K, i % K) + 0.05 * N(rng);
    in.surveys.push_back(e);
  }
  const auto ds = cs::build_dataset(in);
  const auto m = toy::model(ds, f);
  const auto fit = cs::optimize_hyper(m, m.initial_hyper());
  EXPECT_TRUE(fit.converged);
  for (int k = 0; k < K; ++k) EXPECT_NEAR(fit.eta[k], log_tau, 1.0) << "parameter " << k;
}

TEST(OptimizeHyper, IterationCapIsAnError) {
  const auto f = cs::Family::LogLogistic;
  const auto ds = survey_only(f, 8, {{0, 7}}, 5);
  const auto m = toy::model(ds, f);
  cs::HyperOptions opt;
  opt.bfgs.max_iter = 1;
  opt.bfgs.grad_tol = 1e-14;
  EXPECT_THROW(cs::optimize_hyper(m, m.initial_hyper().array() + 3.0, opt), cs::ConvergenceError);
}

TEST(SamplePosterior, DeterministicAndCorrect) {
  Eigen::VectorXd mode1(1);
  mode1 << 0.7;
  Eigen::MatrixXd L1(1, 1);
  L1 << 2.0;  // precision 4
  const int N = 100000;
  const auto d1 = cs::sample_posterior(mode1, L1, N, 99);
  EXPECT_EQ(d1, cs::sample_posterior(mode1, L1, N, 99));
  EXPECT_NE(d1, cs::sample_posterior(mode1, L1, N, 100));
  const double se_var = 0.25 * std::sqrt(2.0 / N);
  EXPECT_NEAR(sample_cov(d1)(0, 0), 0.25, 3.0 * se_var);
  EXPECT_NEAR(d1.mean(), 0.7, 3.0 * 0.5 / std::sqrt(N));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> Z(0.0, 1.0);
  Eigen::MatrixXd A(4, 4);
  for (int i = 0; i < 16; ++i) A.data()[i] = Z(rng);
  const Eigen::MatrixXd P = A * A.transpose() + Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd L = P.llt().matrixL();
  const Eigen::MatrixXd Sigma = P.inverse();
  Eigen::VectorXd mode(4);
  mode << 1.0, -2.0, 0.5, 3.0;
  const auto d = cs::sample_posterior(mode, L, N, 5);
  const Eigen::MatrixXd C = sample_cov(d);
  const Eigen::VectorXd mean = d.colwise().mean().transpose();
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(mean[i], mode[i], 3.0 * std::sqrt(Sigma(i, i) / N));
    for (int j = 0; j < 4; ++j) {
      const double se = std::sqrt((Sigma(i, i) * Sigma(j, j) + Sigma(i, j) * Sigma(i, j)) / N);
      EXPECT_NEAR(C(i, j), Sigma(i, j), 3.0 * se) << i << "," << j;
    }
  }
}

TEST(PosteriorFit, JsonRoundTripAndReproducibility) {
  const auto f = cs::Family::LogLogistic;
  const auto ds = toy::country(f, 4, 2);
  const auto m = toy::model(ds, f);
  cs::FitOptions opt;
  opt.draws = 40;
  opt.seed = 17;
  auto fit = cs::fit_country(m, ds, opt);
  fit.settings["family"] = "LL";
  EXPECT_EQ(fit.draws(), 40);
  EXPECT_EQ(fit.theta_draws.cols(), 4 * 2);

  const auto j = cs::to_json(fit);
  const auto back = cs::fit_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(cs::to_json(back).dump(), j.dump());
  EXPECT_EQ(back.theta_draws, fit.theta_draws);
  EXPECT_EQ(back.precision_factor, fit.precision_factor);

  const auto path = (std::filesystem::temp_directory_path() / "childsurv_fit_test.json").string();
  cs::save_fit(fit, path);
  EXPECT_EQ(cs::to_json(cs::load_fit(path)).dump(), j.dump());
  std::filesystem::remove(path);

  auto bad = nlohmann::json::parse(j.dump());
  bad["version"] = 2;
  EXPECT_THROW(cs::fit_from_json(bad), cs::FormatError);
  bad["version"] = 1;
  bad["format"] = "something-else";
  EXPECT_THROW(cs::fit_from_json(bad), cs::FormatError);
  bad = nlohmann::json::parse(j.dump());
  bad.erase("theta_mode");
  EXPECT_THROW(cs::fit_from_json(bad), cs::FormatError);

  auto rerun = cs::fit_country(m, ds, opt);
  rerun.settings["family"] = "LL";
  EXPECT_EQ(cs::to_json(rerun).dump(), j.dump());

  // draws are theta(x) of posterior draws; their mean approaches the mode
  opt.draws = 4000;
  const auto many = cs::fit_country(m, ds, opt);
  const Eigen::VectorXd mean = many.theta_draws.colwise().mean().transpose();
  const Eigen::VectorXd sd = sample_cov(many.theta_draws).diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    EXPECT_NEAR(mean[i], many.theta_mode[i], 4.0 * sd[i] / std::sqrt(4000.0));
}

namespace {

cs::CountryDataset vr_country(const std::vector<std::pair<std::string, long>>& counts,
                              const cs::SurvivalParams& exposure_ref, double B) {
  cs::DatasetInputs in;
  in.country = "VR";
  in.first_year = 2000;
  in.last_year = 2002;
  for (const auto& [band, d] : counts) in.vr.push_back({2001, cs::parse_vr_band(band), d, 1.0});
  in.exposure.births[2001] = B;
  in.exposure.population[{2001, {0, 12}}] = toy::population(exposure_ref, B, 0, 12);
  in.exposure.population[{2001, {12, 48}}] = toy::population(exposure_ref, B, 12, 48);
  in.exposure.population[{2001, {12, 12}}] = toy::population(exposure_ref, B, 12, 12);
  return cs::build_dataset(in);
}

}  // namespace

TEST(YearlyVrMle, SaturatedPiecewiseExponential) {
  const auto ref = toy::reference(cs::Family::PiecewiseExponential);
  const auto ds = vr_country({{"neonatal", 3000}, {"infant", 5000}, {"under5", 8000}}, ref, 1e5);
  const auto fit = cs::yearly_vr_mle(ds, 2001, cs::Family::PiecewiseExponential);
  EXPECT_NEAR(cs::death_prob(fit.params(), 1.0), 0.03, 1e-9);
  EXPECT_EQ(fit.covariance.rows(), 3);
  EXPECT_THROW(cs::yearly_vr_mle(ds, 2000, cs::Family::PiecewiseExponential), cs::DataError);
}

TEST(YearlyVrMle, UnidentifiedYears) {
  const auto ll = toy::reference(cs::Family::LogLogistic);
  const auto u5 = vr_country({{"under5", 900}}, ll, 1e4);
  EXPECT_THROW(cs::yearly_vr_mle(u5, 2001, cs::Family::LogLogistic), cs::IdentifiabilityError);
  const auto no_nn = vr_country({{"infant", 500}, {"child1_4", 200}, {"year1", 80}}, ll, 1e4);
  EXPECT_THROW(cs::yearly_vr_mle(no_nn, 2001, cs::Family::PiecewiseExponential),
               cs::IdentifiabilityError);
}

TEST(YearlyVrMle, LargeCountsRecoverRates) {
  std::mt19937_64 rng(31);
  for (auto f : kFamilies) {
    const auto ref = toy::reference(f);
    const double B = 1e7;
    const auto draw = [&](double mean) { return std::poisson_distribution<long>(mean)(rng); };
    const double q1 = 1.0 - sim::survival(ref, 1.0);
    const double q12 = 1.0 - sim::survival(ref, 12.0);
    const double q60 = 1.0 - sim::survival(ref, 60.0);
    const auto ds = vr_country(
        {{"neonatal", draw(B * q1)}, {"infant", draw(B * q12)}, {"under5", draw(B * q60)}}, ref, B);
    const auto fit = cs::yearly_vr_mle(ds, 2001, f);
    for (double a : {1.0, 12.0, 60.0}) {
      const double truth = 1.0 - sim::survival(ref, a);
      EXPECT_NEAR(cs::death_prob(fit.params(), a) / truth, 1.0, 0.01) << cs::to_string(f) << " age " << a;
    }
  }
}
