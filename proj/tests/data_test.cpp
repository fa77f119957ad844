#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "childsurv/data.hpp"

namespace cs = childsurv;
namespace fs = std::filesystem;

namespace {

cs::VrCountRecord vr(int year, const std::string& band, long deaths, double f = 1.0) {
  return {year, cs::parse_vr_band(band), deaths, f};
}

std::map<std::string, long> by_band(const cs::CanonicalVr& c) {
  std::map<std::string, long> m;
  for (const auto& o : c.observations) m[cs::to_string(cs::band_from_range(o.band))] = o.deaths;
  return m;
}

cs::csv::Table table(const std::string& text) {
  std::istringstream in(text);
  return cs::csv::parse(in, "test.csv");
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("childsurv_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(VrBand, ParseAndPrint) {
  for (std::string s : {"neonatal", "postneonatal", "infant", "child1_4", "under5", "year1", "year4",
                        "3:9", "0.5:2.5"})
    EXPECT_EQ(cs::to_string(cs::parse_vr_band(s)), s);
  EXPECT_EQ(cs::parse_vr_band("0:12").tag, cs::VrTag::Infant);
  EXPECT_EQ(cs::parse_vr_band("24:12").tag, cs::VrTag::SingleYear);
  EXPECT_EQ(cs::parse_vr_band("child1_4").range, (cs::AgeBand{12, 48}));
  EXPECT_THROW(cs::parse_vr_band("toddler"), cs::FormatError);
  EXPECT_THROW(cs::parse_vr_band("50:20"), cs::FormatError);
  EXPECT_THROW(cs::parse_vr_band("year5"), cs::FormatError);
}

TEST(CanonicalizeVr, Examples) {
  auto c = cs::canonicalize_vr({vr(2000, "neonatal", 100), vr(2000, "infant", 150),
                                vr(2000, "under5", 200)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{
                            {"neonatal", 100}, {"postneonatal", 50}, {"child1_4", 50}}));
  EXPECT_EQ(c.observations[1].kind, cs::VrKind::PostNeonatal);
  EXPECT_EQ(c.observations[0].kind, cs::VrKind::Neonatal);

  c = cs::canonicalize_vr({vr(2000, "under5", 200)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{{"under5", 200}}));

  EXPECT_THROW(cs::canonicalize_vr({vr(2000, "neonatal", 150), vr(2000, "infant", 100)}),
               cs::InconsistencyError);
}

TEST(CanonicalizeVr, RedundantAndRemainderCases) {
  // all parts present: aggregates dropped when consistent, error otherwise
  auto c = cs::canonicalize_vr({vr(1, "neonatal", 10), vr(1, "postneonatal", 5), vr(1, "infant", 15),
                                vr(1, "child1_4", 7), vr(1, "under5", 22)});
  EXPECT_EQ(c.observations.size(), 3u);
  EXPECT_THROW(cs::canonicalize_vr({vr(1, "neonatal", 10), vr(1, "postneonatal", 5),
                                    vr(1, "infant", 16)}),
               cs::InconsistencyError);
  // infant with post-neonatal yields neonatal
  c = cs::canonicalize_vr({vr(1, "postneonatal", 5), vr(1, "infant", 15)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{{"neonatal", 10}, {"postneonatal", 5}}));
  // single year inside child1_4 leaves a contiguous remainder
  c = cs::canonicalize_vr({vr(1, "year1", 4), vr(1, "child1_4", 9)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{{"year1", 4}, {"24:36", 5}}));
  // a gap in the middle cannot be expressed as one band
  c = cs::canonicalize_vr({vr(1, "year2", 4), vr(1, "child1_4", 9)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{{"year2", 4}}));
  EXPECT_EQ(c.notices.size(), 1u);
  // different sampling fractions prevent derived remainders
  c = cs::canonicalize_vr({vr(1, "neonatal", 10, 0.5), vr(1, "infant", 15, 1.0)});
  EXPECT_EQ(by_band(c), (std::map<std::string, long>{{"neonatal", 10}}));
  // identical duplicates dropped, conflicting duplicates rejected
  c = cs::canonicalize_vr({vr(1, "under5", 3), vr(1, "under5", 3)});
  EXPECT_EQ(c.observations.size(), 1u);
  EXPECT_THROW(cs::canonicalize_vr({vr(1, "under5", 3), vr(1, "0:60", 4)}), cs::InconsistencyError);
  // years are independent
  c = cs::canonicalize_vr({vr(2, "under5", 3), vr(1, "neonatal", 1), vr(1, "under5", 3)});
  ASSERT_EQ(c.observations.size(), 3u);
  EXPECT_EQ(c.observations[0].year, 1);
  EXPECT_EQ(c.observations[2].year, 2);
}

TEST(CanonicalizeVr, PropertyDisjointAndBoundedByAggregates) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> atoms{"neonatal", "postneonatal", "year1", "year2", "year3", "year4"};
  const std::vector<std::pair<std::string, std::vector<int>>> aggregates{
      {"infant", {0, 1}}, {"child1_4", {2, 3, 4, 5}}, {"under5", {0, 1, 2, 3, 4, 5}},
      {"12:24", {2, 3}}, {"36:24", {4, 5}}};
  std::uniform_int_distribution<int> deaths(0, 400), coin(0, 1), noise(-3, 3);
  int errors = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<long> truth(atoms.size());
    for (auto& d : truth) d = deaths(rng);
    std::vector<cs::VrCountRecord> recs;
    const bool perturb = rep % 4 == 0;
    for (std::size_t a = 0; a < atoms.size(); ++a)
      if (coin(rng)) recs.push_back(vr(7, atoms[a], truth[a]));
    for (const auto& [name, parts] : aggregates) {
      if (!coin(rng)) continue;
      long s = 0;
      for (int p : parts) s += truth[p];
      if (perturb) s = std::max(0L, s + noise(rng));
      recs.push_back(vr(7, name, s));
    }
    std::shuffle(recs.begin(), recs.end(), rng);
    cs::CanonicalVr c;
    try {
      c = cs::canonicalize_vr(recs);
    } catch (const cs::InconsistencyError&) {
      ASSERT_TRUE(perturb);
      ++errors;
      continue;
    }
    for (std::size_t i = 0; i < c.observations.size(); ++i)
      for (std::size_t j = i + 1; j < c.observations.size(); ++j)
        EXPECT_FALSE(cs::bands_overlap(c.observations[i].band, c.observations[j].band));
    for (const auto& r : recs) {
      long inside = 0;
      for (const auto& o : c.observations)
        if (cs::detail::contains(r.band.range, o.band)) inside += o.deaths;
      EXPECT_LE(inside, r.deaths);
    }
    if (!perturb) {
      // consistent input: every output band carries the true count
      for (const auto& o : c.observations) {
        long s = 0;
        for (std::size_t a = 0; a < atoms.size(); ++a)
          if (cs::detail::contains(o.band, cs::parse_vr_band(atoms[a]).range)) s += truth[a];
        EXPECT_EQ(o.deaths, s);
      }
    }
  }
  EXPECT_GT(errors, 0);
}

TEST(Exposure, Resolution) {
  cs::ExposureSeries ex;
  ex.births[2000] = 1000;
  ex.population[{2000, {0, 12}}] = 950;
  ex.population[{2000, {12, 12}}] = 900;
  ex.population[{2000, {24, 36}}] = 2600;
  ex.population[{2000, {0, 60}}] = 4500;
  EXPECT_EQ(ex.population_at(2000, {0, 12}), 950.0);
  EXPECT_EQ(ex.population_at(2000, {12, 48}), 3500.0);  // tiling
  EXPECT_EQ(ex.population_at(2000, {24, 36}), 2600.0);
  EXPECT_FALSE(ex.population_at(2000, {1, 11}).has_value());
  EXPECT_FALSE(ex.population_at(2001, {0, 12}).has_value());
  cs::ExposureSeries ey;
  ey.population[{1, {0, 60}}] = 4500;
  ey.population[{1, {0, 12}}] = 950;
  EXPECT_EQ(ey.population_at(1, {12, 48}), 3550.0);  // container minus complement

  std::vector<cs::VrObservation> obs = cs::canonicalize_vr(
      {vr(2000, "neonatal", 30), vr(2000, "infant", 45), vr(2000, "child1_4", 12)}).observations;
  cs::resolve_exposures(obs, ex);
  EXPECT_EQ(obs[0].births, 1000.0);
  EXPECT_TRUE(obs[1].infant_identity);
  EXPECT_EQ(obs[1].population, 950.0);
  EXPECT_EQ(obs[2].population, 3500.0);
  obs = cs::canonicalize_vr({vr(2001, "neonatal", 30)}).observations;
  EXPECT_THROW(cs::resolve_exposures(obs, ex), cs::DataError);
}

TEST(DeltaLogit, Examples) {
  EXPECT_NEAR(cs::delta_logit_variance(0.5, 0.0001), 0.0016, 1e-17);
  EXPECT_NEAR(std::sqrt(cs::delta_logit_variance(0.1, 0.01 * 0.01)), 0.11111, 1e-5);
  EXPECT_NEAR(std::sqrt(cs::delta_logit_variance(0.1, 0.01 * 0.01)), 1.0 / 9.0, 1e-15);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0.001, 0.999), lv(-12, 0);
  for (int i = 0; i < 1000; ++i) {
    const double q = U(rng), v = std::pow(10.0, lv(rng));
    EXPECT_NEAR(cs::natural_variance(q, cs::delta_logit_variance(q, v)) / v, 1.0, 1e-14);
  }
  EXPECT_THROW(cs::delta_logit_variance(0.0, 1e-4), cs::DomainError);
  EXPECT_THROW(cs::delta_logit_variance(0.3, 0.0), cs::DomainError);
  EXPECT_THROW(cs::delta_logit_variance(1.0, 1e-4), cs::DomainError);
}

TEST(SbhToRate, DefaultTableValues) {
  const auto& t = cs::default_sbh_se_table();
  ASSERT_EQ(t.size(), 6u);
  const std::vector<std::tuple<std::string, double, double, double>> expect{
      {"20-24", 0.066, 0.078, 0.0039}, {"25-29", 0.068, 0.072, 0.0035},
      {"30-34", 0.090, 0.091, 0.0066}, {"35-39", 0.139, 0.154, 0.0191},
      {"40-44", 0.164, 0.182, 0.0272}, {"45-49", 0.172, 0.186, 0.0290}};
  for (const auto& [g, a, b, c] : expect) {
    EXPECT_EQ(t.at(g).se_logit_imr, a);
    EXPECT_EQ(t.at(g).se_logit_u5mr, b);
    EXPECT_EQ(t.at(g).cov, c);
  }
}

TEST(SbhToRate, CensusSurveyAndRejections) {
  std::vector<cs::SbhRecord> in{
      {"C2009", 2004.6, "20-24", 0.05, 0.08, true},
      {"C2009", 1996.2, "45\xE2\x80\x93" "49", 0.06, 0.09, true},
      {"S2008", 2003.0, "30-34", 0.06, 0.1, false},
      {"C2009", 2006.0, "15-19", 0.05, 0.08, true},
      {"C2009", 2000.0, "35-39", 0.09, 0.08, true},
  };
  const auto out = cs::sbh_to_rate(in);
  ASSERT_EQ(out.rates.size(), 6u);
  EXPECT_EQ(out.notices.size(), 2u);
  const auto& a = out.rates[0];
  const auto& b = out.rates[1];
  EXPECT_EQ(a.year, 2004);
  EXPECT_EQ(a.age, 12.0);
  EXPECT_EQ(b.age, 60.0);
  EXPECT_NEAR(std::sqrt(a.logit_var), 0.066, 1e-15);
  EXPECT_NEAR(std::sqrt(b.logit_var), 0.078, 1e-15);
  EXPECT_EQ(a.logit_cov, 0.0039);
  EXPECT_EQ(a.partner, 1);
  EXPECT_EQ(b.partner, 0);
  EXPECT_NEAR(std::sqrt(out.rates[2].logit_var), 0.172, 1e-15);
  EXPECT_NEAR(std::sqrt(out.rates[3].logit_var), 0.186, 1e-15);
  EXPECT_EQ(out.rates[3].logit_cov, 0.0290);
  EXPECT_EQ(out.rates[4].kind, cs::RateKind::SbhSurvey);
  EXPECT_NEAR(std::sqrt(out.rates[5].logit_var), 0.11111, 1e-5);
  EXPECT_EQ(out.rates[5].logit_cov, 0.0);
  EXPECT_THROW(cs::sbh_to_rate({{"X", 2000, "50-54", 0.05, 0.08, true}}), cs::FormatError);
}

TEST(ReadRates, VarianceScales) {
  cs::ExposureSeries ex;
  ex.births[2001] = 40000;
  const auto t = table(
      "source,year,age_months,q,se,se_scale,kind\n"
      "a,2000,60,0.1,0.2,logit,other\n"
      "b,2000,60,0.1,0.01,natural,vr_report\n"
      "c,2000,60,0.1,0.1,cov,fbh_other\n"
      "d,2000,12,0.05,10000,poisson,vr_report\n"
      "e,2001,12,0.05,,poisson,vr_report\n"
      "f,2002,12,0.05,,poisson,vr_report\n"
      "g,2002,12,0.05,0.04,logit_var,other\n");
  const auto rep = cs::read_rates_csv(t, ex);
  ASSERT_EQ(rep.rates.size(), 6u);
  EXPECT_EQ(rep.notices.size(), 1u);
  EXPECT_NEAR(rep.rates[0].logit_var, 0.04, 1e-17);
  EXPECT_NEAR(rep.rates[1].logit_var, 1.0 / 81.0, 1e-16);
  EXPECT_NEAR(rep.rates[2].logit_var, 1.0 / 81.0, 1e-16);
  EXPECT_NEAR(rep.rates[3].logit_var, 1.0 / (10000 * 0.05 * 0.95), 1e-15);
  EXPECT_NEAR(rep.rates[4].logit_var, 1.0 / (40000 * 0.05 * 0.95), 1e-15);
  EXPECT_EQ(rep.rates[5].logit_var, 0.04);
  EXPECT_EQ(rep.rates[3].kind, cs::RateKind::VrReport);
  EXPECT_THROW(cs::read_rates_csv(table("source,year,age_months,q,se,se_scale,kind\n"
                                        "a,2000,60,0.1,0.2,probit,other\n"),
                                  ex),
               cs::FormatError);
}

TEST(RestrictEstimate, MarginalSubBlock) {
  cs::SurveyEstimate e;
  e.survey_id = "S";
  e.family = cs::Family::LogLogistic;
  e.years = {1990, 1991, 1992};
  e.identified = {true, false, true};
  e.theta_hat = Eigen::VectorXd::LinSpaced(6, 1, 6);
  e.V_hat = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) e.V_hat(i, j) = 10 * i + j;
  const auto r = cs::restrict_estimate(e, 1991, 2000);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->years, (std::vector<int>{1991, 1992}));
  EXPECT_EQ(r->identified, (std::vector<bool>{false, true}));
  EXPECT_EQ(r->theta_hat, e.theta_hat.tail(4));
  EXPECT_EQ(r->V_hat, e.V_hat.bottomRightCorner(4, 4));
  EXPECT_FALSE(cs::restrict_estimate(e, 2000, 2010));
}

namespace {

cs::DatasetInputs toy_inputs() {
  cs::DatasetInputs in;
  in.country = "Toyland";
  in.first_year = 1990;
  in.last_year = 1999;
  cs::SurveyEstimate e;
  e.survey_id = "DHS1998";
  e.family = cs::Family::PiecewiseExponential;
  for (int y = 1985; y <= 1998; ++y) e.years.push_back(y);
  e.identified.assign(e.years.size(), true);
  const auto n = static_cast<Eigen::Index>(3 * e.years.size());
  e.theta_hat = Eigen::VectorXd::LinSpaced(n, -8.0, -3.1234567890123);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(n, n);
  e.V_hat = A * A.transpose() / 3.0 + Eigen::MatrixXd::Identity(n, n) * 0.1;
  in.surveys.push_back(e);
  for (int y = 1995; y <= 2001; ++y) {
    in.vr.push_back(vr(y, "neonatal", 300 + y % 7));
    in.vr.push_back(vr(y, "infant", 500 + y % 5));
    in.vr.push_back(vr(y, "under5", 700 + y % 3));
    in.exposure.births[y] = 20000.0 + y / 3.0;
    in.exposure.population[{y, {0, 12}}] = 19500.5;
    in.exposure.population[{y, {12, 48}}] = 76000.25;
  }
  in.rates.push_back({"rep", 1993, 60, 0.081, 0.0123, cs::RateKind::VrReport});
  in.rates.push_back({"old", 1980, 60, 0.2, 0.01, cs::RateKind::Other});
  in.sbh.push_back({"C2000", 1995.4, "25-29", 0.05, 0.07, true});
  in.sbh.push_back({"C2000", 1993.1, "30-34", 0.055, 0.075, true});
  in.sbh.push_back({"C2000", 1999.5, "15-19", 0.05, 0.07, true});
  in.hiv["DHS1998"] = {{1995, 1.02}, {1996, 1.03}};
  return in;
}

}  // namespace

TEST(Dataset, BuildFiltersAndCanonicalizes) {
  const auto ds = cs::build_dataset(toy_inputs());
  EXPECT_EQ(ds.T(), 10);
  ASSERT_EQ(ds.surveys.size(), 1u);
  EXPECT_EQ(ds.surveys[0].years.front(), 1990);
  EXPECT_EQ(ds.surveys[0].theta_hat.size(), 27);
  EXPECT_EQ(ds.vr_raw.size(), 15u);  // 2000 and 2001 dropped
  EXPECT_EQ(ds.vr.size(), 15u);
  EXPECT_EQ(ds.rates.size(), 5u);  // one other rate, two SBH pairs
  EXPECT_EQ(ds.sbh_rates_begin, 1u);
  EXPECT_EQ(ds.rates[ds.rates[1].partner].age, 60.0);
  EXPECT_EQ(ds.rates[3].partner, 4);
  EXPECT_GE(ds.notices.size(), 5u);

  const auto adj = cs::adjusted_surveys(ds);
  EXPECT_EQ(adj.notices.size(), 1u);
  EXPECT_GT(adj.surveys[0].theta_hat[3 * 5], ds.surveys[0].theta_hat[3 * 5]);
  EXPECT_EQ(adj.surveys[0].theta_hat[3 * 4], ds.surveys[0].theta_hat[3 * 4]);
  EXPECT_EQ(cs::adjusted_surveys(ds, false).surveys[0].theta_hat, ds.surveys[0].theta_hat);
  EXPECT_EQ(cs::adjusted_surveys(ds, true, {"DHS1998"}).surveys[0].theta_hat,
            ds.surveys[0].theta_hat);

  auto bad = toy_inputs();
  bad.exposure.births.erase(1996);
  EXPECT_THROW(cs::build_dataset(bad), cs::DataError);
}

TEST(Dataset, WriteReadIdempotent) {
  const auto ds = cs::build_dataset(toy_inputs());
  const auto d1 = scratch("rt1"), d2 = scratch("rt2");
  cs::write_dataset(ds, d1);
  cs::LoadOptions opt;
  opt.family = cs::Family::PiecewiseExponential;
  const auto back = cs::load_dataset(d1, opt);
  EXPECT_TRUE(back == ds);
  cs::write_dataset(back, d2);
  for (const auto& f : fs::directory_iterator(d1))
    EXPECT_EQ(slurp(f.path()), slurp(d2 / f.path().filename())) << f.path();
  EXPECT_TRUE(cs::load_dataset(d2, opt) == back);

  // estimates for the other family are ignored rather than misused
  opt.family = cs::Family::LogLogistic;
  EXPECT_TRUE(cs::load_dataset(d1, opt).surveys.empty());
}

TEST(Dataset, MissingExposureFileFailsValidation) {
  const auto d = scratch("noexp");
  {
    std::ofstream(d / "manifest.json") << R"({"country": "X", "first_year": 2000, "last_year": 2005})";
    std::ofstream(d / "vr.csv") << "year,band,deaths,sampling_fraction\n2001,under5,30,1\n";
  }
  EXPECT_THROW(cs::load_dataset(d), cs::DataError);
  std::ofstream(d / "exposure.csv") << "year,births,pop_band,pop\n2001,,under5,5000\n";
  const auto ds = cs::load_dataset(d);
  ASSERT_EQ(ds.vr.size(), 1u);
  EXPECT_EQ(ds.vr[0].population, 5000.0);
  fs::remove(d / "manifest.json");
  EXPECT_THROW(cs::load_dataset(d), cs::DataError);
}

TEST(Dataset, FitsMicrodataWhenNoEstimates) {
  const auto d = scratch("fbh");
  std::ofstream(d / "manifest.json") << R"({"country": "X", "first_year": 1990, "last_year": 2000})";
  {
    std::ofstream f(d / "fbh.csv");
    f << "survey_id,stratum,cluster,weight,birth_year,died,age_months\n";
    for (int i = 0; i < 400; ++i) {
      const int y = 1995 + i % 3;
      f << "S1,1," << i % 10 << ",1," << y << "," << (i % 9 == 0 ? 1 : 0) << ","
        << (i % 9 == 0 ? (i % 5) * 7 : 40) << "\n";
    }
  }
  const auto ds = cs::load_dataset(d);
  ASSERT_EQ(ds.surveys.size(), 1u);
  EXPECT_EQ(ds.surveys[0].years.back(), 1997);
  EXPECT_EQ(ds.surveys[0].years.front(), 1990);
}
