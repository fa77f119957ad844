#include <filesystem>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "childsurv/sbh.hpp"

namespace cs = childsurv;
namespace sbh = childsurv::sbh;

namespace {

sbh::DemographicInputs flat(int first, int last, double B, const sbh::AgeArray& c, const sbh::AgeArray& q) {
  sbh::DemographicInputs in;
  in.name = "flat";
  in.first_year = first;
  for (int y = first; y <= last; ++y) {
    sbh::YearDemography d;
    d.births = B;
    d.birth_fraction = c;
    d.female_lx.fill(1.0);
    d.child_q = q;
    in.years.push_back(d);
  }
  return in;
}

sbh::Residual residual(int group, int age, double est, double truth, int census = 2000) {
  return {"s", census, group, age, 1995, est, truth};
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(GenerateCensus, FiniteSumExamples) {
  sbh::AgeArray c{}, q{};
  for (int a = 15; a <= 35; ++a) c[a] = 0.1;
  const auto in = flat(1950, 2000, 1000.0, c, q);
  const auto g = sbh::cohort_counts(in, 2000, 20);
  EXPECT_DOUBLE_EQ(g.ceb, 600.0);
  EXPECT_EQ(g.cd, 0.0);
  const auto census = sbh::generate_census(in, 2000);
  for (const auto& grp : census.groups) EXPECT_EQ(grp.cd, 0.0);
  EXPECT_THROW(sbh::generate_census(in, 1990), cs::DataError);
}

TEST(GenerateCensus, NonDecreasingInMotherAge) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    sbh::AgeArray c{}, q{};
    double total = 0.0;
    for (int a = 12; a < sbh::kAges; ++a) total += c[a] = U(rng) < 0.2 ? 0.0 : U(rng);
    for (auto& v : c) v /= total;
    for (auto& v : q) v = 0.1 * U(rng);
    const auto in = flat(1940, 2000, 1e4 * (1.0 + U(rng)), c, q);
    for (int m = 0; m < sbh::kAges - 1; ++m) {
      const auto a = sbh::cohort_counts(in, 2000, m), b = sbh::cohort_counts(in, 2000, m + 1);
      EXPECT_LE(a.ceb, b.ceb * (1.0 + 1e-14));
      EXPECT_LE(a.cd, b.cd * (1.0 + 1e-14) + 1e-12);
    }
  }
}

TEST(GenerateCensus, MatchesMicroSimulation) {
  // children drawn one at a time: mother's single-year age and her age at the
  // birth chosen in proportion to births, then survival simulated year by year
  const auto in = sbh::stylized_scenario(sbh::bundled_scenarios()[0]);
  const int t = 2000;
  const auto census = sbh::generate_census(in, t);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int g = 1; g < sbh::kGroups; ++g) {
    std::vector<std::pair<int, int>> cells;  // (m, a)
    std::vector<double> w;
    for (int m = 15 + 5 * g; m < 20 + 5 * g; ++m)
      for (int a = 0; a <= m; ++a) {
        const auto& d = in.at(t - m + a);
        const double born = d.births * d.birth_fraction[a] * sbh::maternal_survival(in, t, m);
        if (born > 0.0) {
          cells.emplace_back(m, a);
          w.push_back(born);
        }
      }
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const int N = 200000;
    int dead = 0;
    for (int i = 0; i < N; ++i) {
      const auto [m, a] = cells[pick(rng)];
      for (int k = 0; k <= m - a; ++k)
        if (U(rng) < in.at(t - m + a + k).child_q[k]) {
          ++dead;
          break;
        }
    }
    const double p = static_cast<double>(dead) / N;
    const double expect = census.groups[g].cd / census.groups[g].ceb;
    EXPECT_NEAR(p, expect, 3.0 * std::sqrt(expect * (1.0 - expect) / N)) << sbh::kGroupNames[g];
  }
}

TEST(StylizedTables, LevelRoundTripAndRegionChoice) {
  for (auto r : cs::tables::kRegions)
    for (double q : {0.01, 0.08, 0.3})
      for (double x : {1.0, 2.0, 3.0, 5.0, 10.0, 20.0}) {
        const double a = sbh::stylized_alpha(r, x, q);
        EXPECT_NEAR(sbh::stylized_q(r, a, x), q, 1e-14);
      }
  for (auto r : cs::tables::kRegions)
    for (double a : {-1.0, -0.3, 0.4}) {
      const auto q = sbh::stylized_child_q(r, a);
      const double q5 = 1.0 - (1.0 - q[0]) * (1.0 - q[1]) * (1.0 - q[2]) * (1.0 - q[3]) * (1.0 - q[4]);
      EXPECT_NEAR(q5, sbh::stylized_q(r, a, 5.0), 1e-14);
      EXPECT_EQ(sbh::select_region(q[0], q5), r);
    }
}

TEST(BrassEstimate, ZeroDeathsGiveZeroEstimates) {
  sbh::AgeArray c{}, q{};
  for (int a = 15; a < 50; ++a) c[a] = 1.0 / 35.0;
  const auto in = flat(1940, 2000, 1e5, c, q);
  const auto br = sbh::brass_estimate(sbh::generate_census(in, 2000), cs::tables::Region::West);
  ASSERT_EQ(br.estimates.size(), 7u);
  for (const auto& e : br.estimates) {
    EXPECT_EQ(e.q1, 0.0);
    EXPECT_EQ(e.q5, 0.0);
    EXPECT_LT(e.reference_date, 2001.0);
  }
}

TEST(BrassEstimate, ReferenceDatesRecedeWithMotherAge) {
  const auto in = sbh::stylized_scenario(sbh::bundled_scenarios()[0]);
  const auto br = sbh::brass_estimate(sbh::generate_census(in, 2010), cs::tables::Region::West);
  for (std::size_t i = 1; i < br.estimates.size(); ++i) {
    EXPECT_LT(br.estimates[i].reference_date, br.estimates[i - 1].reference_date);
    EXPECT_GT(br.estimates[i].q1, 0.0);
    EXPECT_LT(br.estimates[i].q1, br.estimates[i].q5);
  }
}

TEST(CalibrateErrors, SmallExamples) {
  const double q = 0.1;
  std::vector<sbh::Residual> res;
  for (int age : {1, 5}) {
    res.push_back(residual(1, age, expit(cs::logit(q) + 0.1), q, 2000));
    res.push_back(residual(1, age, expit(cs::logit(q) - 0.1), q, 2010));
  }
  const auto rows = sbh::calibrate_errors(res, {1});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].se_logit_imr, 0.14142, 5e-6);
  EXPECT_NEAR(rows[0].se_logit_u5mr, 0.14142, 5e-6);
  EXPECT_NEAR(rows[0].covariance, 0.02, 1e-12);
  EXPECT_EQ(rows[0].coverage_imr, 1.0);

  std::vector<sbh::Residual> zero;
  for (int age : {1, 5})
    for (int c : {2000, 2010, 2019}) zero.push_back(residual(2, age, q, q, c));
  const auto z = sbh::calibrate_errors(zero, {2});
  EXPECT_EQ(z[0].se_logit_imr, 0.0);
  EXPECT_EQ(z[0].coverage_imr, 1.0);
  EXPECT_EQ(z[0].coverage_u5mr, 1.0);

  zero.pop_back();
  zero.pop_back();
  EXPECT_THROW(sbh::calibrate_errors(zero, {2}), cs::DataError);
}

TEST(Study, ZeroMortalityScenarioIsSkipped) {
  auto in = sbh::stylized_scenario(sbh::bundled_scenarios()[0]);
  for (auto& d : in.years) d.child_q.fill(0.0);
  in.name = "nomort";
  std::vector<std::string> notices;
  const auto res = sbh::scenario_residuals(in, {}, notices);
  EXPECT_TRUE(res.empty());
  EXPECT_EQ(notices.size(), 3u);
  EXPECT_THROW(sbh::run_study({in}), cs::DataError);
}

TEST(Study, DecliningFertilityOverEstimates) {
  const auto specs = sbh::bundled_scenarios();
  std::vector<std::string> notices;
  for (auto exposure : {sbh::ChildExposure::FullYears, sbh::ChildExposure::MidYear}) {
    sbh::StudyOptions opt;
    opt.exposure = exposure;
    const auto res = sbh::scenario_residuals(sbh::stylized_scenario(specs[1]), opt, notices);
    ASSERT_FALSE(res.empty());
    double mean = 0.0;
    for (const auto& r : res) mean += r.value();
    EXPECT_GT(mean / res.size(), 0.0);
  }
}

TEST(Study, ResidualFileRecomputesTableExactly) {
  std::vector<sbh::DemographicInputs> ins;
  for (const auto& s : sbh::random_scenarios(8, 5)) ins.push_back(sbh::stylized_scenario(s));
  const auto study = sbh::run_study(ins);
  std::ostringstream table;
  sbh::write_calibration(study.table, table);

  const auto path = (std::filesystem::temp_directory_path() / "childsurv_sbh_residuals.csv").string();
  {
    std::ofstream o(path);
    sbh::write_residuals(study.residuals, o);
  }
  const auto again = sbh::calibrate_errors(sbh::read_residuals(path));
  std::filesystem::remove(path);
  std::ostringstream table2;
  sbh::write_calibration(again, table2);
  EXPECT_EQ(table.str(), table2.str());

  const auto rerun = sbh::run_study(ins);
  std::ostringstream table3;
  sbh::write_calibration(rerun.table, table3);
  EXPECT_EQ(table.str(), table3.str());
}

TEST(ScenarioFile, RoundTripAndValidation) {
  const auto in = sbh::stylized_scenario(sbh::bundled_scenarios()[2]);
  const auto dir = std::filesystem::temp_directory_path() / "childsurv_scenario_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "declining_mortality.csv").string();
  sbh::write_scenario(in, path);
  const auto back = sbh::read_scenario(path);
  EXPECT_EQ(back.name, "declining_mortality");
  EXPECT_EQ(back.first_year, in.first_year);
  ASSERT_EQ(back.years.size(), in.years.size());
  for (std::size_t i = 0; i < in.years.size(); ++i) {
    EXPECT_EQ(back.years[i].births, in.years[i].births);
    EXPECT_EQ(back.years[i].birth_fraction, in.years[i].birth_fraction);
    EXPECT_EQ(back.years[i].female_lx, in.years[i].female_lx);
    EXPECT_EQ(back.years[i].child_q, in.years[i].child_q);
  }
  auto bad = in;
  bad.years[3].birth_fraction[20] += 0.01;
  EXPECT_THROW(sbh::validate(bad), cs::DataError);
  std::filesystem::remove_all(dir);
}
