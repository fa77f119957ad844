#pragma once

// Synthetic censuses from demographic inputs, Brass/Trussell indirect
// estimates of q(1) and q(5), and the residual calibration that produces
// per-mother-group logit standard errors for census SBH data.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "childsurv/ad.hpp"
#include "childsurv/csv.hpp"
#include "childsurv/error.hpp"
#include "childsurv/life_tables.hpp"

namespace childsurv::sbh {

using tables::Region;

inline constexpr int kAges = 50;  // single years 0..49
inline constexpr int kGroups = 7;
inline constexpr std::array<const char*, kGroups> kGroupNames{"15-19", "20-24", "25-29", "30-34",
                                                              "35-39", "40-44", "45-49"};
// share of births that are female
inline constexpr double kFemaleShare = 1.0 / 2.05;

using AgeArray = std::array<double, kAges>;

struct YearDemography {
  double births = 0.0;
  AgeArray birth_fraction{};  // by mother's age
  AgeArray female_lx{};       // period survivorship of women to exact age
  AgeArray child_q{};         // period probability of dying between ages k and k+1
};

struct DemographicInputs {
  std::string name;
  int first_year = 0;
  std::vector<YearDemography> years;

  int last_year() const { return first_year + static_cast<int>(years.size()) - 1; }
  bool covers(int a, int b) const { return !years.empty() && a >= first_year && b <= last_year(); }
  const YearDemography& at(int y) const {
    if (!covers(y, y)) throw DataError(name + ": no demographic inputs for " + std::to_string(y));
    return years[static_cast<std::size_t>(y - first_year)];
  }
  // period q(1) and q(5)
  double q1(int y) const { return at(y).child_q[0]; }
  double q5(int y) const {
    double s = 1.0;
    for (int k = 0; k < 5; ++k) s *= 1.0 - at(y).child_q[k];
    return 1.0 - s;
  }
};

inline void validate(const DemographicInputs& in) {
  for (std::size_t i = 0; i < in.years.size(); ++i) {
    const auto& d = in.years[i];
    const std::string yr = in.name + " " + std::to_string(in.first_year + static_cast<int>(i)) + ": ";
    if (!(d.births >= 0.0)) throw DataError(yr + "negative births");
    double sum = 0.0;
    for (int a = 0; a < kAges; ++a) {
      if (!(d.birth_fraction[a] >= 0.0 && d.birth_fraction[a] <= 1.0))
        throw DataError(yr + "birth fraction outside [0,1]");
      if (!(d.female_lx[a] >= 0.0 && d.female_lx[a] <= 1.0))
        throw DataError(yr + "female survivorship outside [0,1]");
      if (!(d.child_q[a] >= 0.0 && d.child_q[a] <= 1.0))
        throw DataError(yr + "child death probability outside [0,1]");
      if (a > 0 && d.female_lx[a] > d.female_lx[a - 1])
        throw DataError(yr + "female survivorship increases with age");
      sum += d.birth_fraction[a];
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw DataError(yr + "birth fractions sum to " + std::to_string(sum) + ", not 1");
  }
}

// ---- stylized life tables ----------------------------------------------------

// General Standard logit, linear in age between tabulated ages; l(0) = 1.
inline double standard_logit(double age) {
  const auto& s = tables::kGeneralStandard;
  if (!(age > 0.0) || age > s.back().age) throw DomainError("standard life table age out of range");
  if (age <= s.front().age) {
    // l(x) between 1 and l(1): interpolate l linearly
    const double l1 = 1.0 / (1.0 + std::exp(2.0 * s.front().Y));
    const double l = 1.0 - age * (1.0 - l1);
    return 0.5 * std::log((1.0 - l) / l);
  }
  std::size_t i = 1;
  while (s[i].age < age) ++i;
  const double w = (age - s[i - 1].age) / (s[i].age - s[i - 1].age);
  return (1.0 - w) * s[i - 1].Y + w * s[i].Y;
}

inline double stylized_l(Region r, double alpha, double age) {
  if (age == 0.0) return 1.0;
  return 1.0 / (1.0 + std::exp(2.0 * (alpha + tables::region_slope(r) * standard_logit(age))));
}

inline double stylized_q(Region r, double alpha, double age) { return 1.0 - stylized_l(r, alpha, age); }

// level alpha whose table has q(age) = q
inline double stylized_alpha(Region r, double age, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("death probability must lie in (0,1)");
  return 0.5 * std::log(q / (1.0 - q)) - tables::region_slope(r) * standard_logit(age);
}

inline AgeArray stylized_child_q(Region r, double alpha) {
  AgeArray q{};
  for (int k = 0; k < kAges; ++k) q[k] = 1.0 - stylized_l(r, alpha, k + 1.0) / stylized_l(r, alpha, k);
  return q;
}

inline AgeArray stylized_lx(Region r, double alpha) {
  AgeArray l{};
  for (int k = 0; k < kAges; ++k) l[k] = stylized_l(r, alpha, k);
  return l;
}

// Region whose table, matched on q5, has the q(1) / 4q1 ratio closest to the target.
inline Region select_region(double q1, double q5) {
  if (!(q1 > 0.0 && q5 > q1 && q5 < 1.0)) throw DomainError("region selection needs 0 < q1 < q5 < 1");
  const double target = q1 / (1.0 - (1.0 - q5) / (1.0 - q1));
  Region best = Region::West;
  double gap = INFINITY;
  for (Region r : tables::kRegions) {
    const double a = stylized_alpha(r, 5.0, q5);
    const double l1 = stylized_l(r, a, 1.0), l5 = stylized_l(r, a, 5.0);
    const double ratio = (1.0 - l1) / (1.0 - l5 / l1);
    if (std::abs(ratio - target) < gap) {
      gap = std::abs(ratio - target);
      best = r;
    }
  }
  return best;
}

// ---- synthetic census --------------------------------------------------------------

struct GroupCounts {
  double women = 0.0;
  double ceb = 0.0;
  double cd = 0.0;
};

struct SyntheticCensus {
  int year = 0;
  std::array<GroupCounts, kGroups> groups{};
};

// probability that a woman born in year t - m survives to age m
inline double maternal_survival(const DemographicInputs& in, int t, int m) {
  double s = 1.0;
  for (int k = 0; k < m; ++k) {
    const auto& l = in.at(t - m + k).female_lx;
    if (l[k] <= 0.0) return 0.0;
    s *= (k + 1 < kAges ? l[k + 1] : l[k]) / l[k];
  }
  return s;
}

// How long a child born in year y has been exposed by the end of year t:
// FullYears counts t - y + 1 whole years of age (the discrete cohort sum),
// MidYear places births mid-year and takes half of the last year's
// survival geometrically.
enum class ChildExposure { FullYears, MidYear };

// Children ever born and children dead by the end of year t to women aged m
// at the census, before maternal survival.
inline GroupCounts cohort_counts(const DemographicInputs& in, int t, int m,
                                 ChildExposure exposure = ChildExposure::FullYears) {
  GroupCounts g;
  for (int a = 0; a <= m; ++a) {
    const int y = t - m + a;
    const auto& d = in.at(y);
    const double born = d.births * d.birth_fraction[a];
    if (born == 0.0) continue;
    double surv = 1.0;
    for (int k = 0; k < m - a; ++k) surv *= 1.0 - in.at(y + k).child_q[k];
    const double last = 1.0 - in.at(t).child_q[m - a];
    surv *= exposure == ChildExposure::FullYears ? last : std::sqrt(last);
    g.ceb += born;
    g.cd += born * (1.0 - surv);
  }
  return g;
}

inline SyntheticCensus generate_census(const DemographicInputs& in, int t,
                                       ChildExposure exposure = ChildExposure::FullYears) {
  if (!in.covers(t - (kAges - 1), t))
    throw DataError(in.name + ": census " + std::to_string(t) + " needs inputs for " +
                    std::to_string(t - kAges + 1) + "-" + std::to_string(t));
  SyntheticCensus c;
  c.year = t;
  for (int m = 15; m < kAges; ++m) {
    const double s = maternal_survival(in, t, m);
    const auto g = cohort_counts(in, t, m, exposure);
    auto& out = c.groups[(m - 15) / 5];
    out.ceb += s * g.ceb;
    out.cd += s * g.cd;
    out.women += kFemaleShare * in.at(t - m).births * s;
  }
  return c;
}

// ---- Brass / Trussell ---------------------------------------------------------------

struct BrassEstimate {
  int group = 0;  // 0 = 15-19
  double x = 0.0;  // child age (years) of the direct estimate
  double qx = 0.0;
  double q1 = 0.0;
  double q5 = 0.0;
  double reference_date = 0.0;  // decimal year; the census is taken at the end of its year

  std::string mother_group() const { return kGroupNames[static_cast<std::size_t>(group)]; }
};

struct BrassResult {
  Region region = Region::West;
  std::vector<BrassEstimate> estimates;
  std::vector<std::string> notices;
};

inline BrassResult brass_estimate(const SyntheticCensus& c, Region region) {
  std::array<double, kGroups> P{}, D{};
  for (int i = 0; i < kGroups; ++i) {
    const auto& g = c.groups[i];
    P[i] = g.women > 0.0 ? g.ceb / g.women : 0.0;
    D[i] = g.ceb > 0.0 ? g.cd / g.ceb : 0.0;
  }
  if (!(P[1] > 0.0 && P[2] > 0.0))
    throw DataError("census " + std::to_string(c.year) + ": parity of women 20-29 must be positive");
  const double r12 = P[0] / P[1], r23 = P[1] / P[2];
  const auto K = tables::trussell_multipliers(region);
  const auto T = tables::trussell_time_location(region);
  BrassResult out;
  out.region = region;
  for (int i = 0; i < kGroups; ++i) {
    const std::string where = "census " + std::to_string(c.year) + " group " + kGroupNames[i] + ": ";
    if (!(c.groups[i].ceb > 0.0)) {
      out.notices.push_back(where + "no children ever born; skipped");
      continue;
    }
    BrassEstimate e;
    e.group = i;
    e.x = tables::kTrussellAge[i];
    const double k = K[i].a + K[i].b * r12 + K[i].c * r23;
    const double tx = T[i].a + T[i].b * r12 + T[i].c * r23;
    e.reference_date = c.year + 1.0 - tx;
    e.qx = k * D[i];
    if (e.qx <= 0.0) {
      e.qx = e.q1 = e.q5 = 0.0;
    } else if (e.qx >= 1.0) {
      out.notices.push_back(where + "estimated q(" + std::to_string(static_cast<int>(e.x)) +
                            ") is not below 1; skipped");
      continue;
    } else {
      const double alpha = stylized_alpha(region, e.x, e.qx);
      e.q1 = stylized_q(region, alpha, 1.0);
      e.q5 = stylized_q(region, alpha, 5.0);
    }
    out.estimates.push_back(e);
  }
  return out;
}

// ---- calibration -------------------------------------------------------------------------

struct Residual {
  std::string scenario;
  int census_year = 0;
  int group = 0;
  int age = 1;  // 1 or 5
  int reference_year = 0;
  double estimate = 0.0;
  double truth = 0.0;

  double value() const { return logit(estimate) - logit(truth); }
};

struct CalibrationRow {
  std::string group;
  int n_imr = 0;
  int n_u5mr = 0;
  double mean_imr = 0.0;
  double mean_u5mr = 0.0;
  double se_logit_imr = 0.0;
  double se_logit_u5mr = 0.0;
  double covariance = 0.0;  // paired (IMR, U5MR) residuals
  double cv_imr = 0.0;      // mean over estimates of se * (1 - q_hat)
  double cv_u5mr = 0.0;
  double coverage_imr = 0.0;  // share of |r| <= z(0.95) se
  double coverage_u5mr = 0.0;
};

inline constexpr double kZ90 = 1.6448536269514722;

inline std::vector<CalibrationRow> calibrate_errors(const std::vector<Residual>& res,
                                                    const std::vector<int>& groups = {1, 2, 3, 4, 5, 6}) {
  std::vector<CalibrationRow> rows;
  for (int g : groups) {
    CalibrationRow row;
    row.group = kGroupNames[static_cast<std::size_t>(g)];
    std::array<std::vector<const Residual*>, 2> cell;
    for (const auto& r : res)
      if (r.group == g) cell[r.age == 1 ? 0 : 1].push_back(&r);
    std::array<double, 2> mean{}, sd{}, cv{}, cover{};
    for (int j = 0; j < 2; ++j) {
      const auto& c = cell[j];
      if (c.size() < 2)
        throw DataError("SBH calibration: mother group " + row.group + ", q(" + (j ? "5" : "1") + ") has " +
                        std::to_string(c.size()) + " residual(s); at least 2 are needed");
      double s = 0.0;
      for (const auto* r : c) s += r->value();
      mean[j] = s / c.size();
      double ss = 0.0;
      for (const auto* r : c) ss += (r->value() - mean[j]) * (r->value() - mean[j]);
      sd[j] = std::sqrt(ss / (c.size() - 1));
      double v = 0.0, in = 0.0;
      for (const auto* r : c) {
        v += sd[j] * (1.0 - r->estimate);
        in += std::abs(r->value()) <= kZ90 * sd[j] ? 1.0 : 0.0;
      }
      cv[j] = v / c.size();
      cover[j] = in / c.size();
    }
    // pair the two residuals of each estimate
    std::map<std::tuple<std::string, int>, std::array<std::optional<double>, 2>> pairs;
    for (int j = 0; j < 2; ++j)
      for (const auto* r : cell[j]) pairs[{r->scenario, r->census_year}][j] = r->value();
    double sxy = 0.0, mx = 0.0, my = 0.0;
    int n = 0;
    for (const auto& [k, v] : pairs)
      if (v[0] && v[1]) {
        mx += *v[0];
        my += *v[1];
        ++n;
      }
    if (n >= 2) {
      mx /= n;
      my /= n;
      for (const auto& [k, v] : pairs)
        if (v[0] && v[1]) sxy += (*v[0] - mx) * (*v[1] - my);
      row.covariance = sxy / (n - 1);
    }
    row.n_imr = static_cast<int>(cell[0].size());
    row.n_u5mr = static_cast<int>(cell[1].size());
    row.mean_imr = mean[0];
    row.mean_u5mr = mean[1];
    row.se_logit_imr = sd[0];
    row.se_logit_u5mr = sd[1];
    row.cv_imr = cv[0];
    row.cv_u5mr = cv[1];
    row.coverage_imr = cover[0];
    row.coverage_u5mr = cover[1];
    rows.push_back(row);
  }
  return rows;
}

// ---- study -------------------------------------------------------------------------------

struct StudyOptions {
  std::vector<int> census_years{2000, 2010, 2019};
  ChildExposure exposure = ChildExposure::FullYears;
  std::vector<int> groups{1, 2, 3, 4, 5, 6};
};

struct StudyResult {
  std::vector<Residual> residuals;
  std::vector<CalibrationRow> table;
  std::vector<std::string> notices;
};

// Residuals of one scenario; problems become notices.
inline std::vector<Residual> scenario_residuals(const DemographicInputs& in, const StudyOptions& opt,
                                                std::vector<std::string>& notices) {
  std::vector<Residual> out;
  for (int t : opt.census_years) {
    const std::string where = in.name + " census " + std::to_string(t) + ": ";
    try {
      const double q1 = in.q1(t), q5 = in.q5(t);
      if (!(q1 > 0.0 && q5 > q1)) {
        notices.push_back(where + "no child mortality; residuals undefined, skipped");
        continue;
      }
      const auto census = generate_census(in, t, opt.exposure);
      auto br = brass_estimate(census, select_region(q1, q5));
      for (auto& n : br.notices) notices.push_back(in.name + " " + n);
      for (const auto& e : br.estimates) {
        if (std::find(opt.groups.begin(), opt.groups.end(), e.group) == opt.groups.end()) continue;
        const int ref = static_cast<int>(std::floor(e.reference_date));
        if (!in.covers(ref, ref)) {
          notices.push_back(where + "reference year " + std::to_string(ref) + " outside inputs; skipped");
          continue;
        }
        for (int age : {1, 5}) {
          const double est = age == 1 ? e.q1 : e.q5;
          const double truth = age == 1 ? in.q1(ref) : in.q5(ref);
          if (!(est > 0.0 && est < 1.0 && truth > 0.0 && truth < 1.0)) {
            notices.push_back(where + "group " + e.mother_group() + " q(" + std::to_string(age) +
                              ") is 0 or 1; skipped");
            continue;
          }
          out.push_back({in.name, t, e.group, age, ref, est, truth});
        }
      }
    } catch (const std::exception& ex) {
      notices.push_back(where + ex.what());
    }
  }
  return out;
}

inline StudyResult run_study(const std::vector<DemographicInputs>& scenarios, const StudyOptions& opt = {}) {
  StudyResult r;
  for (const auto& s : scenarios) {
    auto res = scenario_residuals(s, opt, r.notices);
    r.residuals.insert(r.residuals.end(), res.begin(), res.end());
  }
  r.table = calibrate_errors(r.residuals, opt.groups);
  return r;
}

// ---- stylized scenarios ----------------------------------------------------------------

struct ScenarioSpec {
  std::string name = "scenario";
  int first_year = 1950;
  int last_year = 2019;
  Region region = Region::West;
  // total fertility, linear between the two years
  double tfr_start = 5.0, tfr_end = 5.0;
  int fertility_decline_start = 1970, fertility_decline_end = 2000;
  // level of the child life table, linear between the two years
  double alpha_start = -0.2, alpha_end = -0.2;
  int mortality_decline_start = 1960, mortality_decline_end = 2010;
  // women's level relative to the child level
  double female_offset = -0.3;
  // gamma-shaped fertility schedule starting at age 14
  double fertility_shape = 4.0;
  double fertility_scale = 3.5;
  // AR(1) year-to-year deviations around the ramps (0 = smooth)
  double mortality_noise = 0.0;
  double fertility_noise = 0.0;
  double noise_persistence = 0.7;
  std::uint64_t noise_seed = 1;
};

namespace detail {

inline double ramp(double a, double b, int y0, int y1, int y) {
  if (y <= y0) return a;
  if (y >= y1) return b;
  return a + (b - a) * (y - y0) / static_cast<double>(y1 - y0);
}

}  // namespace detail

// Births follow from age-specific fertility applied to female cohorts, run
// from a 100-year burn-in with constant births before it.
inline DemographicInputs stylized_scenario(const ScenarioSpec& s) {
  if (s.last_year < s.first_year) throw DomainError("scenario years are reversed");
  AgeArray shape{};
  double total = 0.0;
  for (int a = 15; a < kAges; ++a) {
    const double u = a + 0.5 - 14.0;
    shape[a] = std::pow(u, s.fertility_shape - 1.0) * std::exp(-u / s.fertility_scale);
    total += shape[a];
  }
  for (auto& v : shape) v /= total;

  const int y0 = s.first_year - 100;
  std::vector<double> dm, df;
  {
    std::mt19937_64 rng(s.noise_seed);
    std::normal_distribution<double> N(0.0, 1.0);
    const double rho = s.noise_persistence, innov = std::sqrt(1.0 - rho * rho);
    double em = 0.0, ef = 0.0;
    for (int y = y0; y <= s.last_year; ++y) {
      em = rho * em + innov * N(rng);
      ef = rho * ef + innov * N(rng);
      dm.push_back(s.mortality_noise * em);
      df.push_back(s.fertility_noise * ef);
    }
  }
  const auto alpha = [&](int y) {
    return detail::ramp(s.alpha_start, s.alpha_end, s.mortality_decline_start, s.mortality_decline_end, y) +
           dm[static_cast<std::size_t>(y - y0)];
  };
  std::vector<double> B;
  std::vector<AgeArray> frac;
  for (int y = y0; y <= s.last_year; ++y) {
    const double tfr =
        detail::ramp(s.tfr_start, s.tfr_end, s.fertility_decline_start, s.fertility_decline_end, y) *
        std::exp(df[static_cast<std::size_t>(y - y0)]);
    const auto lx = stylized_lx(s.region, alpha(y) + s.female_offset);
    AgeArray born{};
    double b = 0.0;
    for (int a = 15; a < kAges; ++a) {
      const int i = y - y0 - a;
      const double mothers = kFemaleShare * (i >= 0 ? B[static_cast<std::size_t>(i)] : 1.0) * lx[a];
      born[a] = tfr * shape[a] * mothers;
      b += born[a];
    }
    for (auto& v : born) v /= b;
    B.push_back(b);
    frac.push_back(born);
  }
  DemographicInputs in;
  in.name = s.name;
  in.first_year = s.first_year;
  const double scale = 1e6 / B[static_cast<std::size_t>(s.first_year - y0)];
  for (int y = s.first_year; y <= s.last_year; ++y) {
    const auto i = static_cast<std::size_t>(y - y0);
    YearDemography d;
    d.births = B[i] * scale;
    d.birth_fraction = frac[i];
    d.female_lx = stylized_lx(s.region, alpha(y) + s.female_offset);
    d.child_q = stylized_child_q(s.region, alpha(y));
    in.years.push_back(d);
  }
  return in;
}

// The three bundled stylized scenarios.
inline std::vector<ScenarioSpec> bundled_scenarios() {
  ScenarioSpec constant;
  constant.name = "constant";
  ScenarioSpec fert = constant;
  fert.name = "declining_fertility";
  fert.tfr_start = 6.5;
  fert.tfr_end = 2.5;
  fert.fertility_decline_start = 1965;
  fert.fertility_decline_end = 2005;
  ScenarioSpec mort = constant;
  mort.name = "declining_mortality";
  mort.alpha_start = 0.3;
  mort.alpha_end = -0.9;
  mort.mortality_decline_start = 1950;
  mort.mortality_decline_end = 2019;
  return {constant, fert, mort};
}

// Country-like trajectories with random fertility and mortality transitions.
inline std::vector<ScenarioSpec> random_scenarios(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<ScenarioSpec> out;
  for (int i = 0; i < n; ++i) {
    ScenarioSpec s;
    s.name = "trajectory" + std::to_string(i + 1);
    s.region = tables::kRegions[static_cast<std::size_t>(U(rng) * 4.0) % 4];
    s.tfr_start = 4.0 + 3.5 * U(rng);
    s.tfr_end = 1.8 + (s.tfr_start - 1.8) * U(rng);
    s.fertility_decline_start = 1955 + static_cast<int>(40.0 * U(rng));
    s.fertility_decline_end = s.fertility_decline_start + 15 + static_cast<int>(30.0 * U(rng));
    s.alpha_start = -0.3 + 0.8 * U(rng);
    s.alpha_end = s.alpha_start - 1.2 * U(rng);
    s.mortality_decline_start = 1950 + static_cast<int>(30.0 * U(rng));
    s.mortality_decline_end = s.mortality_decline_start + 20 + static_cast<int>(40.0 * U(rng));
    s.fertility_shape = 3.5 + U(rng);
    s.fertility_scale = 3.0 + U(rng);
    s.female_offset = -0.6 + 0.6 * U(rng);
    s.mortality_noise = 0.1 * U(rng);
    s.fertility_noise = 0.1 * U(rng);
    s.noise_seed = seed + 7919u * static_cast<std::uint64_t>(i + 1);
    out.push_back(s);
  }
  return out;
}

// ---- files ------------------------------------------------------------------------------

// Long format: one row per (year, mother_age) with mother_age 0..49; births
// repeats the year's total, child_q_by_age is the child death probability
// at the age given in mother_age.
inline DemographicInputs read_scenario(const std::string& path) {
  const auto t = csv::read_file(path);
  t.require({"year", "births", "mother_age", "birth_fraction", "female_lx", "child_q_by_age"});
  std::map<int, YearDemography> years;
  std::map<int, std::array<bool, kAges>> seen;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    const int y = static_cast<int>(csv::to_long(t.cell(r, "year"), w));
    const long a = csv::to_long(t.cell(r, "mother_age"), w);
    if (a < 0 || a >= kAges) throw FormatError(w + ": age " + std::to_string(a) + " outside 0-49");
    auto& d = years[y];
    const double b = csv::to_double(t.cell(r, "births"), w);
    if (std::any_of(seen[y].begin(), seen[y].end(), [](bool x) { return x; }) && b != d.births)
      throw FormatError(w + ": births differ within year " + std::to_string(y));
    d.births = b;
    if (seen[y][static_cast<std::size_t>(a)]) throw FormatError(w + ": duplicate row");
    seen[y][static_cast<std::size_t>(a)] = true;
    d.birth_fraction[a] = csv::to_double(t.cell(r, "birth_fraction"), w);
    d.female_lx[a] = csv::to_double(t.cell(r, "female_lx"), w);
    d.child_q[a] = csv::to_double(t.cell(r, "child_q_by_age"), w);
  }
  if (years.empty()) throw FormatError(path + ": no rows");
  DemographicInputs in;
  in.name = std::filesystem::path(path).stem().string();
  in.first_year = years.begin()->first;
  int expect = in.first_year;
  for (const auto& [y, d] : years) {
    if (y != expect) throw FormatError(path + ": year " + std::to_string(expect) + " missing");
    if (!std::all_of(seen[y].begin(), seen[y].end(), [](bool x) { return x; }))
      throw FormatError(path + ": year " + std::to_string(y) + " lacks some ages 0-49");
    in.years.push_back(d);
    ++expect;
  }
  validate(in);
  return in;
}

inline void write_scenario(const DemographicInputs& in, const std::string& path) {
  std::ofstream o(path);
  if (!o) throw DataError("cannot write " + path);
  csv::Writer w(o);
  w.row("year", "births", "mother_age", "birth_fraction", "female_lx", "child_q_by_age");
  for (std::size_t i = 0; i < in.years.size(); ++i) {
    const auto& d = in.years[i];
    for (int a = 0; a < kAges; ++a)
      w.row(in.first_year + static_cast<int>(i), d.births, a, d.birth_fraction[a], d.female_lx[a], d.child_q[a]);
  }
}

inline void write_residuals(const std::vector<Residual>& res, std::ostream& o) {
  csv::Writer w(o);
  w.row("scenario", "census_year", "mother_group", "age", "reference_year", "estimate", "truth", "residual");
  for (const auto& r : res)
    w.row(r.scenario, r.census_year, std::string(kGroupNames[static_cast<std::size_t>(r.group)]), r.age,
          r.reference_year, r.estimate, r.truth, r.value());
}

inline std::vector<Residual> read_residuals(const std::string& path) {
  const auto t = csv::read_file(path);
  t.require({"scenario", "census_year", "mother_group", "age", "reference_year", "estimate", "truth"});
  std::vector<Residual> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    Residual x;
    x.scenario = t.cell(r, "scenario");
    x.census_year = static_cast<int>(csv::to_long(t.cell(r, "census_year"), w));
    const auto g = std::find(kGroupNames.begin(), kGroupNames.end(), t.cell(r, "mother_group"));
    if (g == kGroupNames.end()) throw FormatError(w + ": unknown mother group");
    x.group = static_cast<int>(g - kGroupNames.begin());
    x.age = static_cast<int>(csv::to_long(t.cell(r, "age"), w));
    x.reference_year = static_cast<int>(csv::to_long(t.cell(r, "reference_year"), w));
    x.estimate = csv::to_double(t.cell(r, "estimate"), w);
    x.truth = csv::to_double(t.cell(r, "truth"), w);
    out.push_back(x);
  }
  return out;
}

inline void write_calibration(const std::vector<CalibrationRow>& rows, std::ostream& o) {
  csv::Writer w(o);
  w.row("group", "n_imr", "n_u5mr", "se_logit_imr", "se_logit_u5mr", "covariance", "cv_imr", "cv_u5mr",
        "coverage_imr", "coverage_u5mr", "mean_residual_imr", "mean_residual_u5mr");
  for (const auto& r : rows)
    w.row(r.group, r.n_imr, r.n_u5mr, r.se_logit_imr, r.se_logit_u5mr, r.covariance, r.cv_imr, r.cv_u5mr,
          r.coverage_imr, r.coverage_u5mr, r.mean_imr, r.mean_u5mr);
}

}  // namespace childsurv::sbh
