#pragma once

// Synthetic data generators for tests. Survival is evaluated with the oracle
// formulas, never with the library under test.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "childsurv/fbh.hpp"
#include "support/oracles.hpp"

namespace sim {

namespace cs = childsurv;

inline double survival(const cs::SurvivalParams& p, double a) {
  if (p.family == cs::Family::LogLogistic)
    return oracle::ll_survival(std::exp(p.theta[0]), 1.0 / oracle::expit(p.theta[1]), a);
  return oracle::pe_survival(std::exp(p.theta[0]), std::exp(p.theta[1]), std::exp(p.theta[2]), a);
}

// Death age in months, or a value > 60 when the child survives to 60. A
// frailty multiplier m scales the cumulative hazard: S_m(a) = S(a)^m.
inline double draw_death_age(const cs::SurvivalParams& p, std::mt19937_64& rng, double m = 1.0) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double u = U(rng);
  if (u <= std::pow(survival(p, 60.0), m)) return 61.0;
  double lo = 0.0, hi = 60.0;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::pow(survival(p, mid), m) > u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct FbhDesign {
  std::string survey_id = "S";
  int survey_year = 2000;
  std::vector<int> births;  // per birth year, oldest first, ending at survey_year
  int clusters = 1;
  int strata = 1;
  double frailty_sd = 0.0;   // log-normal cluster frailty on the hazard
  bool whole_months = true;  // report ages rounded down to whole months
  bool random_weights = false;
};

// Interview at the end of the survey year; birth dates uniform within year.
inline std::vector<cs::BirthRecord> simulate_fbh(
    const FbhDesign& d, const std::function<cs::SurvivalParams(int)>& theta_of_year,
    std::mt19937_64& rng) {
  std::vector<cs::BirthRecord> out;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<double> frailty(d.clusters), weight(d.clusters);
  for (int c = 0; c < d.clusters; ++c) {
    frailty[c] = std::exp(d.frailty_sd * N(rng) - 0.5 * d.frailty_sd * d.frailty_sd);
    weight[c] = d.random_weights ? 0.5 + U(rng) : 1.0;
  }
  const int first = d.survey_year - static_cast<int>(d.births.size()) + 1;
  for (std::size_t yi = 0; yi < d.births.size(); ++yi) {
    const int year = first + static_cast<int>(yi);
    const auto p = theta_of_year(year);
    for (int i = 0; i < d.births[yi]; ++i) {
      const int c = static_cast<int>(U(rng) * d.clusters);
      const double age_at_interview = 12.0 * (d.survey_year + 1.0 - year - U(rng));
      const double death = draw_death_age(p, rng, frailty[c]);
      cs::BirthRecord r;
      r.survey_id = d.survey_id;
      r.stratum = std::to_string(c % d.strata);
      r.cluster = std::to_string(c);
      r.weight = weight[c];
      r.birth_year = year;
      if (death < age_at_interview && death <= 60.0) {
        r.status = cs::BirthStatus::DiedAt;
        r.age = d.whole_months ? std::floor(death) : death;
      } else {
        r.status = cs::BirthStatus::AliveAt;
        r.age = std::min(d.whole_months ? std::floor(age_at_interview) : age_at_interview, 60.0);
      }
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace sim
