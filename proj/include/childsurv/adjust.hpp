#pragma once

// Missing-mothers (HIV) adjustment of pseudo-likelihood estimates. The hazard
// is scaled so that the adjusted U5MR is r times the unadjusted one; the
// covariance is carried over unchanged.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "childsurv/fbh.hpp"
#include "childsurv/survival.hpp"

namespace childsurv {

struct AdjustmentFactor {
  int year = 0;
  double r = 1.0;
};

inline void check_ratio(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("adjustment ratio r must be positive");
}

// Uniform hazard multiplier b for the piecewise-exponential family.
inline double bias_multiplier_pe(double s60_star, double r) {
  check_ratio(r);
  if (!(s60_star > 0.0 && s60_star < 1.0)) throw DomainError("S*(60) must lie in (0, 1)");
  const double target = 1.0 - r * (1.0 - s60_star);
  if (!(target > 0.0)) throw DomainError("adjustment implies U5MR >= 1");
  if (r == 1.0) return 1.0;
  return std::log(target) / std::log(s60_star);
}

// Age-scale multiplier b for the log-logistic family (mu -> b mu).
inline double bias_multiplier_ll(const SurvivalParams& star, double r) {
  check_ratio(r);
  if (star.family != Family::LogLogistic) throw DomainError("log-logistic parameters expected");
  if (r == 1.0) return 1.0;
  const double s60 = survival(star, kTerminalAge);
  const double target = 1.0 - r * (1.0 - s60);
  if (!(target > 0.0 && target < 1.0)) throw DomainError("adjusted survival leaves (0, 1)");
  return kTerminalAge / inverse_survival(star, target);
}

inline double bias_multiplier_ll(double mu_star, double sigma_star, double r) {
  return bias_multiplier_ll(log_logistic(mu_star, sigma_star), r);
}

inline double bias_multiplier(const SurvivalParams& star, double r) {
  if (star.family == Family::LogLogistic) return bias_multiplier_ll(star, r);
  return bias_multiplier_pe(survival(star, kTerminalAge), r);
}

// theta -> theta + log b on every log-hazard (PE) or on log mu only (LL).
inline SurvivalParams adjust_params(const SurvivalParams& star, double r) {
  const double lb = std::log(bias_multiplier(star, r));
  SurvivalParams p = star;
  if (p.family == Family::LogLogistic) {
    p.theta[0] += lb;
  } else {
    for (int k = 0; k < 3; ++k) p.theta[k] += lb;
  }
  return p;
}

struct AdjustedEstimate {
  SurveyEstimate estimate;           // theta_hat adjusted, V_hat as before
  std::vector<int> defaulted_years;  // years without a supplied r (taken as 1)
};

inline AdjustedEstimate apply_adjustment(const SurveyEstimate& est,
                                         const std::map<int, double>& r_by_year) {
  AdjustedEstimate out{est, {}};
  for (std::size_t y = 0; y < est.years.size(); ++y) {
    const auto it = r_by_year.find(est.years[y]);
    double r = 1.0;
    if (it == r_by_year.end()) {
      out.defaulted_years.push_back(est.years[y]);
    } else {
      r = it->second;
    }
    if (r == 1.0) continue;
    const auto adj = adjust_params(est.params(y), r);
    for (int k = 0; k < est.K(); ++k)
      out.estimate.theta_hat[static_cast<Eigen::Index>(y) * est.K() + k] = adj.theta[k];
  }
  return out;
}

inline AdjustedEstimate apply_adjustment(const SurveyEstimate& est,
                                         const std::vector<AdjustmentFactor>& factors) {
  std::map<int, double> m;
  for (const auto& f : factors) {
    check_ratio(f.r);
    m[f.year] = f.r;
  }
  return apply_adjustment(est, m);
}

}  // namespace childsurv
