#pragma once

// Parametric child survival families on ages 0..60 months.
//
//   LogLogistic:           theta = (log mu, logit(1/sigma)),  sigma > 1
//   PiecewiseExponential:  theta = (log a1, log a2, log a3), hazard
//                          a1+a2+a3 on [0,1], a1+a2 on (1,12], a1 on (12,60]
//
// Every function is templated on the scalar so that likelihood code can pass
// ad::Dual2 parameters and receive exact derivatives.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include <boost/math/quadrature/gauss.hpp>

#include "childsurv/ad.hpp"
#include "childsurv/error.hpp"

namespace childsurv {

enum class Family { LogLogistic, PiecewiseExponential };

inline constexpr double kTerminalAge = 60.0;
inline constexpr std::array<double, 2> kPeBreakpoints{1.0, 12.0};
inline constexpr int kMaxParams = 3;

constexpr int num_params(Family f) { return f == Family::LogLogistic ? 2 : 3; }

inline std::string_view to_string(Family f) {
  return f == Family::LogLogistic ? "loglogistic" : "piecewise-exp";
}

inline Family parse_family(std::string_view s) {
  if (s == "loglogistic" || s == "log-logistic" || s == "ll") return Family::LogLogistic;
  if (s == "piecewise-exp" || s == "piecewise-exponential" || s == "pe")
    return Family::PiecewiseExponential;
  throw FormatError("unknown survival family '" + std::string(s) + "'");
}

template <class S>
struct SurvivalParamsT {
  Family family = Family::LogLogistic;
  std::array<S, kMaxParams> theta{};

  int size() const { return num_params(family); }
};

using SurvivalParams = SurvivalParamsT<double>;

inline SurvivalParams make_params(Family f, std::span<const double> theta) {
  if (static_cast<int>(theta.size()) != num_params(f))
    throw DomainError("theta has " + std::to_string(theta.size()) + " entries, family needs " +
                      std::to_string(num_params(f)));
  SurvivalParams p{f, {}};
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (!std::isfinite(theta[k])) throw DomainError("non-finite survival parameter");
    p.theta[k] = theta[k];
  }
  return p;
}

// Natural-scale constructors.
inline SurvivalParams log_logistic(double mu, double sigma) {
  if (!(mu > 0.0) || !(sigma > 1.0)) throw DomainError("log-logistic needs mu > 0, sigma > 1");
  return {Family::LogLogistic, {std::log(mu), logit(1.0 / sigma), 0.0}};
}

inline SurvivalParams piecewise_exponential(double a1, double a2, double a3) {
  if (!(a1 > 0.0 && a2 > 0.0 && a3 > 0.0)) throw DomainError("piecewise hazards must be positive");
  return {Family::PiecewiseExponential, {std::log(a1), std::log(a2), std::log(a3)}};
}

struct AgeBand {
  double start = 0.0;  // months
  double width = 0.0;  // months

  double end() const { return start + width; }
  bool operator==(const AgeBand&) const = default;
  auto operator<=>(const AgeBand&) const = default;
};

inline void validate_band(const AgeBand& b) {
  if (!(b.start >= 0.0) || !(b.width > 0.0) || b.end() > kTerminalAge + 1e-12)
    throw DomainError("age band must satisfy 0 <= a, n > 0, a + n <= 60");
}

inline bool bands_overlap(const AgeBand& x, const AgeBand& y) {
  return x.start < y.end() && y.start < x.end();
}

namespace detail {

inline void check_age(double a) {
  if (!(a >= 0.0 && a <= kTerminalAge)) throw DomainError("age outside [0, 60] months");
}

// log(1 - exp(x)) for x < 0
template <class S>
S log1mexp(const S& x) {
  using std::exp;
  using std::expm1;
  using std::log;
  using std::log1p;
  if (value(x) > -0.6931471805599453) return log(-expm1(x));
  return log1p(-exp(x));
}

template <class S>
S ll_shape(const SurvivalParamsT<S>& p) {
  return expit(p.theta[1]);  // 1 / sigma
}

// z = (1/sigma) (log a - log mu); S(a) = expit(-z), logit q(a) = z.
template <class S>
S ll_z(const SurvivalParamsT<S>& p, double a) {
  return ll_shape(p) * (std::log(a) - p.theta[0]);
}

template <class S>
std::array<S, 3> pe_segment_hazards(const SurvivalParamsT<S>& p) {
  using std::exp;
  const S a1 = exp(p.theta[0]);
  const S a2 = exp(p.theta[1]);
  const S a3 = exp(p.theta[2]);
  return {a1 + a2 + a3, a1 + a2, a1};
}

inline const auto& gauss64() { return boost::math::quadrature::gauss<double, 64>::abscissa(); }
inline const auto& gauss64_weights() {
  return boost::math::quadrature::gauss<double, 64>::weights();
}

}  // namespace detail

template <class S>
S cumulative_hazard(const SurvivalParamsT<S>& p, double a) {
  detail::check_age(a);
  if (p.family == Family::LogLogistic) {
    if (a == 0.0) return S(0.0);
    return softplus(detail::ll_z(p, a));
  }
  const auto h = detail::pe_segment_hazards(p);
  if (a <= 1.0) return h[0] * a;
  if (a <= 12.0) return h[0] + h[1] * (a - 1.0);
  return h[0] + 11.0 * h[1] + h[2] * (a - 12.0);
}

template <class S>
S log_survival(const SurvivalParamsT<S>& p, double a) {
  return -cumulative_hazard(p, a);
}

template <class S>
S survival(const SurvivalParamsT<S>& p, double a) {
  using std::exp;
  return exp(log_survival(p, a));
}

template <class S>
S hazard(const SurvivalParamsT<S>& p, double a) {
  if (!(a > 0.0 && a <= kTerminalAge)) throw DomainError("hazard age outside (0, 60] months");
  if (p.family == Family::LogLogistic) {
    return detail::ll_shape(p) / a * expit(detail::ll_z(p, a));
  }
  const auto h = detail::pe_segment_hazards(p);
  if (a <= 1.0) return h[0];
  if (a <= 12.0) return h[1];
  return h[2];
}

// log f(a) = log h(a) + log S(a), the exact-death contribution.
template <class S>
S log_density(const SurvivalParamsT<S>& p, double a) {
  using std::log;
  if (p.family == Family::LogLogistic) {
    if (!(a > 0.0 && a <= kTerminalAge)) throw DomainError("death age outside (0, 60] months");
    const S z = detail::ll_z(p, a);
    return log(detail::ll_shape(p)) - std::log(a) + log_expit(z) + log_expit(-z);
  }
  detail::check_age(a);
  const auto h = detail::pe_segment_hazards(p);
  const S& h_at = a <= 1.0 ? h[0] : (a <= 12.0 ? h[1] : h[2]);
  return log(h_at) + log_survival(p, a);
}

// log[S(lo) - S(hi)], probability of death inside (lo, hi].
template <class S>
S log_interval_death(const SurvivalParamsT<S>& p, double lo, double hi) {
  if (!(hi > lo)) throw DomainError("interval must have hi > lo");
  const S ls_lo = log_survival(p, lo);
  const S ls_hi = log_survival(p, hi);
  return ls_lo + detail::log1mexp(ls_hi - ls_lo);
}

// Closed-form logit of the death probability by age a (log-logistic only).
template <class S>
S logit_q(const SurvivalParamsT<S>& p, double a) {
  if (p.family != Family::LogLogistic)
    throw DomainError("logit_q closed form exists only for the log-logistic family");
  if (!(a > 0.0 && a <= kTerminalAge)) throw DomainError("age outside (0, 60] months");
  return detail::ll_z(p, a);
}

// logit(1 - S(a)) for either family.
template <class S>
S logit_death_prob(const SurvivalParamsT<S>& p, double a) {
  using std::expm1;
  using std::log;
  if (p.family == Family::LogLogistic) return logit_q(p, a);
  if (!(a > 0.0 && a <= kTerminalAge)) throw DomainError("age outside (0, 60] months");
  // (1 - S)/S = exp(H) - 1
  return log(expm1(cumulative_hazard(p, a)));
}

template <class S>
S death_prob(const SurvivalParamsT<S>& p, double a) {
  using std::expm1;
  return -expm1(log_survival(p, a));
}

// Person-months lived in the band per entrant at birth: integral of S over it.
template <class S>
S survival_integral(const SurvivalParamsT<S>& p, const AgeBand& band) {
  using std::exp;
  using std::expm1;
  validate_band(band);
  const double lo = band.start;
  const double hi = band.end();
  if (p.family == Family::PiecewiseExponential) {
    const auto h = detail::pe_segment_hazards(p);
    const std::array<double, 4> edges{0.0, 1.0, 12.0, kTerminalAge};
    S total(0.0);
    for (int s = 0; s < 3; ++s) {
      const double x0 = std::max(lo, edges[s]);
      const double x1 = std::min(hi, edges[s + 1]);
      if (x1 <= x0) continue;
      total += survival(p, x0) * (-expm1(-h[s] * (x1 - x0))) / h[s];
    }
    return total;
  }
  // Fixed 64-node Gauss-Legendre. Bands starting at birth use x = n v^4 to
  // remove the a^(1/sigma) endpoint singularity of the log-logistic.
  const auto& nodes = detail::gauss64();
  const auto& weights = detail::gauss64_weights();
  S total(0.0);
  const double n = band.width;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (int sign : {-1, 1}) {
      const double v = 0.5 * (1.0 + sign * nodes[i]);
      const double w = 0.5 * weights[i];
      if (lo == 0.0) {
        const double v3 = v * v * v;
        total += survival(p, n * v3 * v) * (w * 4.0 * n * v3);
      } else {
        total += survival(p, lo + n * v) * (w * n);
      }
    }
  }
  return total;
}

// Deaths per person-year in the band: 12 [S(a) - S(a+n)] / integral of S.
template <class S>
S person_time_rate(const SurvivalParamsT<S>& p, const AgeBand& band) {
  validate_band(band);
  if (p.family == Family::PiecewiseExponential) {
    const std::array<double, 4> edges{0.0, 1.0, 12.0, kTerminalAge};
    for (int s = 0; s < 3; ++s) {
      if (band.start >= edges[s] && band.end() <= edges[s + 1]) {
        const auto h = detail::pe_segment_hazards(p);
        return 12.0 * h[s];
      }
    }
  }
  const S denom = survival_integral(p, band);
  if (!(value(denom) > 0.0)) throw NumericError("person-time integral underflowed to zero");
  return 12.0 * (survival(p, band.start) - survival(p, band.end())) / denom;
}

// Age at which the log-logistic survival equals s.
inline double inverse_survival(const SurvivalParams& p, double s) {
  if (p.family != Family::LogLogistic)
    throw DomainError("inverse_survival is defined for the log-logistic family");
  if (!(s > 0.0 && s < 1.0)) throw DomainError("inverse_survival needs 0 < s < 1");
  const double mu = std::exp(p.theta[0]);
  const double sigma = 1.0 / expit(p.theta[1]);
  return mu * std::pow(1.0 / s - 1.0, sigma);
}

// P(death by a | death by 60).
template <class S>
S conditional_death_prob(const SurvivalParamsT<S>& p, double a) {
  detail::check_age(a);
  const S q60 = death_prob(p, kTerminalAge);
  if (!(value(q60) > 0.0)) throw DomainError("no under-five mortality: S(60) = 1");
  if (a == kTerminalAge) return S(1.0);
  return death_prob(p, a) / q60;
}

// Lifts double parameters into dual parameters seeded at offset.
template <std::size_t N>
SurvivalParamsT<ad::Dual2<N>> seed_params(const SurvivalParams& p, std::size_t offset = 0) {
  SurvivalParamsT<ad::Dual2<N>> d{p.family, {}};
  for (int k = 0; k < p.size(); ++k) d.theta[k] = ad::Dual2<N>::variable(p.theta[k], offset + k);
  return d;
}

}  // namespace childsurv
