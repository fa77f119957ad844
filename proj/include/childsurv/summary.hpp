#pragma once

// Posterior summaries: a functional of the survival curve applied to every
// draw in every year, reduced to empirical (type 7) quantiles.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "childsurv/csv.hpp"
#include "childsurv/inference.hpp"
#include "childsurv/survival.hpp"

namespace childsurv {

enum class Functional { QByAge, QBetween, ConditionalByAge, PersonTimeRate, SurvivalCurve };

struct SummaryRequest {
  Functional kind = Functional::QByAge;
  double age = kTerminalAge;   // QByAge, ConditionalByAge; start for QBetween
  double width = 0.0;          // QBetween
  AgeBand band{0.0, 12.0};     // PersonTimeRate
  std::vector<double> grid;    // SurvivalCurve
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  bool raw = false;            // probabilities and rates instead of per 1000

  static SummaryRequest q(double a) { return {Functional::QByAge, a}; }
  static SummaryRequest between(double a, double n) { return {Functional::QBetween, a, n}; }
  static SummaryRequest conditional(double a) { return {Functional::ConditionalByAge, a}; }
  static SummaryRequest rate(AgeBand b) {
    SummaryRequest r;
    r.kind = Functional::PersonTimeRate;
    r.band = b;
    return r;
  }
  static SummaryRequest curve(std::vector<double> g) {
    SummaryRequest r;
    r.kind = Functional::SurvivalCurve;
    r.grid = std::move(g);
    return r;
  }

  // per-1000 scaling applies to death probabilities and rates
  double scale() const {
    if (raw) return 1.0;
    return kind == Functional::QByAge || kind == Functional::QBetween || kind == Functional::PersonTimeRate
               ? 1000.0
               : 1.0;
  }

  std::vector<double> ages() const {
    switch (kind) {
      case Functional::SurvivalCurve: return grid;
      case Functional::PersonTimeRate: return {band.start};
      default: return {age};
    }
  }

  void validate() const {
    const auto in_range = [](double a) { return a >= 0.0 && a <= kTerminalAge; };
    if (kind == Functional::QBetween && !(width > 0.0 && in_range(age) && in_range(age + width)))
      throw DomainError("QBetween needs 0 <= a < a + n <= 60");
    if ((kind == Functional::QByAge || kind == Functional::ConditionalByAge) && !in_range(age))
      throw DomainError("age must lie in [0, 60]");
    if (kind == Functional::PersonTimeRate) validate_band(band);
    if (kind == Functional::SurvivalCurve) {
      if (grid.empty()) throw DomainError("survival curve needs at least one age");
      for (double a : grid)
        if (!in_range(a)) throw DomainError("survival curve ages must lie in [0, 60]");
    }
    if (quantiles.empty()) throw DomainError("at least one quantile is needed");
    for (double p : quantiles)
      if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantiles must lie in [0, 1]");
  }

  std::string name() const {
    std::ostringstream o;
    switch (kind) {
      case Functional::QByAge:
        if (age == 1.0) return "NMR";
        if (age == 12.0) return "IMR";
        if (age == 60.0) return "U5MR";
        o << "q(" << csv::fmt(age) << ")";
        break;
      case Functional::QBetween:
        o << "q(" << csv::fmt(age) << "," << csv::fmt(age + width) << ")";
        break;
      case Functional::ConditionalByAge:
        o << "q(" << csv::fmt(age) << "|60)";
        break;
      case Functional::PersonTimeRate:
        o << "rate(" << csv::fmt(band.start) << "," << csv::fmt(band.end()) << ")";
        break;
      case Functional::SurvivalCurve:
        return "S";
    }
    return o.str();
  }
};

// "nmr", "imr", "u5mr", "q:A", "qbetween:A:N", "cond:A", "rate:A:N", "curve:A1;A2;..."
inline SummaryRequest parse_request(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  const auto num = [&](std::size_t i) {
    if (i >= parts.size()) throw FormatError("summary '" + spec + "': missing argument");
    return csv::to_double(parts[i], "summary '" + spec + "'");
  };
  const std::string& k = parts.empty() ? spec : parts[0];
  SummaryRequest r;
  if (k == "nmr") r = SummaryRequest::q(1.0);
  else if (k == "imr") r = SummaryRequest::q(12.0);
  else if (k == "u5mr") r = SummaryRequest::q(60.0);
  else if (k == "q") r = SummaryRequest::q(num(1));
  else if (k == "qbetween") r = SummaryRequest::between(num(1), num(2));
  else if (k == "cond") r = SummaryRequest::conditional(num(1));
  else if (k == "rate") r = SummaryRequest::rate({num(1), num(2)});
  else if (k == "curve") {
    std::vector<double> g;
    std::stringstream gs(parts.size() > 1 ? parts[1] : "");
    for (std::string a; std::getline(gs, a, ';');) g.push_back(csv::to_double(a, "summary '" + spec + "'"));
    r = SummaryRequest::curve(std::move(g));
  } else {
    throw FormatError("unknown summary '" + spec + "'");
  }
  r.validate();
  return r;
}

// functional values at each requested age, unscaled
inline std::vector<double> evaluate(const SummaryRequest& r, const SurvivalParams& p) {
  switch (r.kind) {
    case Functional::QByAge: return {death_prob(p, r.age)};
    case Functional::QBetween:
      return {-std::expm1(log_survival(p, r.age + r.width) - log_survival(p, r.age))};
    case Functional::ConditionalByAge: return {conditional_death_prob(p, r.age)};
    case Functional::PersonTimeRate: return {person_time_rate(p, r.band)};
    case Functional::SurvivalCurve: {
      std::vector<double> out;
      for (double a : r.grid) out.push_back(survival(p, a));
      return out;
    }
  }
  return {};
}

// Hyndman-Fan type 7 on sorted data
inline double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct SummaryRow {
  int year = 0;
  double age = 0.0;
  std::vector<double> values;  // one per requested quantile
};

struct SummarySeries {
  SummaryRequest request;
  std::string measure;
  Family family = Family::LogLogistic;
  std::vector<SummaryRow> rows;
};

inline SummarySeries summarize(const PosteriorFit& fit, const SummaryRequest& req) {
  req.validate();
  if (fit.draws() < 1) throw DataError("fit has no posterior draws");
  SummarySeries s;
  s.request = req;
  s.measure = req.name();
  s.family = fit.family;
  const auto ages = req.ages();
  const double scale = req.scale();
  std::vector<std::vector<double>> by_age(ages.size());
  for (int t = 0; t < fit.T(); ++t) {
    for (auto& v : by_age) v.clear();
    for (int d = 0; d < fit.draws(); ++d) {
      const auto vals = evaluate(req, fit.draw_params(d, t));
      for (std::size_t i = 0; i < vals.size(); ++i) by_age[i].push_back(vals[i]);
    }
    for (std::size_t i = 0; i < ages.size(); ++i) {
      std::sort(by_age[i].begin(), by_age[i].end());
      SummaryRow row;
      row.year = fit.first_year + t;
      row.age = ages[i];
      for (double p : req.quantiles) row.values.push_back(scale * quantile_type7(by_age[i], p));
      s.rows.push_back(std::move(row));
    }
  }
  return s;
}

// long format: measure, year, age, quantile, value
inline void write_series_csv(const SummarySeries& s, std::ostream& o) {
  csv::Writer w(o);
  w.row("measure", "year", "age", "quantile", "value");
  for (const auto& r : s.rows)
    for (std::size_t i = 0; i < r.values.size(); ++i)
      w.row(s.measure, r.year, r.age, s.request.quantiles[i], r.values[i]);
}

// Draw-years where NMR <= IMR <= U5MR fails.
inline int ordering_violations(const PosteriorFit& fit) {
  int bad = 0;
  for (int t = 0; t < fit.T(); ++t)
    for (int d = 0; d < fit.draws(); ++d) {
      const auto p = fit.draw_params(d, t);
      const double n = death_prob(p, 1.0), i = death_prob(p, 12.0), u = death_prob(p, 60.0);
      if (!(n <= i && i <= u)) ++bad;
    }
  return bad;
}

}  // namespace childsurv
