#pragma once

// Survey-weighted pseudo-likelihood fits of one survival parameter vector per
// birth year from full-birth-history microdata, with a stratified
// cluster-robust sandwich covariance.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "childsurv/csv.hpp"
#include "childsurv/optimize.hpp"
#include "childsurv/survival.hpp"

namespace childsurv {

inline constexpr int kRetrospectiveYears = 20;
inline constexpr double kUnidentifiedVariance = 1e6;

enum class BirthStatus { DiedAt, AliveAt, DiedBetween };

struct BirthRecord {
  std::string survey_id;
  std::string stratum;
  std::string cluster;
  double weight = 1.0;
  int birth_year = 0;
  BirthStatus status = BirthStatus::AliveAt;
  double age = 0.0;    // months; lower end for DiedBetween
  double age_hi = 0.0;  // upper end for DiedBetween

  static BirthRecord died(int year, double age, std::string cluster = "1", double w = 1.0) {
    return {"", "1", std::move(cluster), w, year, BirthStatus::DiedAt, age, 0.0};
  }
  static BirthRecord alive(int year, double age, std::string cluster = "1", double w = 1.0) {
    return {"", "1", std::move(cluster), w, year, BirthStatus::AliveAt, age, 0.0};
  }
};

struct CensoringSpec {
  double heaped_age = 12.0;
  double low = 6.0;
  double high = 18.0;
  // Deaths reported in whole months m are taken to lie in [m, m+1).
  bool whole_month_intervals = true;

  void validate() const {
    if (!(low < heaped_age && heaped_age < high))
      throw DomainError("censoring interval must satisfy low < heaped age < high");
  }
};

inline std::vector<BirthRecord> censor_heaped(std::vector<BirthRecord> records,
                                              const CensoringSpec& spec = {}) {
  spec.validate();
  for (auto& r : records) {
    if (r.status == BirthStatus::DiedAt && r.age == spec.heaped_age) {
      r.status = BirthStatus::DiedBetween;
      r.age = spec.low;
      r.age_hi = spec.high;
    }
  }
  return records;
}

// One likelihood contribution after discretisation.
enum class FbhOutcome { Exact, Interval, RightCensored };

struct FbhObservation {
  FbhOutcome kind = FbhOutcome::RightCensored;
  double lo = 0.0;
  double hi = 0.0;

  auto operator<=>(const FbhObservation&) const = default;
};

// Maps a (heaping-censored) record to its contribution. Ages are capped at
// the 60-month horizon: deaths at or beyond 60 count as survival to 60.
inline FbhObservation discretize(const BirthRecord& r, const CensoringSpec& spec = {}) {
  if (!(r.age >= 0.0) || !std::isfinite(r.age)) throw DataError("negative or missing age");
  switch (r.status) {
    case BirthStatus::AliveAt:
      return {FbhOutcome::RightCensored, std::min(r.age, kTerminalAge), 0.0};
    case BirthStatus::DiedBetween: {
      if (r.age >= kTerminalAge) return {FbhOutcome::RightCensored, kTerminalAge, 0.0};
      return {FbhOutcome::Interval, r.age, std::min(r.age_hi, kTerminalAge)};
    }
    case BirthStatus::DiedAt:
      break;
  }
  if (r.age >= kTerminalAge) return {FbhOutcome::RightCensored, kTerminalAge, 0.0};
  if (spec.whole_month_intervals && r.age == std::floor(r.age))
    return {FbhOutcome::Interval, r.age, std::min(r.age + 1.0, kTerminalAge)};
  return {FbhOutcome::Exact, r.age, 0.0};
}

template <class S>
S fbh_loglik(const SurvivalParamsT<S>& p, const FbhObservation& o) {
  switch (o.kind) {
    case FbhOutcome::Exact:
      return log_density(p, o.lo);
    case FbhOutcome::Interval:
      return log_interval_death(p, o.lo, o.hi);
    case FbhOutcome::RightCensored:
      break;
  }
  if (o.lo == 0.0) return S(0.0);
  return log_survival(p, o.lo);
}

struct SurveyEstimate {
  std::string survey_id;
  Family family = Family::LogLogistic;
  std::vector<int> years;          // contiguous, ending at the survey year
  Eigen::VectorXd theta_hat;       // stacked per year, K entries each
  Eigen::MatrixXd V_hat;
  std::vector<bool> identified;    // per year
  int dropped_out_of_window = 0;

  int K() const { return num_params(family); }
  int first_year() const { return years.front(); }
  int last_year() const { return years.back(); }
  SurvivalParams params(std::size_t i) const {
    SurvivalParams p{family, {}};
    for (int k = 0; k < K(); ++k) p.theta[k] = theta_hat[static_cast<Eigen::Index>(i) * K() + k];
    return p;
  }
};

namespace detail {

// Records collapsed to distinct (year, outcome) cells carrying summed weight.
struct FbhCells {
  std::vector<FbhObservation> obs;
  std::vector<std::vector<std::pair<std::size_t, double>>> by_year;  // (cell, weight)
};

inline double fbh_objective(const std::vector<std::pair<std::size_t, double>>& cells,
                            const std::vector<FbhObservation>& obs, Family family,
                            const Eigen::VectorXd& x, Eigen::VectorXd* g, Eigen::MatrixXd* H) {
  const int K = num_params(family);
  SurvivalParams p{family, {}};
  for (int k = 0; k < K; ++k) p.theta[k] = x[k];
  try {
    if (!g) {
      double f = 0.0;
      for (const auto& [c, w] : cells) f += w * fbh_loglik(p, obs[c]);
      return std::isfinite(f) ? f : -std::numeric_limits<double>::infinity();
    }
    const auto d = seed_params<3>(p);
    ad::Dual2<3> f(0.0);
    for (const auto& [c, w] : cells) f += fbh_loglik(d, obs[c]) * w;
    g->resize(K);
    H->resize(K, K);
    for (int i = 0; i < K; ++i) {
      (*g)[i] = f.g[i];
      for (int j = 0; j < K; ++j) (*H)(i, j) = f.hess(i, j);
    }
    return std::isfinite(f.v) && g->allFinite() && H->allFinite()
               ? f.v
               : -std::numeric_limits<double>::infinity();
  } catch (const DomainError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

// Crude occurrence/exposure start values.
inline Eigen::VectorXd fbh_start(Family family, const std::vector<FbhObservation>& obs,
                                 const std::vector<double>& weight) {
  double deaths = 0.0, total = 0.0;
  std::array<double, 3> d{}, e{};  // segment deaths / person-months
  const std::array<double, 4> edges{0.0, 1.0, 12.0, kTerminalAge};
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    const double w = weight[i];
    total += w;
    const double exit = o.kind == FbhOutcome::Interval ? 0.5 * (o.lo + o.hi) : o.lo;
    for (int s = 0; s < 3; ++s)
      e[s] += w * std::max(0.0, std::min(exit, edges[s + 1]) - edges[s]);
    if (o.kind != FbhOutcome::RightCensored) {
      deaths += w;
      d[exit <= 1.0 ? 0 : (exit <= 12.0 ? 1 : 2)] += w;
    }
  }
  Eigen::VectorXd x(num_params(family));
  if (family == Family::LogLogistic) {
    const double q = std::clamp(deaths / std::max(total, 1e-300), 1e-4, 0.5);
    const double b = 0.3;
    x << std::log(60.0) - logit(q) / b, logit(b);
    return x;
  }
  std::array<double, 3> rate{};
  for (int s = 0; s < 3; ++s) rate[s] = (d[s] + 0.5) / std::max(e[s], 1.0);
  const double a1 = rate[2];
  const double a2 = std::max(rate[1] - a1, 0.1 * a1);
  const double a3 = std::max(rate[0] - a1 - a2, 0.1 * (a1 + a2));
  x << std::log(a1), std::log(a2), std::log(a3);
  return x;
}

// The piecewise-exponential levels are separately estimable only when each
// hazard segment holds deaths and some child is observed past 12 months.
inline bool pe_segments_informed(const std::vector<std::pair<std::size_t, double>>& cells,
                                 const std::vector<FbhObservation>& obs) {
  bool d0 = false, d1 = false, d2 = false, beyond12 = false;
  for (const auto& [c, w] : cells) {
    const auto& o = obs[c];
    if (o.kind == FbhOutcome::RightCensored) {
      beyond12 = beyond12 || o.lo > 12.0;
      continue;
    }
    const double lo = o.lo, hi = o.kind == FbhOutcome::Exact ? o.lo : o.hi;
    d0 = d0 || lo < 1.0;
    d1 = d1 || (lo < 12.0 && hi > 1.0);
    d2 = d2 || hi > 12.0;
    beyond12 = beyond12 || hi > 12.0;
  }
  return d0 && d1 && d2 && beyond12;
}

}  // namespace detail

struct FbhFitOptions {
  CensoringSpec censoring;
  std::optional<int> survey_year;  // defaults to the latest birth year
  NewtonOptions newton;
  double max_abs_theta = 30.0;     // beyond this a year is treated as unidentified
  // piecewise-exponential increments this far (log scale) below the child
  // hazard put the year on the monotone boundary; treated as unidentified
  double min_log_increment = -15.0;
};

inline SurveyEstimate fit_survey(const std::vector<BirthRecord>& input, Family family,
                                 const FbhFitOptions& opt = {}) {
  if (input.empty()) throw DataError("no birth records");
  const int K = num_params(family);
  int survey_year = opt.survey_year.value_or(std::numeric_limits<int>::min());
  if (!opt.survey_year)
    for (const auto& r : input) survey_year = std::max(survey_year, r.birth_year);
  const int first = survey_year - kRetrospectiveYears + 1;

  SurveyEstimate est;
  est.survey_id = input.front().survey_id;
  est.family = family;
  for (int y = first; y <= survey_year; ++y) est.years.push_back(y);

  const auto records = censor_heaped(input, opt.censoring);
  std::vector<const BirthRecord*> kept;
  double wsum = 0.0;
  for (const auto& r : records) {
    if (!(r.weight > 0.0) || !std::isfinite(r.weight)) throw DataError("design weights must be > 0");
    if (r.birth_year > survey_year) throw DataError("birth year after the survey year");
    if (r.birth_year < first) {
      ++est.dropped_out_of_window;
      continue;
    }
    kept.push_back(&r);
    wsum += r.weight;
  }
  if (kept.empty()) throw DataError("no births inside the retrospective window");
  const double wscale = static_cast<double>(kept.size()) / wsum;

  // Collapse to cells; remember each record's cell for the score sums.
  detail::FbhCells cells;
  cells.by_year.resize(kRetrospectiveYears);
  std::map<std::pair<int, FbhObservation>, std::size_t> cell_index;
  std::vector<std::map<std::size_t, std::size_t>> slot(kRetrospectiveYears);
  std::vector<std::size_t> rec_cell(kept.size());
  std::vector<double> rec_w(kept.size());
  bool any_death = false, any_survivor = false;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto o = discretize(*kept[i], opt.censoring);
    (o.kind == FbhOutcome::RightCensored ? any_survivor : any_death) = true;
    const int yi = kept[i]->birth_year - first;
    auto [it, fresh] = cell_index.try_emplace({yi, o}, cells.obs.size());
    if (fresh) cells.obs.push_back(o);
    rec_cell[i] = it->second;
    rec_w[i] = kept[i]->weight * wscale;
    auto& yslot = slot[yi];
    auto [s, added] = yslot.try_emplace(it->second, cells.by_year[yi].size());
    if (added) cells.by_year[yi].push_back({it->second, 0.0});
    cells.by_year[yi][s->second].second += rec_w[i];
  }
  if (!any_death || !any_survivor)
    throw IdentifiabilityError("survey needs at least one death and one survivor");

  // Pooled fit: one parameter vector for all years, used as start and fallback.
  std::vector<std::pair<std::size_t, double>> pooled;
  {
    std::map<std::size_t, double> acc;
    for (const auto& yc : cells.by_year)
      for (const auto& [c, w] : yc) acc[c] += w;
    pooled.assign(acc.begin(), acc.end());
  }
  std::vector<FbhObservation> pooled_obs;
  std::vector<double> pooled_w;
  for (const auto& [c, w] : pooled) {
    pooled_obs.push_back(cells.obs[c]);
    pooled_w.push_back(w);
  }
  auto pooled_fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g, Eigen::MatrixXd* H) {
    return detail::fbh_objective(pooled, cells.obs, family, x, g, H);
  };
  const auto pooled_fit =
      newton_maximize(pooled_fn, detail::fbh_start(family, pooled_obs, pooled_w), opt.newton);
  if (!pooled_fit.converged || pooled_fit.x.cwiseAbs().maxCoeff() > opt.max_abs_theta)
    throw IdentifiabilityError("pooled pseudo-likelihood fit did not converge");

  const Eigen::Index n = static_cast<Eigen::Index>(kRetrospectiveYears) * K;
  est.theta_hat.resize(n);
  est.identified.assign(kRetrospectiveYears, false);
  std::vector<Eigen::MatrixXd> info(kRetrospectiveYears);
  for (int y = 0; y < kRetrospectiveYears; ++y) {
    est.theta_hat.segment(y * K, K) = pooled_fit.x;
    const auto& yc = cells.by_year[y];
    const bool has_death = std::any_of(yc.begin(), yc.end(), [&](const auto& cw) {
      return cells.obs[cw.first].kind != FbhOutcome::RightCensored;
    });
    if (!has_death) continue;
    if (family == Family::PiecewiseExponential && !detail::pe_segments_informed(yc, cells.obs))
      continue;
    auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g, Eigen::MatrixXd* H) {
      return detail::fbh_objective(yc, cells.obs, family, x, g, H);
    };
    // the pooled optimum can sit where a log-hazard gradient vanishes, so the
    // year's own crude start is tried as well
    std::vector<FbhObservation> year_obs;
    std::vector<double> year_w;
    for (const auto& [c, w] : yc) {
      year_obs.push_back(cells.obs[c]);
      year_w.push_back(w);
    }
    std::optional<NewtonResult> best;
    for (const auto& start : {pooled_fit.x, detail::fbh_start(family, year_obs, year_w)}) {
      try {
        auto r = newton_maximize(fn, start, opt.newton);
        if (r.converged && (!best || r.value > best->value)) best = std::move(r);
      } catch (const NumericError&) {
      }
    }
    if (!best) continue;
    const NewtonResult& fit = *best;
    if (!fit.converged || fit.x.cwiseAbs().maxCoeff() > opt.max_abs_theta) continue;
    if (family == Family::PiecewiseExponential &&
        std::min(fit.x[1], fit.x[2]) - fit.x[0] < opt.min_log_increment)
      continue;
    Eigen::MatrixXd A = -fit.hessian;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * eig.eigenvalues().maxCoeff())) continue;
    est.theta_hat.segment(y * K, K) = fit.x;
    est.identified[y] = true;
    info[y] = A;
  }

  // Per-cell scores at the fitted parameters.
  std::vector<Eigen::VectorXd> cell_score(cells.obs.size());
  for (int y = 0; y < kRetrospectiveYears; ++y) {
    if (!est.identified[y]) continue;
    const auto d = seed_params<3>(est.params(y));
    for (const auto& [c, w] : cells.by_year[y]) {
      const auto l = fbh_loglik(d, cells.obs[c]);
      cell_score[c] = Eigen::Map<const Eigen::VectorXd>(l.g.data(), K);
    }
  }

  // Stratified between-cluster covariance of weighted score totals.
  std::map<std::string, std::map<std::string, Eigen::VectorXd>> totals;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    auto& s = totals[kept[i]->stratum][kept[i]->cluster];
    if (s.size() == 0) s = Eigen::VectorXd::Zero(n);
    const int y = kept[i]->birth_year - first;
    if (!est.identified[y]) continue;
    s.segment(y * K, K) += rec_w[i] * cell_score[rec_cell[i]];
  }
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [h, clusters] : totals) {
    const double nh = static_cast<double>(clusters.size());
    if (clusters.size() == 1) {
      const auto& s = clusters.begin()->second;
      B.noalias() += s * s.transpose();
      continue;
    }
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (const auto& [c, s] : clusters) mean += s;
    mean /= nh;
    for (const auto& [c, s] : clusters) {
      const Eigen::VectorXd dv = s - mean;
      B.noalias() += (nh / (nh - 1.0)) * dv * dv.transpose();
    }
  }

  Eigen::MatrixXd Ainv = Eigen::MatrixXd::Zero(n, n);
  for (int y = 0; y < kRetrospectiveYears; ++y)
    if (est.identified[y]) Ainv.block(y * K, y * K, K, K) = info[y].inverse();
  est.V_hat = Ainv * B * Ainv;
  est.V_hat = 0.5 * (est.V_hat + est.V_hat.transpose()).eval();
  for (int y = 0; y < kRetrospectiveYears; ++y) {
    if (est.identified[y]) continue;
    est.V_hat.middleRows(y * K, K).setZero();
    est.V_hat.middleCols(y * K, K).setZero();
    for (int k = 0; k < K; ++k) est.V_hat(y * K + k, y * K + k) = kUnidentifiedVariance;
  }
  return est;
}

// ---- file formats -------------------------------------------------------

struct FbhReadReport {
  std::vector<BirthRecord> records;
  std::map<std::string, int> survey_year;  // from the optional survey_year column
  int rejected_missing_age = 0;
  std::vector<std::string> messages;
};

inline FbhReadReport read_fbh_csv(const csv::Table& t) {
  t.require({"survey_id", "stratum", "cluster", "weight", "birth_year", "died", "age_months"});
  FbhReadReport rep;
  const bool has_sy = t.has("survey_year");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto where = t.where(r);
    const auto& age = t.cell(r, "age_months");
    if (age.empty() || age == "NA" || age == "na" || age == ".") {
      ++rep.rejected_missing_age;
      rep.messages.push_back(where + ": missing age, record rejected");
      continue;
    }
    BirthRecord b;
    b.survey_id = t.cell(r, "survey_id");
    b.stratum = t.cell(r, "stratum");
    b.cluster = t.cell(r, "cluster");
    b.weight = csv::to_double(t.cell(r, "weight"), where);
    b.birth_year = static_cast<int>(csv::to_long(t.cell(r, "birth_year"), where));
    b.status = csv::to_bool(t.cell(r, "died"), where) ? BirthStatus::DiedAt : BirthStatus::AliveAt;
    b.age = csv::to_double(age, where);
    if (!(b.weight > 0.0)) throw DataError(where + ": weight must be positive");
    if (!(b.age >= 0.0)) throw DataError(where + ": negative age");
    if (has_sy && !t.cell(r, "survey_year").empty()) {
      const int sy = static_cast<int>(csv::to_long(t.cell(r, "survey_year"), where));
      auto [it, fresh] = rep.survey_year.try_emplace(b.survey_id, sy);
      if (!fresh && it->second != sy)
        throw DataError(where + ": conflicting survey_year for survey " + b.survey_id);
    }
    rep.records.push_back(std::move(b));
  }
  return rep;
}

// Splits records by survey id, preserving first-seen order.
inline std::vector<std::vector<BirthRecord>> split_surveys(const std::vector<BirthRecord>& recs) {
  std::vector<std::vector<BirthRecord>> out;
  std::map<std::string, std::size_t> idx;
  for (const auto& r : recs) {
    auto [it, fresh] = idx.try_emplace(r.survey_id, out.size());
    if (fresh) out.emplace_back();
    out[it->second].push_back(r);
  }
  return out;
}

inline void write_estimates(std::ostream& theta_out, std::ostream& cov_out,
                            const std::vector<SurveyEstimate>& ests) {
  csv::Writer tw(theta_out), cw(cov_out);
  tw.row("survey_id", "family", "year", "param", "theta", "identified");
  cw.row("survey_id", "i", "j", "value");
  for (const auto& e : ests) {
    for (std::size_t y = 0; y < e.years.size(); ++y)
      for (int k = 0; k < e.K(); ++k)
        tw.row(e.survey_id, std::string(to_string(e.family)), e.years[y], k + 1,
               e.theta_hat[static_cast<Eigen::Index>(y) * e.K() + k],
               e.identified[y] ? 1 : 0);
    for (Eigen::Index i = 0; i < e.V_hat.rows(); ++i)
      for (Eigen::Index j = 0; j < e.V_hat.cols(); ++j)
        cw.row(e.survey_id, static_cast<long>(i), static_cast<long>(j), e.V_hat(i, j));
  }
}

inline std::vector<SurveyEstimate> read_estimates(const csv::Table& theta, const csv::Table& cov) {
  theta.require({"survey_id", "family", "year", "param", "theta", "identified"});
  cov.require({"survey_id", "i", "j", "value"});
  std::vector<SurveyEstimate> out;
  std::map<std::string, std::size_t> idx;
  std::vector<std::vector<std::tuple<int, int, double>>> entries;
  for (std::size_t r = 0; r < theta.rows(); ++r) {
    const auto where = theta.where(r);
    const auto& id = theta.cell(r, "survey_id");
    auto [it, fresh] = idx.try_emplace(id, out.size());
    if (fresh) {
      out.emplace_back();
      out.back().survey_id = id;
      out.back().family = parse_family(theta.cell(r, "family"));
      entries.emplace_back();
    }
    auto& e = out[it->second];
    if (parse_family(theta.cell(r, "family")) != e.family)
      throw FormatError(where + ": mixed families within one survey");
    const int year = static_cast<int>(csv::to_long(theta.cell(r, "year"), where));
    const int k = static_cast<int>(csv::to_long(theta.cell(r, "param"), where));
    if (k < 1 || k > e.K()) throw FormatError(where + ": parameter index out of range");
    if (e.years.empty() || e.years.back() != year) {
      if (!e.years.empty() && year != e.years.back() + 1)
        throw FormatError(where + ": estimate years must be contiguous and ordered");
      e.years.push_back(year);
      e.identified.push_back(csv::to_bool(theta.cell(r, "identified"), where));
    }
    entries[it->second].emplace_back(static_cast<int>(e.years.size()) - 1, k - 1,
                                     csv::to_double(theta.cell(r, "theta"), where));
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    auto& e = out[s];
    const Eigen::Index n = static_cast<Eigen::Index>(e.years.size()) * e.K();
    e.theta_hat = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (const auto& [y, k, v] : entries[s]) e.theta_hat[y * e.K() + k] = v;
    if (!e.theta_hat.allFinite()) throw FormatError("incomplete theta table for " + e.survey_id);
    e.V_hat = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  }
  for (std::size_t r = 0; r < cov.rows(); ++r) {
    const auto where = cov.where(r);
    const auto it = idx.find(cov.cell(r, "survey_id"));
    if (it == idx.end()) throw FormatError(where + ": covariance for unknown survey");
    auto& e = out[it->second];
    const long i = csv::to_long(cov.cell(r, "i"), where);
    const long j = csv::to_long(cov.cell(r, "j"), where);
    if (i < 0 || j < 0 || i >= e.V_hat.rows() || j >= e.V_hat.cols())
      throw FormatError(where + ": covariance index out of range");
    e.V_hat(i, j) = csv::to_double(cov.cell(r, "value"), where);
  }
  for (const auto& e : out)
    if (!e.V_hat.allFinite()) throw FormatError("incomplete covariance table for " + e.survey_id);
  return out;
}

}  // namespace childsurv
