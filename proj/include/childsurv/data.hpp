#pragma once

// Country dataset: VR counts and exposures, pre-processed rates, summary
// birth histories, survey estimates and HIV ratios, with file ingestion.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "childsurv/adjust.hpp"
#include "childsurv/csv.hpp"
#include "childsurv/fbh.hpp"
#include "childsurv/survival.hpp"

namespace childsurv {

// ---- VR age bands -------------------------------------------------------

enum class VrTag { Neonatal, PostNeonatal, Infant, Child1_4, Under5, SingleYear, Custom };

struct VrBand {
  VrTag tag = VrTag::Custom;
  AgeBand range;

  bool operator==(const VrBand&) const = default;
};

inline VrBand band_from_range(AgeBand r) {
  validate_band(r);
  auto is = [&](double a, double n) { return r.start == a && r.width == n; };
  if (is(0, 1)) return {VrTag::Neonatal, r};
  if (is(1, 11)) return {VrTag::PostNeonatal, r};
  if (is(0, 12)) return {VrTag::Infant, r};
  if (is(12, 48)) return {VrTag::Child1_4, r};
  if (is(0, 60)) return {VrTag::Under5, r};
  for (int k = 1; k <= 4; ++k)
    if (is(12.0 * k, 12)) return {VrTag::SingleYear, r};
  return {VrTag::Custom, r};
}

// neonatal, postneonatal, infant, child1_4, under5, year1..year4, or "a:n" in months
inline VrBand parse_vr_band(const std::string& s) {
  if (s == "neonatal") return band_from_range({0, 1});
  if (s == "postneonatal") return band_from_range({1, 11});
  if (s == "infant") return band_from_range({0, 12});
  if (s == "child1_4") return band_from_range({12, 48});
  if (s == "under5") return band_from_range({0, 60});
  if (s.size() == 5 && s.compare(0, 4, "year") == 0 && s[4] >= '1' && s[4] <= '4')
    return band_from_range({12.0 * (s[4] - '0'), 12});
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const double a = csv::to_double(s.substr(0, colon), "band '" + s + "'");
    const double n = csv::to_double(s.substr(colon + 1), "band '" + s + "'");
    try {
      return band_from_range({a, n});
    } catch (const DomainError& e) {
      throw FormatError("band '" + s + "': " + e.what());
    }
  }
  throw FormatError("unknown VR band '" + s + "'");
}

inline std::string to_string(const VrBand& b) {
  switch (b.tag) {
    case VrTag::Neonatal: return "neonatal";
    case VrTag::PostNeonatal: return "postneonatal";
    case VrTag::Infant: return "infant";
    case VrTag::Child1_4: return "child1_4";
    case VrTag::Under5: return "under5";
    case VrTag::SingleYear: return "year" + std::to_string(static_cast<int>(b.range.start / 12));
    case VrTag::Custom: break;
  }
  return csv::fmt(b.range.start) + ":" + csv::fmt(b.range.width);
}

struct VrCountRecord {
  int year = 0;
  VrBand band;
  long deaths = 0;
  double sampling_fraction = 1.0;  // 1 for complete VR, < 1 for sample VR

  bool operator==(const VrCountRecord&) const = default;
};

enum class VrKind { Neonatal, PostNeonatal, Band };

// One canonical, non-overlapping VR count with its resolved exposure.
struct VrObservation {
  int year = 0;
  VrKind kind = VrKind::Band;
  AgeBand band;
  long deaths = 0;
  double f = 1.0;
  // Neonatal: births. PostNeonatal with the infant identity: births and the
  // 0-12 month population. Otherwise: population of the band.
  double births = 0.0;
  double population = 0.0;
  bool infant_identity = false;

  bool operator==(const VrObservation&) const = default;
};

// ---- exposures ----------------------------------------------------------

struct ExposureSeries {
  std::map<int, double> births;
  std::map<std::pair<int, AgeBand>, double> population;  // mid-year, by year and band

  bool operator==(const ExposureSeries&) const = default;

  std::optional<double> births_at(int year) const {
    const auto it = births.find(year);
    if (it == births.end()) return std::nullopt;
    return it->second;
  }

  // Exact band, a tiling by disjoint supplied bands, or a supplied container
  // band minus a tiling of its complement.
  std::optional<double> population_at(int year, const AgeBand& band) const {
    std::vector<std::pair<AgeBand, double>> avail;
    for (auto it = population.lower_bound({year, AgeBand{-1.0, 0.0}});
         it != population.end() && it->first.first == year; ++it)
      avail.emplace_back(it->first.second, it->second);
    for (const auto& [b, p] : avail)
      if (b == band) return p;
    if (auto t = tile(avail, band.start, band.end(), 0)) return t;
    for (const auto& [c, p] : avail) {
      if (c == band || c.start > band.start || c.end() < band.end()) continue;
      const auto left = tile(avail, c.start, band.start, 0);
      const auto right = tile(avail, band.end(), c.end(), 0);
      if (left && right && p - *left - *right > 0.0) return p - *left - *right;
    }
    return std::nullopt;
  }

 private:
  static std::optional<double> tile(const std::vector<std::pair<AgeBand, double>>& avail,
                                    double lo, double hi, int depth) {
    if (std::abs(hi - lo) < 1e-9) return 0.0;
    if (depth > 16) return std::nullopt;
    for (const auto& [b, p] : avail) {
      if (std::abs(b.start - lo) > 1e-9 || b.end() > hi + 1e-9) continue;
      if (auto rest = tile(avail, b.end(), hi, depth + 1)) return p + *rest;
    }
    return std::nullopt;
  }
};

// ---- VR canonicalisation ------------------------------------------------

struct CanonicalVr {
  std::vector<VrObservation> observations;
  std::vector<std::string> notices;
};

namespace detail {

inline int vr_priority(const VrBand& b) {
  switch (b.tag) {
    case VrTag::Neonatal: return 0;
    case VrTag::PostNeonatal: return 1;
    case VrTag::SingleYear: return 2;
    case VrTag::Child1_4: return 3;
    case VrTag::Infant: return 4;
    case VrTag::Custom: return 5;
    case VrTag::Under5: return 6;
  }
  return 7;
}

inline bool contains(const AgeBand& outer, const AgeBand& inner) {
  return outer.start <= inner.start + 1e-12 && inner.end() <= outer.end() + 1e-12;
}

struct VrPart {
  AgeBand band;
  long deaths;
  double f;
};

}  // namespace detail

// Per year, a maximal non-overlapping decomposition. Bands are taken in the
// order Neonatal, PostNeonatal, single years, Child1_4, Infant, custom,
// Under5; a band overlapping earlier picks is an aggregate, checked against
// the parts it contains and reduced to its remainder when that is one
// contiguous interval with the same sampling fraction.
inline CanonicalVr canonicalize_vr(std::vector<VrCountRecord> records) {
  CanonicalVr out;
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.year != b.year) return a.year < b.year;
    const int pa = detail::vr_priority(a.band), pb = detail::vr_priority(b.band);
    if (pa != pb) return pa < pb;
    if (a.band.range.width != b.band.range.width) return a.band.range.width < b.band.range.width;
    return a.band.range.start < b.band.range.start;
  });
  std::size_t i = 0;
  while (i < records.size()) {
    const int year = records[i].year;
    std::size_t j = i;
    while (j < records.size() && records[j].year == year) ++j;
    const std::string yr = "VR " + std::to_string(year) + ": ";
    std::vector<detail::VrPart> picked;
    std::vector<const VrCountRecord*> seen;
    for (std::size_t r = i; r < j; ++r) {
      const auto& rec = records[r];
      if (rec.deaths < 0) throw DataError(yr + "negative death count");
      if (!(rec.sampling_fraction > 0.0 && rec.sampling_fraction <= 1.0))
        throw DataError(yr + "sampling fraction must lie in (0, 1]");
      const AgeBand A = rec.band.range;
      const std::string name = to_string(rec.band);
      bool dup = false;
      for (const auto* s : seen) {
        if (s->band.range == A) {
          if (s->deaths != rec.deaths || s->sampling_fraction != rec.sampling_fraction)
            throw InconsistencyError(yr + "conflicting records for band " + name);
          dup = true;
        }
      }
      if (dup) {
        out.notices.push_back(yr + "duplicate " + name + " record dropped");
        continue;
      }
      seen.push_back(&rec);

      long inside = 0;
      bool partial = false, same_f = true;
      std::vector<AgeBand> covered;
      for (const auto& p : picked) {
        if (!bands_overlap(p.band, A)) continue;
        if (detail::contains(A, p.band)) {
          inside += p.deaths;
          covered.push_back(p.band);
          same_f = same_f && p.f == rec.sampling_fraction;
        } else {
          partial = true;
        }
      }
      if (covered.empty() && !partial) {
        picked.push_back({A, rec.deaths, rec.sampling_fraction});
        continue;
      }
      if (inside > rec.deaths)
        throw InconsistencyError(yr + "parts exceed aggregate " + name + " (" +
                                 std::to_string(inside) + " > " + std::to_string(rec.deaths) + ")");
      if (partial) {
        out.notices.push_back(yr + name + " straddles other bands, dropped");
        continue;
      }
      std::sort(covered.begin(), covered.end());
      std::vector<AgeBand> gaps;
      double at = A.start;
      for (const auto& c : covered) {
        if (c.start > at + 1e-12) gaps.push_back({at, c.start - at});
        at = std::max(at, c.end());
      }
      if (A.end() > at + 1e-12) gaps.push_back({at, A.end() - at});
      if (gaps.empty()) {
        if (inside != rec.deaths)
          throw InconsistencyError(yr + "parts do not add up to aggregate " + name);
        continue;  // redundant and consistent
      }
      if (gaps.size() > 1) {
        out.notices.push_back(yr + name + " remainder is not contiguous, dropped");
        continue;
      }
      if (!same_f) {
        out.notices.push_back(yr + name + " has a different sampling fraction from its parts, dropped");
        continue;
      }
      picked.push_back({gaps[0], rec.deaths - inside, rec.sampling_fraction});
    }
    // every supplied aggregate bounds the output bands it contains
    for (std::size_t r = i; r < j; ++r) {
      long inside = 0;
      for (const auto& p : picked)
        if (detail::contains(records[r].band.range, p.band)) inside += p.deaths;
      if (inside > records[r].deaths)
        throw InconsistencyError(yr + "parts exceed aggregate " + to_string(records[r].band));
    }
    std::sort(picked.begin(), picked.end(),
              [](const auto& a, const auto& b) { return a.band.start < b.band.start; });
    for (const auto& p : picked) {
      VrObservation o;
      o.year = year;
      o.band = p.band;
      o.deaths = p.deaths;
      o.f = p.f;
      const auto tag = band_from_range(p.band).tag;
      o.kind = tag == VrTag::Neonatal       ? VrKind::Neonatal
               : tag == VrTag::PostNeonatal ? VrKind::PostNeonatal
                                            : VrKind::Band;
      out.observations.push_back(o);
    }
    i = j;
  }
  return out;
}

// Fills in exposures; DataError when a band has none.
inline void resolve_exposures(std::vector<VrObservation>& obs, const ExposureSeries& ex) {
  for (auto& o : obs) {
    const std::string where = "VR " + std::to_string(o.year) + " " +
                              to_string(band_from_range(o.band)) + ": ";
    if (o.kind == VrKind::Neonatal) {
      const auto B = ex.births_at(o.year);
      if (!B || !(*B > 0.0)) throw DataError(where + "no births exposure");
      o.births = *B;
      continue;
    }
    if (o.kind == VrKind::PostNeonatal) {
      const auto B = ex.births_at(o.year);
      const auto P = ex.population_at(o.year, {0, 12});
      if (B && P && *B > 0.0 && *P > 0.0) {
        o.births = *B;
        o.population = *P;
        o.infant_identity = true;
        continue;
      }
    }
    const auto P = ex.population_at(o.year, o.band);
    if (!P || !(*P > 0.0)) throw DataError(where + "no population exposure");
    o.population = *P;
  }
}

// ---- rates --------------------------------------------------------------

enum class RateKind { FbhOther, SbhCensus, SbhSurvey, VrReport, Other };

inline std::string to_string(RateKind k) {
  switch (k) {
    case RateKind::FbhOther: return "fbh_other";
    case RateKind::SbhCensus: return "sbh_census";
    case RateKind::SbhSurvey: return "sbh_survey";
    case RateKind::VrReport: return "vr_report";
    case RateKind::Other: return "other";
  }
  return "other";
}

inline RateKind parse_rate_kind(const std::string& s) {
  for (auto k : {RateKind::FbhOther, RateKind::SbhCensus, RateKind::SbhSurvey, RateKind::VrReport,
                 RateKind::Other})
    if (to_string(k) == s) return k;
  throw FormatError("unknown rate kind '" + s + "'");
}

// logit(q(age)) ~ N(logit(1 - S(age)), logit_var); records with a partner
// form a bivariate pair with covariance logit_cov.
struct RateRecord {
  std::string source;
  int year = 0;
  double age = 60.0;  // months
  double q = 0.0;
  double logit_var = 0.0;
  RateKind kind = RateKind::Other;
  int partner = -1;  // index of the paired record in the dataset's rate list
  double logit_cov = 0.0;

  bool operator==(const RateRecord&) const = default;
};

inline double delta_logit_variance(double q, double v) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("q must lie in (0, 1)");
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("variance must be positive");
  const double d = q * (1.0 - q);
  return v / (d * d);
}

inline double natural_variance(double q, double logit_var) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("q must lie in (0, 1)");
  if (!(logit_var > 0.0) || !std::isfinite(logit_var)) throw DomainError("variance must be positive");
  const double d = q * (1.0 - q);
  return logit_var * d * d;
}

// ---- summary birth histories --------------------------------------------

struct SbhRecord {
  std::string source;
  double ref_year = 0.0;
  std::string mother_group;  // "20-24" ... "45-49"
  double q1 = 0.0;
  double q5 = 0.0;
  bool is_census = true;

  bool operator==(const SbhRecord&) const = default;
};

struct SbhSe {
  double se_logit_imr;
  double se_logit_u5mr;
  double cov;
};

using SbhSeTable = std::map<std::string, SbhSe>;

// Standard errors of census SBH estimates on the logit scale by mother's age.
inline const SbhSeTable& default_sbh_se_table() {
  static const SbhSeTable t{
      {"20-24", {0.066, 0.078, 0.0039}}, {"25-29", {0.068, 0.072, 0.0035}},
      {"30-34", {0.090, 0.091, 0.0066}}, {"35-39", {0.139, 0.154, 0.0191}},
      {"40-44", {0.164, 0.182, 0.0272}}, {"45-49", {0.172, 0.186, 0.0290}},
  };
  return t;
}

inline constexpr double kSurveySbhCoV = 0.1;

// Accepts "20-24", "20–24" (en dash) or "20_24".
inline std::string normalize_mother_group(std::string g) {
  for (const std::string dash : {"\xE2\x80\x93", "_"}) {
    const auto p = g.find(dash);
    if (p != std::string::npos) g.replace(p, dash.size(), "-");
  }
  return g;
}

struct SbhConversion {
  std::vector<RateRecord> rates;
  std::vector<std::string> notices;
};

// Each record yields an (IMR, U5MR) pair at ages 12 and 60 months, dated at
// the floor of its reference year; indices in `partner` are local to the
// returned list.
inline SbhConversion sbh_to_rate(const std::vector<SbhRecord>& records,
                                 const SbhSeTable& table = default_sbh_se_table()) {
  SbhConversion out;
  for (const auto& r : records) {
    const std::string g = normalize_mother_group(r.mother_group);
    const std::string who = "SBH " + r.source + " " + g + ": ";
    if (g == "15-19") {
      out.notices.push_back(who + "mothers aged 15-19 are not used");
      continue;
    }
    const auto it = table.find(g);
    if (it == table.end()) throw FormatError(who + "unknown mother age group");
    if (!(r.q1 > 0.0 && r.q1 < 1.0 && r.q5 > 0.0 && r.q5 < 1.0))
      throw DataError(who + "q1 and q5 must lie in (0, 1)");
    if (r.q1 > r.q5) {
      out.notices.push_back(who + "q1 > q5, record excluded");
      continue;
    }
    RateRecord a, b;
    a.source = b.source = r.source;
    a.year = b.year = static_cast<int>(std::floor(r.ref_year));
    a.age = 12.0;
    b.age = 60.0;
    a.q = r.q1;
    b.q = r.q5;
    if (r.is_census) {
      a.kind = b.kind = RateKind::SbhCensus;
      a.logit_var = it->second.se_logit_imr * it->second.se_logit_imr;
      b.logit_var = it->second.se_logit_u5mr * it->second.se_logit_u5mr;
      a.logit_cov = b.logit_cov = it->second.cov;
    } else {
      a.kind = b.kind = RateKind::SbhSurvey;
      a.logit_var = delta_logit_variance(r.q1, std::pow(kSurveySbhCoV * r.q1, 2));
      b.logit_var = delta_logit_variance(r.q5, std::pow(kSurveySbhCoV * r.q5, 2));
    }
    const int n = static_cast<int>(out.rates.size());
    a.partner = n + 1;
    b.partner = n;
    out.rates.push_back(a);
    out.rates.push_back(b);
  }
  return out;
}

// ---- dataset ------------------------------------------------------------

struct DatasetInputs {
  std::string country;
  int first_year = 0;
  int last_year = 0;
  std::vector<SurveyEstimate> surveys;
  std::vector<VrCountRecord> vr;
  ExposureSeries exposure;
  std::vector<RateRecord> rates;  // logit-scale variances already attached, no SBH
  std::vector<SbhRecord> sbh;
  std::map<std::string, std::map<int, double>> hiv;  // survey -> year -> r
  SbhSeTable sbh_table = default_sbh_se_table();
  std::vector<std::string> notices;
};

struct CountryDataset {
  std::string country;
  int first_year = 0;
  int last_year = 0;
  std::vector<SurveyEstimate> surveys;  // restricted to [first_year, last_year]
  std::vector<VrCountRecord> vr_raw;
  ExposureSeries exposure;
  std::vector<VrObservation> vr;
  std::vector<RateRecord> rates;  // other rates first, then SBH pairs
  std::size_t sbh_rates_begin = 0;
  std::vector<SbhRecord> sbh;
  std::map<std::string, std::map<int, double>> hiv;
  std::vector<std::string> notices;

  int T() const { return last_year - first_year + 1; }
  bool in_range(int year) const { return year >= first_year && year <= last_year; }
  int index(int year) const { return year - first_year; }
  bool empty() const { return surveys.empty() && vr.empty() && rates.empty(); }
};

inline bool same_estimate(const SurveyEstimate& a, const SurveyEstimate& b) {
  return a.survey_id == b.survey_id && a.family == b.family && a.years == b.years &&
         a.identified == b.identified && a.theta_hat.size() == b.theta_hat.size() &&
         a.theta_hat == b.theta_hat && a.V_hat.rows() == b.V_hat.rows() && a.V_hat == b.V_hat;
}

// Equality of everything except notices.
inline bool operator==(const CountryDataset& a, const CountryDataset& b) {
  if (a.surveys.size() != b.surveys.size()) return false;
  for (std::size_t i = 0; i < a.surveys.size(); ++i)
    if (!same_estimate(a.surveys[i], b.surveys[i])) return false;
  return a.country == b.country && a.first_year == b.first_year && a.last_year == b.last_year &&
         a.vr_raw == b.vr_raw && a.exposure == b.exposure && a.vr == b.vr && a.rates == b.rates &&
         a.sbh_rates_begin == b.sbh_rates_begin && a.sbh == b.sbh && a.hiv == b.hiv;
}

// Marginal of a survey estimate over the years inside [first, last].
inline std::optional<SurveyEstimate> restrict_estimate(const SurveyEstimate& e, int first,
                                                       int last) {
  std::vector<std::size_t> keep;
  for (std::size_t y = 0; y < e.years.size(); ++y)
    if (e.years[y] >= first && e.years[y] <= last) keep.push_back(y);
  if (keep.empty()) return std::nullopt;
  if (keep.size() == e.years.size()) return e;
  const int K = e.K();
  const auto n = static_cast<Eigen::Index>(keep.size()) * K;
  SurveyEstimate r = e;
  r.years.clear();
  r.identified.clear();
  r.theta_hat.resize(n);
  r.V_hat.resize(n, n);
  std::vector<Eigen::Index> idx;
  for (auto y : keep) {
    r.years.push_back(e.years[y]);
    r.identified.push_back(e.identified[y]);
    for (int k = 0; k < K; ++k) idx.push_back(static_cast<Eigen::Index>(y) * K + k);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    r.theta_hat[i] = e.theta_hat[idx[i]];
    for (Eigen::Index j = 0; j < n; ++j) r.V_hat(i, j) = e.V_hat(idx[i], idx[j]);
  }
  return r;
}

inline CountryDataset build_dataset(DatasetInputs in) {
  if (in.last_year - in.first_year + 1 < 3)
    throw DataError("estimation period must cover at least 3 years");
  CountryDataset ds;
  ds.country = in.country;
  ds.first_year = in.first_year;
  ds.last_year = in.last_year;
  ds.notices = std::move(in.notices);
  auto drop = [&](const std::string& what, int year) {
    ds.notices.push_back(what + " for " + std::to_string(year) +
                         " lies outside the estimation period, dropped");
  };

  for (auto& e : in.surveys) {
    auto r = restrict_estimate(e, ds.first_year, ds.last_year);
    if (!r) {
      ds.notices.push_back("survey " + e.survey_id + " lies outside the estimation period, dropped");
      continue;
    }
    if (r->years.size() != e.years.size())
      ds.notices.push_back("survey " + e.survey_id + ": using the " +
                           std::to_string(r->years.size()) + " years inside the estimation period");
    ds.surveys.push_back(std::move(*r));
  }

  for (const auto& v : in.vr) {
    if (!ds.in_range(v.year)) {
      drop("VR " + to_string(v.band), v.year);
      continue;
    }
    ds.vr_raw.push_back(v);
  }
  ds.exposure = std::move(in.exposure);
  auto canon = canonicalize_vr(ds.vr_raw);
  ds.vr = std::move(canon.observations);
  ds.notices.insert(ds.notices.end(), canon.notices.begin(), canon.notices.end());
  resolve_exposures(ds.vr, ds.exposure);

  for (const auto& r : in.rates) {
    if (!ds.in_range(r.year)) {
      drop("rate " + r.source, r.year);
      continue;
    }
    if (!(r.q > 0.0 && r.q < 1.0)) throw DataError("rate " + r.source + ": q must lie in (0, 1)");
    if (!(r.logit_var > 0.0) || !std::isfinite(r.logit_var))
      throw DataError("rate " + r.source + ": variance must be positive");
    if (!(r.age > 0.0 && r.age <= kTerminalAge))
      throw DataError("rate " + r.source + ": age must lie in (0, 60]");
    RateRecord c = r;
    c.partner = -1;
    c.logit_cov = 0.0;
    ds.rates.push_back(c);
  }
  ds.sbh_rates_begin = ds.rates.size();
  ds.sbh = std::move(in.sbh);
  auto conv = sbh_to_rate(ds.sbh, in.sbh_table);
  ds.notices.insert(ds.notices.end(), conv.notices.begin(), conv.notices.end());
  for (std::size_t i = 0; i < conv.rates.size(); i += 2) {
    if (!ds.in_range(conv.rates[i].year)) {
      drop("SBH " + conv.rates[i].source, conv.rates[i].year);
      continue;
    }
    const int n = static_cast<int>(ds.rates.size());
    for (int h = 0; h < 2; ++h) {
      RateRecord c = conv.rates[i + h];
      c.partner = n + 1 - h;
      ds.rates.push_back(c);
    }
  }
  for (const auto& [survey, years] : in.hiv)
    for (const auto& [year, r] : years) check_ratio(r);
  ds.hiv = std::move(in.hiv);
  return ds;
}

// Survey estimates with the missing-mothers adjustment applied, for surveys
// listed in the HIV ratio table and not skipped.
struct AdjustedSurveys {
  std::vector<SurveyEstimate> surveys;
  std::vector<std::string> notices;
};

inline AdjustedSurveys adjusted_surveys(const CountryDataset& ds, bool enabled = true,
                                        const std::set<std::string>& skip = {}) {
  AdjustedSurveys out;
  for (const auto& s : ds.surveys) {
    const auto it = ds.hiv.find(s.survey_id);
    if (!enabled || skip.count(s.survey_id) || it == ds.hiv.end()) {
      out.surveys.push_back(s);
      continue;
    }
    auto adj = apply_adjustment(s, it->second);
    if (!adj.defaulted_years.empty())
      out.notices.push_back("survey " + s.survey_id + ": no HIV ratio for " +
                            std::to_string(adj.defaulted_years.size()) + " years, r = 1 used");
    out.surveys.push_back(std::move(adj.estimate));
  }
  return out;
}

// ---- file formats -------------------------------------------------------

namespace files {
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* vr = "vr.csv";
inline constexpr const char* exposure = "exposure.csv";
inline constexpr const char* rates = "rates.csv";
inline constexpr const char* sbh = "sbh.csv";
inline constexpr const char* fbh = "fbh.csv";
inline constexpr const char* fbh_theta = "fbh_theta.csv";
inline constexpr const char* fbh_cov = "fbh_cov.csv";
inline constexpr const char* hiv = "hiv_adjust.csv";
}  // namespace files

inline std::vector<VrCountRecord> read_vr_csv(const csv::Table& t) {
  t.require({"year", "band", "deaths", "sampling_fraction"});
  std::vector<VrCountRecord> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    VrCountRecord v;
    v.year = static_cast<int>(csv::to_long(t.cell(r, "year"), w));
    v.band = parse_vr_band(t.cell(r, "band"));
    v.deaths = csv::to_long(t.cell(r, "deaths"), w);
    const auto& f = t.cell(r, "sampling_fraction");
    v.sampling_fraction = f.empty() ? 1.0 : csv::to_double(f, w);
    if (v.deaths < 0) throw DataError(w + ": negative deaths");
    if (!(v.sampling_fraction > 0.0 && v.sampling_fraction <= 1.0))
      throw DataError(w + ": sampling_fraction must lie in (0, 1]");
    out.push_back(v);
  }
  return out;
}

// One row per year for births (pop_band empty) and one per population band.
inline ExposureSeries read_exposure_csv(const csv::Table& t) {
  t.require({"year", "births", "pop_band", "pop"});
  ExposureSeries ex;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    const int year = static_cast<int>(csv::to_long(t.cell(r, "year"), w));
    if (!t.cell(r, "births").empty()) {
      const double B = csv::to_double(t.cell(r, "births"), w);
      if (!(B > 0.0)) throw DataError(w + ": births must be positive");
      auto [it, fresh] = ex.births.try_emplace(year, B);
      if (!fresh && it->second != B) throw DataError(w + ": conflicting births");
    }
    if (!t.cell(r, "pop_band").empty()) {
      const AgeBand band = parse_vr_band(t.cell(r, "pop_band")).range;
      const double P = csv::to_double(t.cell(r, "pop"), w);
      if (!(P > 0.0)) throw DataError(w + ": population must be positive");
      auto [it, fresh] = ex.population.try_emplace({year, band}, P);
      if (!fresh && it->second != P) throw DataError(w + ": conflicting population");
    }
  }
  return ex;
}

struct RateReadReport {
  std::vector<RateRecord> rates;
  std::vector<std::string> notices;
};

// se_scale: logit (SE of logit q), natural (SE of q), cov (SE / q),
// logit_var (variance of logit q), poisson (se = births or population
// denominator; empty takes births from the exposure series).
inline RateReadReport read_rates_csv(const csv::Table& t, const ExposureSeries& ex) {
  t.require({"source", "year", "age_months", "q", "se", "se_scale", "kind"});
  RateReadReport out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    RateRecord x;
    x.source = t.cell(r, "source");
    x.year = static_cast<int>(csv::to_long(t.cell(r, "year"), w));
    x.age = csv::to_double(t.cell(r, "age_months"), w);
    x.q = csv::to_double(t.cell(r, "q"), w);
    x.kind = parse_rate_kind(t.cell(r, "kind"));
    if (!(x.q > 0.0 && x.q < 1.0)) throw DataError(w + ": q must lie in (0, 1)");
    const auto& scale = t.cell(r, "se_scale");
    const auto& se_s = t.cell(r, "se");
    if (scale == "poisson") {
      double denom = 0.0;
      if (!se_s.empty()) {
        denom = csv::to_double(se_s, w);
      } else if (const auto B = ex.births_at(x.year)) {
        denom = *B;
      } else {
        out.notices.push_back(w + ": no denominator for the Poisson standard error, rejected");
        continue;
      }
      if (!(denom > 0.0)) throw DataError(w + ": Poisson denominator must be positive");
      x.logit_var = delta_logit_variance(x.q, x.q * (1.0 - x.q) / denom);
    } else {
      const double se = csv::to_double(se_s, w);
      if (!(se > 0.0)) throw DataError(w + ": se must be positive");
      if (scale == "logit") {
        x.logit_var = se * se;
      } else if (scale == "logit_var") {
        x.logit_var = se;
      } else if (scale == "natural") {
        x.logit_var = delta_logit_variance(x.q, se * se);
      } else if (scale == "cov") {
        x.logit_var = delta_logit_variance(x.q, std::pow(se * x.q, 2));
      } else {
        throw FormatError(w + ": unknown se_scale '" + scale + "'");
      }
    }
    out.rates.push_back(x);
  }
  return out;
}

inline std::vector<SbhRecord> read_sbh_csv(const csv::Table& t) {
  t.require({"source", "ref_year", "mother_group", "q1", "q5", "is_census"});
  std::vector<SbhRecord> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    SbhRecord s;
    s.source = t.cell(r, "source");
    s.ref_year = csv::to_double(t.cell(r, "ref_year"), w);
    s.mother_group = normalize_mother_group(t.cell(r, "mother_group"));
    s.q1 = csv::to_double(t.cell(r, "q1"), w);
    s.q5 = csv::to_double(t.cell(r, "q5"), w);
    s.is_census = csv::to_bool(t.cell(r, "is_census"), w);
    out.push_back(s);
  }
  return out;
}

inline std::map<std::string, std::map<int, double>> read_hiv_csv(const csv::Table& t) {
  t.require({"survey", "year", "ratio_r"});
  std::map<std::string, std::map<int, double>> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto w = t.where(r);
    const double v = csv::to_double(t.cell(r, "ratio_r"), w);
    if (!(v > 0.0)) throw DataError(w + ": ratio_r must be positive");
    auto [it, fresh] = out[t.cell(r, "survey")].try_emplace(
        static_cast<int>(csv::to_long(t.cell(r, "year"), w)), v);
    if (!fresh && it->second != v) throw DataError(w + ": conflicting ratio");
  }
  return out;
}

struct LoadOptions {
  Family family = Family::LogLogistic;
  FbhFitOptions fbh;
  SbhSeTable sbh_table = default_sbh_se_table();
};

inline csv::Table read_table(const std::filesystem::path& p) { return csv::read_file(p.string()); }

inline CountryDataset load_dataset(const std::filesystem::path& dir, const LoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  const auto mpath = dir / files::manifest;
  std::ifstream min(mpath);
  if (!min) throw DataError("missing " + mpath.string());
  nlohmann::json m;
  try {
    min >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  DatasetInputs in;
  try {
    in.country = m.at("country").get<std::string>();
    in.first_year = m.at("first_year").get<int>();
    in.last_year = m.at("last_year").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  in.sbh_table = opt.sbh_table;
  auto exists = [&](const char* f) { return fs::exists(dir / f); };

  if (exists(files::exposure)) in.exposure = read_exposure_csv(read_table(dir / files::exposure));
  if (exists(files::vr)) {
    in.vr = read_vr_csv(read_table(dir / files::vr));
    if (!in.vr.empty() && !exists(files::exposure))
      throw DataError("VR counts present but " + (dir / files::exposure).string() + " is missing");
  }
  if (exists(files::rates)) {
    auto rr = read_rates_csv(read_table(dir / files::rates), in.exposure);
    in.rates = std::move(rr.rates);
    in.notices.insert(in.notices.end(), rr.notices.begin(), rr.notices.end());
  }
  if (exists(files::sbh)) in.sbh = read_sbh_csv(read_table(dir / files::sbh));
  if (exists(files::hiv)) in.hiv = read_hiv_csv(read_table(dir / files::hiv));

  bool have_estimates = false;
  if (exists(files::fbh_theta) && exists(files::fbh_cov)) {
    auto ests = read_estimates(read_table(dir / files::fbh_theta), read_table(dir / files::fbh_cov));
    const bool match = std::all_of(ests.begin(), ests.end(),
                                   [&](const auto& e) { return e.family == opt.family; });
    if (match) {
      in.surveys = std::move(ests);
      have_estimates = true;
    } else {
      in.notices.push_back("stored survey estimates are for another family, ignored");
    }
  }
  if (!have_estimates && exists(files::fbh)) {
    auto rep = read_fbh_csv(read_table(dir / files::fbh));
    in.notices.insert(in.notices.end(), rep.messages.begin(), rep.messages.end());
    for (const auto& recs : split_surveys(rep.records)) {
      FbhFitOptions fo = opt.fbh;
      const auto sy = rep.survey_year.find(recs.front().survey_id);
      if (sy != rep.survey_year.end()) fo.survey_year = sy->second;
      in.surveys.push_back(fit_survey(recs, opt.family, fo));
    }
  }
  return build_dataset(std::move(in));
}

// Writes a dataset that load_dataset reads back to an equal dataset.
inline void write_dataset(const CountryDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream o(dir / name);
    if (!o) throw DataError("cannot write " + (dir / name).string());
    return o;
  };
  {
    nlohmann::ordered_json m;
    m["country"] = ds.country;
    m["first_year"] = ds.first_year;
    m["last_year"] = ds.last_year;
    auto o = open(files::manifest);
    o << m.dump(2) << '\n';
  }
  {
    auto o = open(files::vr);
    csv::Writer w(o);
    w.row("year", "band", "deaths", "sampling_fraction");
    for (const auto& v : ds.vr_raw) w.row(v.year, to_string(v.band), v.deaths, v.sampling_fraction);
  }
  {
    auto o = open(files::exposure);
    csv::Writer w(o);
    w.row("year", "births", "pop_band", "pop");
    for (const auto& [y, B] : ds.exposure.births) w.row(y, B, "", "");
    for (const auto& [k, P] : ds.exposure.population)
      w.row(k.first, "", to_string(band_from_range(k.second)), P);
  }
  {
    auto o = open(files::rates);
    csv::Writer w(o);
    w.row("source", "year", "age_months", "q", "se", "se_scale", "kind");
    for (std::size_t i = 0; i < ds.sbh_rates_begin; ++i) {
      const auto& r = ds.rates[i];
      w.row(r.source, r.year, r.age, r.q, r.logit_var, "logit_var", to_string(r.kind));
    }
  }
  {
    auto o = open(files::sbh);
    csv::Writer w(o);
    w.row("source", "ref_year", "mother_group", "q1", "q5", "is_census");
    for (const auto& s : ds.sbh) w.row(s.source, s.ref_year, s.mother_group, s.q1, s.q5, s.is_census ? 1 : 0);
  }
  {
    auto t = open(files::fbh_theta);
    auto c = open(files::fbh_cov);
    write_estimates(t, c, ds.surveys);
  }
  {
    auto o = open(files::hiv);
    csv::Writer w(o);
    w.row("survey", "year", "ratio_r");
    for (const auto& [s, years] : ds.hiv)
      for (const auto& [y, r] : years) w.row(s, y, r);
  }
}

}  // namespace childsurv
