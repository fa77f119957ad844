#pragma once

// Run configuration from a "key = value" file. '#' starts a comment; lists
// are comma separated. Unknown keys are an error.
//
//   family               loglogistic | piecewise-exp
//   draws, seed          posterior sampling
//   prior.intercept_mean per-parameter prior means (K values)
//   prior.intercept_sd, prior.slope_sd
//   pc.rw2.u, pc.rw2.alpha, pc.iid.u, pc.iid.alpha, pc.vr.u, pc.vr.alpha
//   fbh.heaped_age, fbh.heaping_low, fbh.heaping_high, fbh.whole_month_intervals
//   hiv.adjust           true | false
//   hiv.skip_surveys     survey ids left unadjusted
//   quantiles            summary quantiles
//   raw                  report probabilities instead of per 1000

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "childsurv/csv.hpp"
#include "childsurv/error.hpp"
#include "childsurv/fbh.hpp"
#include "childsurv/model.hpp"

namespace childsurv {

struct RunConfig {
  Family family = Family::LogLogistic;
  int draws = 1000;
  std::uint64_t seed = 1;
  PriorSettings prior = PriorSettings::defaults(Family::LogLogistic);
  CensoringSpec censoring;
  bool hiv_adjust = true;
  std::set<std::string> hiv_skip;
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  bool raw = false;

  // switches family and resets the family-specific prior means
  void set_family(Family f) {
    family = f;
    prior.family = f;
    prior.intercept_mean = PriorSettings::defaults(f).intercept_mean;
  }

  void validate() const {
    if (draws < 1) throw DomainError("draws must be at least 1");
    prior.validate();
    censoring.validate();
    for (double q : quantiles)
      if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantiles must lie in [0, 1]");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["family"] = std::string(to_string(family));
    j["draws"] = draws;
    j["seed"] = seed;
    j["prior.intercept_mean"] =
        std::vector<double>(prior.intercept_mean.begin(), prior.intercept_mean.begin() + num_params(family));
    j["prior.intercept_sd"] = prior.intercept_sd;
    j["prior.slope_sd"] = prior.slope_sd;
    j["pc.rw2"] = {prior.rw2.U, prior.rw2.alpha};
    j["pc.iid"] = {prior.iid.U, prior.iid.alpha};
    j["pc.vr"] = {prior.vr.U, prior.vr.alpha};
    j["fbh.heaping"] = {censoring.low, censoring.heaped_age, censoring.high};
    j["fbh.whole_month_intervals"] = censoring.whole_month_intervals;
    j["hiv.adjust"] = hiv_adjust;
    j["hiv.skip_surveys"] = std::vector<std::string>(hiv_skip.begin(), hiv_skip.end());
    j["quantiles"] = quantiles;
    j["raw"] = raw;
    return j;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = csv::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& source, RunConfig cfg = {}) {
  struct Entry {
    std::string key, v, where;
  };
  std::vector<Entry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (csv::trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw FormatError(where + ": expected key = value");
    entries.push_back({csv::trim(line.substr(0, eq)), csv::trim(line.substr(eq + 1)), where});
  }
  // family first so that explicit prior means are not overwritten
  for (const auto& e : entries)
    if (e.key == "family") cfg.set_family(parse_family(e.v));

  for (const auto& [key, v, where] : entries) {
    const auto num = [&] { return csv::to_double(v, where); };
    if (key == "family") continue;
    if (key == "draws") cfg.draws = static_cast<int>(csv::to_long(v, where));
    else if (key == "seed") {
      const long s = csv::to_long(v, where);
      if (s < 0) throw FormatError(where + ": seed must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "prior.intercept_mean") {
      const auto items = detail::split_list(v);
      if (static_cast<int>(items.size()) != num_params(cfg.family))
        throw FormatError(where + ": prior.intercept_mean needs " + std::to_string(num_params(cfg.family)) +
                          " values for " + std::string(to_string(cfg.family)));
      for (std::size_t i = 0; i < items.size(); ++i) cfg.prior.intercept_mean[i] = csv::to_double(items[i], where);
    } else if (key == "prior.intercept_sd") cfg.prior.intercept_sd = num();
    else if (key == "prior.slope_sd") cfg.prior.slope_sd = num();
    else if (key == "pc.rw2.u") cfg.prior.rw2.U = num();
    else if (key == "pc.rw2.alpha") cfg.prior.rw2.alpha = num();
    else if (key == "pc.iid.u") cfg.prior.iid.U = num();
    else if (key == "pc.iid.alpha") cfg.prior.iid.alpha = num();
    else if (key == "pc.vr.u") cfg.prior.vr.U = num();
    else if (key == "pc.vr.alpha") cfg.prior.vr.alpha = num();
    else if (key == "fbh.heaped_age") cfg.censoring.heaped_age = num();
    else if (key == "fbh.heaping_low") cfg.censoring.low = num();
    else if (key == "fbh.heaping_high") cfg.censoring.high = num();
    else if (key == "fbh.whole_month_intervals") cfg.censoring.whole_month_intervals = csv::to_bool(v, where);
    else if (key == "hiv.adjust") cfg.hiv_adjust = csv::to_bool(v, where);
    else if (key == "hiv.skip_surveys") {
      const auto items = detail::split_list(v);
      cfg.hiv_skip = std::set<std::string>(items.begin(), items.end());
    } else if (key == "quantiles") {
      cfg.quantiles.clear();
      for (const auto& q : detail::split_list(v)) cfg.quantiles.push_back(csv::to_double(q, where));
    } else if (key == "raw") cfg.raw = csv::to_bool(v, where);
    else throw FormatError(where + ": unknown key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  return parse_config(in, path, std::move(base));
}

}  // namespace childsurv
