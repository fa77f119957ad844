#pragma once

// End-to-end runs behind the command line: fit a country directory, write
// summary series, run the SBH calibration study. Every output is a pure
// function of the inputs and the seed; the manifest carries no timestamps.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "childsurv/config.hpp"
#include "childsurv/data.hpp"
#include "childsurv/inference.hpp"
#include "childsurv/life_tables.hpp"
#include "childsurv/model.hpp"
#include "childsurv/sbh.hpp"
#include "childsurv/summary.hpp"

namespace childsurv {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

inline std::string file_hash(const std::filesystem::path& p) { return hex64(fnv1a64(read_bytes(p))); }

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const InconsistencyError*>(&e)) return "InconsistencyError";
  if (dynamic_cast<const DataError*>(&e)) return "DataError";
  if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
  if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
  if (dynamic_cast<const ConvergenceError*>(&e)) return "ConvergenceError";
  if (dynamic_cast<const IdentifiabilityError*>(&e)) return "IdentifiabilityError";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  return "Error";
}

inline nlohmann::ordered_json error_report(const std::exception& e, const std::string& command) {
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["command"] = command;
  j["error"] = error_kind(e);
  j["message"] = e.what();
  return j;
}

inline LoadOptions load_options(const RunConfig& cfg) {
  LoadOptions lo;
  lo.family = cfg.family;
  lo.fbh.censoring = cfg.censoring;
  return lo;
}

inline nlohmann::ordered_json inventory(const CountryDataset& ds) {
  nlohmann::ordered_json j;
  j["country"] = ds.country;
  j["first_year"] = ds.first_year;
  j["last_year"] = ds.last_year;
  std::vector<std::string> ids;
  for (const auto& s : ds.surveys) ids.push_back(s.survey_id);
  j["fbh_surveys"] = ids;
  j["vr_observations"] = ds.vr.size();
  j["rates"] = ds.sbh_rates_begin;
  j["sbh_records"] = ds.sbh.size();
  j["hiv_adjusted_surveys"] = ds.hiv.size();
  return j;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream o(p, std::ios::binary);
  if (!o) throw DataError("cannot write " + p.string());
  o << s;
}

inline nlohmann::ordered_json diagnostics_json(const FitDiagnostics& d) {
  nlohmann::ordered_json j;
  j["inner_iterations"] = d.inner_iterations;
  j["inner_grad_norm"] = d.inner_grad_norm;
  j["outer_iterations"] = d.outer_iterations;
  j["outer_evaluations"] = d.outer_evaluations;
  j["outer_grad_norm"] = d.outer_grad_norm;
  j["outer_converged"] = d.outer_converged;
  j["log_marginal"] = d.log_marginal;
  return j;
}

struct FitRun {
  PosteriorFit fit;
  nlohmann::ordered_json manifest;
};

inline const std::vector<std::pair<std::string, SummaryRequest>>& default_series() {
  static const std::vector<std::pair<std::string, SummaryRequest>> s{
      {"nmr.csv", SummaryRequest::q(1.0)}, {"imr.csv", SummaryRequest::q(12.0)}, {"u5mr.csv", SummaryRequest::q(60.0)}};
  return s;
}

// Fits a dataset already in memory and writes fit.json, the default series
// and manifest.json into out.
inline FitRun fit_dataset(const CountryDataset& ds, const RunConfig& cfg, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (ds.empty()) throw DataError("dataset " + ds.country + " has no observations");
  fs::create_directories(out);
  const auto adj = adjusted_surveys(ds, cfg.hiv_adjust, cfg.hiv_skip);
  const Model model(ds, adj.surveys, cfg.prior);
  FitOptions fo;
  fo.draws = cfg.draws;
  fo.seed = cfg.seed;

  FitRun run;
  run.fit = fit_country(model, ds, fo);
  run.fit.settings = cfg.to_json();
  std::vector<std::string> warnings = ds.notices;
  warnings.insert(warnings.end(), adj.notices.begin(), adj.notices.end());
  warnings.insert(warnings.end(), run.fit.notices.begin(), run.fit.notices.end());
  run.fit.notices = warnings;
  save_fit(run.fit, (out / "fit.json").string());

  nlohmann::ordered_json outputs;
  outputs["fit.json"] = file_hash(out / "fit.json");
  for (const auto& [file, base] : default_series()) {
    auto req = base;
    req.quantiles = cfg.quantiles;
    req.raw = cfg.raw;
    std::ostringstream o;
    write_series_csv(summarize(run.fit, req), o);
    write_text(out / file, o.str());
    outputs[file] = hex64(fnv1a64(o.str()));
  }

  auto& m = run.manifest;
  m["status"] = "ok";
  m["command"] = "fit";
  m["tool_version"] = kToolVersion;
  m["fit_format"] = {PosteriorFit::kFormat, PosteriorFit::kVersion};
  m["sbh_tables_version"] = tables::kVersion;
  m["config"] = cfg.to_json();
  m["seed"] = cfg.seed;
  m["data"] = inventory(ds);
  m["diagnostics"] = diagnostics_json(run.fit.diagnostics);
  m["ordering_violations"] = ordering_violations(run.fit);
  m["warnings"] = warnings;
  m["outputs"] = outputs;
  write_text(out / "manifest.json", m.dump(2) + "\n");
  return run;
}

inline FitRun run_fit(const std::filesystem::path& data_dir, const RunConfig& cfg,
                      const std::filesystem::path& out) {
  cfg.validate();
  return fit_dataset(load_dataset(data_dir, load_options(cfg)), cfg, out);
}

// Scenario CSVs in a directory, by file name.
inline std::vector<sbh::DemographicInputs> read_scenario_dir(const std::filesystem::path& dir,
                                                             std::vector<std::string>& notices) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("scenario directory " + dir.string() + " not found");
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<sbh::DemographicInputs> out;
  for (const auto& p : paths) {
    try {
      out.push_back(sbh::read_scenario(p.string()));
    } catch (const std::exception& e) {
      notices.push_back(p.filename().string() + ": " + e.what());
    }
  }
  return out;
}

// Writes calibration.csv, residuals.csv and manifest.json.
inline nlohmann::ordered_json run_sbh_study(const std::vector<sbh::DemographicInputs>& scenarios,
                                            std::vector<std::string> notices, const sbh::StudyOptions& opt,
                                            const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  const auto study = sbh::run_study(scenarios, opt);
  notices.insert(notices.end(), study.notices.begin(), study.notices.end());
  std::ostringstream table, res;
  sbh::write_calibration(study.table, table);
  sbh::write_residuals(study.residuals, res);
  write_text(out / "calibration.csv", table.str());
  write_text(out / "residuals.csv", res.str());

  nlohmann::ordered_json m;
  m["status"] = "ok";
  m["command"] = "sbh-study";
  m["tool_version"] = kToolVersion;
  m["sbh_tables_version"] = tables::kVersion;
  std::vector<std::string> names;
  for (const auto& s : scenarios) names.push_back(s.name);
  m["scenarios"] = names;
  m["census_years"] = opt.census_years;
  m["exposure"] = opt.exposure == sbh::ChildExposure::FullYears ? "full-years" : "mid-year";
  m["residuals"] = study.residuals.size();
  m["warnings"] = notices;
  m["outputs"] = {{"calibration.csv", hex64(fnv1a64(table.str()))},
                  {"residuals.csv", hex64(fnv1a64(res.str()))}};
  write_text(out / "manifest.json", m.dump(2) + "\n");
  return m;
}

}  // namespace childsurv
