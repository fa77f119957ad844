// childsurv: command-line front end.
//
//   childsurv validate     --data DIR
//   childsurv fbh-estimate --fbh FILE --out DIR
//   childsurv fit          --data DIR --out DIR
//   childsurv summarize    --fit FILE --measure MEASURE... [--out FILE]
//   childsurv yearly-mle   --data DIR [--out FILE]
//   childsurv sbh-study    (--scenarios DIR | --synthetic N) --out DIR
//
// Common flags: --family, --config, --seed, --draws. On failure a JSON error
// report goes to stdout and the exit status is 1 (2 for usage errors).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "childsurv/pipeline.hpp"

namespace cs = childsurv;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string family;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> draws;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--family", c.family, "survival family")
      ->check(CLI::IsMember({"loglogistic", "piecewise-exp"}));
  app->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "posterior sampling seed");
  app->add_option("--draws", c.draws, "number of posterior draws");
}

cs::RunConfig resolve(const Common& c) {
  cs::RunConfig cfg;
  if (!c.config.empty()) cfg = cs::load_config(c.config);
  if (!c.family.empty()) cfg.set_family(cs::parse_family(c.family));
  if (c.seed) cfg.seed = *c.seed;
  if (c.draws) cfg.draws = *c.draws;
  cfg.validate();
  return cfg;
}

void print(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << '\n'; }

// CSV text to a file, or stdout for an empty path
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  cs::write_text(path, text);
}

int cmd_validate(const std::string& data, const Common& c) {
  const auto cfg = resolve(c);
  const auto ds = cs::load_dataset(data, cs::load_options(cfg));
  const auto adj = cs::adjusted_surveys(ds, cfg.hiv_adjust, cfg.hiv_skip);
  nlohmann::ordered_json j;
  j["status"] = "ok";
  j["command"] = "validate";
  j["data"] = cs::inventory(ds);
  auto notices = ds.notices;
  notices.insert(notices.end(), adj.notices.begin(), adj.notices.end());
  j["warnings"] = notices;
  print(j);
  return 0;
}

int cmd_fbh(const std::string& fbh, const std::string& out, const Common& c) {
  const auto cfg = resolve(c);
  const auto rep = cs::read_fbh_csv(cs::read_table(fbh));
  std::vector<cs::SurveyEstimate> ests;
  nlohmann::ordered_json surveys = nlohmann::ordered_json::array();
  for (const auto& recs : cs::split_surveys(rep.records)) {
    cs::FbhFitOptions fo;
    fo.censoring = cfg.censoring;
    if (const auto sy = rep.survey_year.find(recs.front().survey_id); sy != rep.survey_year.end())
      fo.survey_year = sy->second;
    ests.push_back(cs::fit_survey(recs, cfg.family, fo));
    const auto& e = ests.back();
    int identified = 0;
    for (bool b : e.identified) identified += b;
    surveys.push_back({{"survey_id", e.survey_id},
                       {"records", recs.size()},
                       {"first_year", e.first_year()},
                       {"last_year", e.last_year()},
                       {"identified_years", identified}});
  }
  fs::create_directories(out);
  std::ostringstream theta, cov;
  cs::write_estimates(theta, cov, ests);
  cs::write_text(fs::path(out) / cs::files::fbh_theta, theta.str());
  cs::write_text(fs::path(out) / cs::files::fbh_cov, cov.str());
  nlohmann::ordered_json j;
  j["status"] = "ok";
  j["command"] = "fbh-estimate";
  j["family"] = std::string(cs::to_string(cfg.family));
  j["surveys"] = surveys;
  j["rejected_records"] = rep.rejected_missing_age;
  j["warnings"] = rep.messages;
  print(j);
  return 0;
}

int cmd_fit(const std::string& data, const std::string& out, const Common& c) {
  const auto run = cs::run_fit(data, resolve(c), out);
  print(run.manifest);
  return 0;
}

int cmd_summarize(const std::string& fit_path, const std::vector<std::string>& measures,
                  const std::vector<double>& quantiles, bool raw, const std::string& out) {
  const auto fit = cs::load_fit(fit_path);
  std::ostringstream o;
  bool header = true;
  for (const auto& m : measures) {
    auto req = cs::parse_request(m);
    if (!quantiles.empty()) req.quantiles = quantiles;
    req.raw = raw;
    std::ostringstream part;
    cs::write_series_csv(cs::summarize(fit, req), part);
    auto text = part.str();
    if (!header) text.erase(0, text.find('\n') + 1);
    header = false;
    o << text;
  }
  emit(out, o.str());
  return 0;
}

int cmd_yearly(const std::string& data, const std::string& out, const Common& c) {
  const auto cfg = resolve(c);
  const auto ds = cs::load_dataset(data, cs::load_options(cfg));
  std::set<int> years;
  for (const auto& v : ds.vr) years.insert(v.year);
  std::ostringstream o;
  cs::csv::Writer w(o);
  w.row("year", "family", "nmr", "imr", "u5mr", "status");
  for (int y : years) {
    try {
      const auto p = cs::yearly_vr_mle(ds, y, cfg.family).params();
      const double s = cfg.raw ? 1.0 : 1000.0;
      w.row(y, std::string(cs::to_string(cfg.family)), s * cs::death_prob(p, 1.0), s * cs::death_prob(p, 12.0),
            s * cs::death_prob(p, 60.0), "ok");
    } catch (const std::exception& e) {
      w.row(y, std::string(cs::to_string(cfg.family)), "", "", "", cs::error_kind(e) + ": " + e.what());
    }
  }
  emit(out, o.str());
  return 0;
}

int cmd_sbh(const std::string& dir, int synthetic, std::uint64_t seed, bool mid_year, const std::string& out) {
  std::vector<std::string> notices;
  std::vector<cs::sbh::DemographicInputs> scenarios;
  if (!dir.empty()) scenarios = cs::read_scenario_dir(dir, notices);
  for (const auto& spec : cs::sbh::random_scenarios(synthetic, seed))
    scenarios.push_back(cs::sbh::stylized_scenario(spec));
  cs::sbh::StudyOptions opt;
  if (mid_year) opt.exposure = cs::sbh::ChildExposure::MidYear;
  print(cs::run_sbh_study(scenarios, notices, opt, out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Child survival estimation: survey, VR and SBH data to NMR, IMR and U5MR"};
  app.require_subcommand(1);

  Common common;
  std::string data, out, fbh, fit_path, scenarios;
  std::vector<std::string> measures{"nmr", "imr", "u5mr"};
  std::vector<double> quantiles;
  bool raw = false, mid_year = false;
  int synthetic = 0;
  std::uint64_t study_seed = 7;

  auto* validate = app.add_subcommand("validate", "parse and check a country data directory");
  validate->add_option("--data", data, "country data directory")->required()->check(CLI::ExistingDirectory);
  add_common(validate, common);

  auto* fbh_cmd = app.add_subcommand("fbh-estimate", "per-survey pseudo-likelihood estimates from fbh.csv");
  fbh_cmd->add_option("--fbh", fbh, "birth history CSV")->required()->check(CLI::ExistingFile);
  fbh_cmd->add_option("--out", out, "output directory")->required();
  add_common(fbh_cmd, common);

  auto* fit = app.add_subcommand("fit", "fit a country and write the posterior and default series");
  fit->add_option("--data", data, "country data directory")->required()->check(CLI::ExistingDirectory);
  fit->add_option("--out", out, "output directory")->required();
  add_common(fit, common);

  auto* summ = app.add_subcommand("summarize", "posterior quantiles of survival functionals");
  summ->add_option("--fit", fit_path, "fit.json from the fit command")->required()->check(CLI::ExistingFile);
  summ->add_option("--measure", measures,
                   "nmr, imr, u5mr, q:A, qbetween:A:N, cond:A, rate:A:N, curve:A1;A2;... (ages in months)");
  summ->add_option("--quantiles", quantiles, "quantile levels");
  summ->add_flag("--raw", raw, "probabilities instead of per 1000");
  summ->add_option("--out", out, "output CSV (default stdout)");

  auto* yearly = app.add_subcommand("yearly-mle", "independent maximum likelihood fit of each VR year");
  yearly->add_option("--data", data, "country data directory")->required()->check(CLI::ExistingDirectory);
  yearly->add_option("--out", out, "output CSV (default stdout)");
  add_common(yearly, common);

  auto* study = app.add_subcommand("sbh-study", "Brass/Trussell error calibration on synthetic censuses");
  study->add_option("--scenarios", scenarios, "directory of scenario CSVs")->check(CLI::ExistingDirectory);
  study->add_option("--synthetic", synthetic, "add N random stylized trajectories")->check(CLI::NonNegativeNumber);
  study->add_option("--synthetic-seed", study_seed, "seed for the random trajectories");
  study->add_flag("--mid-year", mid_year, "children exposed half a year in the birth year");
  study->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto* sub = app.get_subcommands().front();
  try {
    if (sub == validate) return cmd_validate(data, common);
    if (sub == fbh_cmd) return cmd_fbh(fbh, out, common);
    if (sub == fit) return cmd_fit(data, out, common);
    if (sub == summ) return cmd_summarize(fit_path, measures, quantiles, raw, out);
    if (sub == yearly) return cmd_yearly(data, out, common);
    if (scenarios.empty() && synthetic == 0) throw cs::DataError("sbh-study needs --scenarios or --synthetic");
    return cmd_sbh(scenarios, synthetic, study_seed, mid_year, out);
  } catch (const std::exception& e) {
    print(cs::error_report(e, sub->get_name()));
    return 1;
  }
}
