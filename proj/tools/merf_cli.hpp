#pragma once

// Command-line front end: fit, estimate, mse and simulate subcommands.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage error, and the
// merf::ErrorKind values (3 schema, 4 parse, 5 empty input, 6 consistency,
// 7 config, 8 shape, 9 fit, 10 io).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "merf/merf.hpp"

namespace merf::cli {

inline constexpr int exit_unexpected = 1;
inline constexpr int exit_usage = 2;

using nlohmann::json;

/// Collects warnings for the run report while echoing them to `err`.
class WarningLog {
 public:
  explicit WarningLog(std::ostream& err)
      : guard_([this, &err](const std::string& msg) {
          err << "[merf] warning: " << msg << '\n';
          messages_.push_back(msg);
        }) {}

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  log::ScopedSink guard_;
};

class Report {
 public:
  Report(std::string command, std::uint64_t seed, unsigned threads) {
    doc_["command"] = std::move(command);
    doc_["seed"] = seed;
    doc_["threads"] = threads;
    doc_["versions"] = {{"merf", merf::version},
                        {"model_format", model_format_version},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                        {"compiler", __VERSION__}};
    doc_["timings"] = json::object();
    doc_["outputs"] = json::array();
  }

  json& operator[](const std::string& key) { return doc_[key]; }

  template <class F>
  auto phase(const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      doc_["timings"][name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      finish();
    } else {
      auto result = body();
      finish();
      return result;
    }
  }

  void output(const std::string& path) { doc_["outputs"].push_back(path); }

  void write(const std::string& path, const WarningLog& warnings) {
    doc_["warnings"] = warnings.messages();
    doc_["warning_count"] = warnings.messages().size();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_ = json::object();
};

struct Common {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out = ".";
  std::string config;
};

struct FitOptions {
  std::size_t trees = 500;
  std::size_t mtry = 1;
  std::size_t min_node_size = 5;
  double tolerance = 1e-5;
  std::size_t max_iter = 50;
  std::string seeding = "shared";
  std::size_t bc_B = 100;
  bool no_bias_correction = false;

  MerfConfig config(const Common& c) const {
    MerfConfig cfg;
    cfg.forest.n_trees = trees;
    cfg.forest.mtry = mtry;
    cfg.forest.min_node_size = min_node_size;
    cfg.forest.threads = c.threads;
    cfg.tolerance = tolerance;
    cfg.max_iter = max_iter;
    cfg.seeding = parse_iteration_seeding(seeding);
    cfg.bias_correction = !no_bias_correction;
    cfg.bias_correction_B = bc_B;
    cfg.seed = c.seed;
    cfg.validate();
    return cfg;
  }
};

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Root random seed")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores); never changes results")->capture_default_str();
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--config", c.config, "JSON file of option defaults keyed by long option name");
}

inline void add_fit_options(CLI::App* app, FitOptions& f) {
  app->add_option("--trees", f.trees, "Trees per forest")->capture_default_str();
  app->add_option("--mtry", f.mtry, "Split candidates per node")->capture_default_str();
  app->add_option("--min-node-size", f.min_node_size, "Nodes smaller than twice this are not split")->capture_default_str();
  app->add_option("--tolerance", f.tolerance, "Relative GLL change that ends the iteration")->capture_default_str();
  app->add_option("--max-iter", f.max_iter, "Iteration cap")->capture_default_str();
  app->add_option("--seeding", f.seeding, "Forest seeding across iterations: shared or per_iteration")
      ->capture_default_str();
  app->add_option("--bc-B", f.bc_B, "Replicates for the residual-variance bias correction")->capture_default_str();
  app->add_flag("--no-bias-correction", f.no_bias_correction, "Skip the residual-variance bias correction");
}

inline std::string output_path(const Common& c, const std::string& name) {
  std::filesystem::create_directories(c.out);
  return (std::filesystem::path(c.out) / name).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (auto t = csv::trim(item); !t.empty()) out.push_back(t);
  return out;
}

/// Inserts option defaults from a JSON config file right after the
/// subcommand name, so explicit flags (parsed later, last one wins) override
/// them. Unknown keys are config errors.
inline std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  auto it = std::find(args.begin(), args.end(), "--config");
  std::string path;
  if (it != args.end() && it + 1 != args.end()) path = *(it + 1);
  for (const auto& a : args)
    if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  if (path.empty()) return args;

  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
  std::vector<std::string> injected;
  for (const auto& [key, value] : doc.items()) {
    if (key == "config" || !sub->get_option_no_throw("--" + key))
      throw ConfigError("config key '" + key + "' is not an option of '" + args.front() + "'");
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back("--" + key);
    } else if (value.is_string()) {
      injected.push_back("--" + key);
      injected.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      injected.push_back("--" + key);
      injected.push_back(value.is_number_float() ? csv::format_double(value.get<double>()) : value.dump());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      injected.push_back("--" + key);
      injected.push_back(joined);
    } else {
      throw ConfigError("config key '" + key + "' has an unsupported value");
    }
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

inline std::vector<ScenarioSpec> load_scenarios(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return scenarios_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(path + " is not valid JSON: " + e.what());
  }
}

inline json trace_json(const ConvergenceTrace& t) {
  json j = {{"iterations", t.iterations}, {"converged", t.converged}};
  j["gll"] = json::array();
  for (double v : t.gll) j["gll"].push_back(v);
  j["relative_change"] = json::array();
  for (double v : t.relative_change) j["relative_change"].push_back(std::isnan(v) ? json(nullptr) : json(v));
  return j;
}

inline json variance_json(const MerfModel& m) {
  json j = {{"sigma2_v", m.vc.sigma2_v}, {"sigma2_eps", m.vc.sigma2_eps}};
  j["sigma2_bc"] = m.vc.sigma2_bc ? json(*m.vc.sigma2_bc) : json(nullptr);
  if (m.bias_correction) {
    j["K_hat"] = m.bias_correction->K_hat;
    j["bias_correction_B"] = m.bias_correction->B;
    j["floored"] = m.bias_correction->floored;
  }
  j["oob_fallbacks"] = oob_fallbacks(m.fixed_part);
  return j;
}

inline void print_trace(std::ostream& out, const MerfModel& m) {
  out << "iterations: " << m.trace.iterations << (m.trace.converged ? " (converged)" : " (NOT converged)") << '\n';
  out << std::setprecision(10);
  for (std::size_t k = 0; k < m.trace.gll.size(); ++k) {
    out << "  iter " << k + 1 << "  gll " << m.trace.gll[k];
    if (!std::isnan(m.trace.relative_change[k])) out << "  rel.change " << m.trace.relative_change[k];
    out << '\n';
  }
  out << "sigma2_v: " << m.vc.sigma2_v << "  sigma2_eps: " << m.vc.sigma2_eps;
  if (m.vc.sigma2_bc) out << "  sigma2_bc: " << *m.vc.sigma2_bc;
  out << '\n';
}

inline std::string estimates_text(const AreaEstimates& est) {
  std::ostringstream s;
  write_estimates_csv(s, est);
  return s.str();
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed effects random forests for small area means"};
  app.name("merf");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", merf::version);

  Common common;
  FitOptions fit;
  std::string survey_path, census_path, model_path, response = "y", area = "area";

  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a survey CSV");
  add_common(fit_cmd, common);
  add_fit_options(fit_cmd, fit);
  fit_cmd->add_option("--survey", survey_path, "Survey CSV")->required();
  fit_cmd->add_option("--response", response, "Response column")->capture_default_str();
  fit_cmd->add_option("--area", area, "Area column")->capture_default_str();
  std::string learner = "random_forest";
  fit_cmd->add_option("--learner", learner, "Fixed part: random_forest or linear")->capture_default_str();

  auto* est_cmd = app.add_subcommand("estimate", "Estimate area means on a census CSV");
  add_common(est_cmd, common);
  est_cmd->add_option("--model", model_path, "Model file written by fit")->required();
  est_cmd->add_option("--census", census_path, "Census CSV")->required();
  est_cmd->add_option("--area", area, "Area column")->capture_default_str();

  auto* mse_cmd = app.add_subcommand("mse", "Area means with bootstrap MSE estimates");
  add_common(mse_cmd, common);
  std::size_t B = 200, refit_trees = 0;
  mse_cmd->add_option("--model", model_path, "Model file written by fit")->required();
  mse_cmd->add_option("--survey", survey_path, "Survey CSV the model was fitted on")->required();
  mse_cmd->add_option("--census", census_path, "Census CSV")->required();
  mse_cmd->add_option("--response", response, "Response column")->capture_default_str();
  mse_cmd->add_option("--area", area, "Area column")->capture_default_str();
  mse_cmd->add_option("--B", B, "Bootstrap replicates")->capture_default_str();
  mse_cmd->add_option("--refit-trees", refit_trees, "Trees per refit forest (0 = as fitted)")->capture_default_str();

  auto* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo evaluation of the estimators");
  add_common(sim_cmd, common);
  add_fit_options(sim_cmd, fit);
  std::string mode = "model-based", scenario_name = "Normal", scenarios_file, methods = "merf,linear_baseline";
  std::string population_path, pattern_path;
  std::size_t M = 50, T = 0, mse_B = 0;
  sim_cmd->add_option("--mode", mode, "model-based or design-based")->capture_default_str();
  sim_cmd->add_option("--scenario", scenario_name, "Normal, Interaction, Normal-Par or Interaction-Par")
      ->capture_default_str();
  sim_cmd->add_option("--scenarios", scenarios_file, "Scenario definitions (JSON); built-ins if omitted");
  sim_cmd->add_option("-M,--replications", M, "Model-based replications")->capture_default_str();
  sim_cmd->add_option("-T,--samples", T, "Design-based samples (defaults to -M)");
  sim_cmd->add_option("--methods", methods, "Comma-separated: merf, linear_baseline")->capture_default_str();
  sim_cmd->add_option("--mse-B", mse_B, "Bootstrap replicates per replication (0 = no MSE)")->capture_default_str();
  sim_cmd->add_option("--refit-trees", refit_trees, "Trees per bootstrap refit forest (0 = --trees)")
      ->capture_default_str();
  sim_cmd->add_option("--population", population_path, "Design-based: population CSV with response");
  sim_cmd->add_option("--pattern", pattern_path, "Design-based: CSV with columns area,n");
  sim_cmd->add_option("--response", response, "Design-based response column")->capture_default_str();
  sim_cmd->add_option("--area", area, "Design-based area column")->capture_default_str();

  WarningLog warnings(err);
  try {
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_usage;
  } catch (const Error& e) {
    err << "merf: " << e.what() << '\n';
    return e.exit_code();
  }

  try {
    out << "seed: " << common.seed << '\n';
    if (*fit_cmd) {
      Report report("fit", common.seed, common.threads);
      const MerfConfig cfg = fit.config(common);
      report["config"] = merf_config_json(cfg);
      report["config"]["learner"] = learner;
      report["inputs"] = {{"survey", survey_path}, {"response", response}, {"area", area}};
      const FixedPartKind kind = parse_fixed_part_kind(learner);
      const SurveyDataset survey = report.phase("load", [&] { return load_survey(survey_path, response, area); });
      const MerfModel model = report.phase("fit", [&] { return fit_merf(survey, kind, cfg); });
      const std::string path = output_path(common, "model.json");
      report.phase("save", [&] { save_model(model, path); });
      report.output(path);
      report["trace"] = trace_json(model.trace);
      report["variance"] = variance_json(model);
      report["data"] = {{"n", survey.n()}, {"p", survey.p()}, {"areas", model.areas.size()}};
      print_trace(out, model);
      const std::string report_path = output_path(common, "fit_report.json");
      report.write(report_path, warnings);
      out << "model: " << path << '\n';
    } else if (*est_cmd) {
      Report report("estimate", common.seed, common.threads);
      report["inputs"] = {{"model", model_path}, {"census", census_path}, {"area", area}};
      const MerfModel model = report.phase("load_model", [&] { return load_model(model_path); });
      const CensusDataset census = report.phase("load_census", [&] { return load_census(census_path, area, model.schema); });
      const AreaIndex index = index_from_model(model, census);
      const AreaEstimates est = report.phase("estimate", [&] { return estimate_means(model, census, index); });
      const std::string path = output_path(common, "estimates.csv");
      write_text(path, estimates_text(est));
      report.output(path);
      report["areas"] = {{"total", index.size()}, {"in_sample", index.sampled()}};
      report.write(output_path(common, "estimate_report.json"), warnings);
      out << "areas: " << index.size() << " (" << index.sampled() << " in sample)\nestimates: " << path << '\n';
    } else if (*mse_cmd) {
      Report report("mse", common.seed, common.threads);
      report["inputs"] = {{"model", model_path}, {"survey", survey_path}, {"census", census_path},
                          {"response", response}, {"area", area}};
      const MerfModel model = report.phase("load_model", [&] { return load_model(model_path); });
      const SurveyDataset survey = report.phase("load_survey", [&] { return load_survey(survey_path, response, area); });
      if (survey.columns != model.columns || survey.n() != model.oob.size())
        throw ConsistencyError("survey does not match the data the model was fitted on");
      const CensusDataset census = report.phase("load_census", [&] { return load_census(census_path, area, model.schema); });
      const AreaIndex index = index_from_model(model, census);
      AreaEstimates est = report.phase("estimate", [&] { return estimate_means(model, census, index); });
      RebConfig rc;
      rc.B = B;
      rc.seed = derive_seed(common.seed, {stream::mse});
      rc.threads = common.threads;
      if (refit_trees > 0) {
        rc.refit_forest = model.config.forest;
        rc.refit_forest->n_trees = refit_trees;
      }
      const BootstrapResult boot = report.phase("bootstrap", [&] { return bootstrap_mse(model, survey, census, index, rc); });
      est.attach_mse(boot.mse);
      const std::string path = output_path(common, "estimates.csv");
      write_text(path, estimates_text(est));
      report.output(path);
      report["bootstrap"] = {{"B", boot.B},
                             {"completed", boot.completed},
                             {"failures", boot.failures},
                             {"refit_trees", rc.refit_forest ? rc.refit_forest->n_trees : model.config.forest.n_trees},
                             {"refit_override", rc.refit_forest.has_value()}};
      report.write(output_path(common, "mse_report.json"), warnings);
      out << "bootstrap: " << boot.completed << " of " << boot.B << " replicates\nestimates: " << path << '\n';
    } else if (*sim_cmd) {
      Report report("simulate", common.seed, common.threads);
      MerfConfig cfg = fit.config(common);
      std::optional<RebConfig> reb;
      if (mse_B > 0) {
        reb.emplace();
        reb->B = mse_B;
        if (refit_trees > 0) {
          reb->refit_forest = cfg.forest;
          reb->refit_forest->n_trees = refit_trees;
        }
      }
      const std::vector<Method> method_list = methods_by_name(split_list(methods), cfg, reb);
      report["config"] = merf_config_json(cfg);
      report["config"]["methods"] = split_list(methods);
      report["config"]["mode"] = mode;
      report["config"]["mse_B"] = mse_B;
      report["config"]["refit_trees"] = refit_trees;
      SimConfig sc{common.seed, common.threads};
      SimResult result;
      if (mode == "model-based") {
        const ScenarioSpec spec = scenarios_file.empty() ? scenario(scenario_name)
                                                         : find_scenario(load_scenarios(scenarios_file), scenario_name);
        report["config"]["scenario"] = spec.name;
        report["config"]["M"] = M;
        result = report.phase("simulate", [&] { return run_model_based(spec, M, method_list, sc); });
      } else if (mode == "design-based") {
        if (population_path.empty() || pattern_path.empty())
          throw ConfigError("design-based mode needs --population and --pattern");
        const SurveyDataset pop = load_survey(population_path, response, area);
        CensusDataset census{pop.X, pop.area, pop.columns};
        const csv::Table pt = csv::read_file(pattern_path);
        const auto pa = pt.column("area"), pn = pt.column("n");
        if (!pa || !pn) throw SchemaError(pattern_path + " needs columns 'area' and 'n'");
        std::vector<std::pair<std::string, std::size_t>> pattern;
        for (const auto& row : pt.rows) {
          const auto v = csv::parse_double(row[*pn]);
          if (!v || *v < 0 || *v != std::floor(*v)) throw ParseError(pattern_path + ": invalid sample size '" + row[*pn] + "'");
          pattern.emplace_back(row[*pa], static_cast<std::size_t>(*v));
        }
        const std::size_t samples = T > 0 ? T : M;
        report["config"]["T"] = samples;
        report["inputs"] = {{"population", population_path}, {"pattern", pattern_path}};
        result = report.phase("simulate", [&] { return run_design_based(census, pop.y, pattern, samples, method_list, sc); });
      } else {
        throw ConfigError("unknown mode '" + mode + "' (model-based or design-based)");
      }
      const auto tables = compute_metrics(result);
      std::ostringstream tidy, metric;
      write_tidy_csv(tidy, result);
      write_metric_csv(metric, tables);
      const std::string tidy_path = output_path(common, "simulation.csv");
      const std::string metric_path = output_path(common, "metrics.csv");
      write_text(tidy_path, tidy.str());
      write_text(metric_path, metric.str());
      report.output(tidy_path);
      report.output(metric_path);
      json summary = json::array();
      out << std::fixed << std::setprecision(3);
      for (const auto& t : tables) {
        const MethodRuns& runs = result.method(t.method);
        const Summary rb = t.summary(Metric::rb), rr = t.summary(Metric::rrmse);
        json s = {{"method", t.method},
                  {"runs", t.runs},
                  {"failures", runs.failures},
                  {"convergence_rate", convergence_rate(runs)},
                  {"RB_mean", rb.mean},
                  {"RB_median", rb.median},
                  {"RRMSE_mean", rr.mean},
                  {"RRMSE_median", rr.median}};
        out << t.method << ": RB mean " << 100 * rb.mean << "% median " << 100 * rb.median << "%, RRMSE mean "
            << 100 * rr.mean << "% median " << 100 * rr.median << "%, converged " << 100 * convergence_rate(runs)
            << "%";
        if (runs.has_mse()) {
          const Summary bias = t.summary(Metric::rb_rmse), dev = t.summary(Metric::rrmse_rmse);
          s["RB-RMSE_mean"] = bias.mean;
          s["RB-RMSE_median"] = bias.median;
          s["RRMSE-RMSE_mean"] = dev.mean;
          s["RRMSE-RMSE_median"] = dev.median;
          out << ", RB-RMSE median " << 100 * bias.median << "%";
        }
        out << '\n';
        summary.push_back(std::move(s));
      }
      report["summary"] = std::move(summary);
      report.write(output_path(common, "simulate_report.json"), warnings);
      out << "results: " << tidy_path << "\nmetrics: " << metric_path << '\n';
    }
    return 0;
  } catch (const Error& e) {
    err << "merf: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "merf: io error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::io);
  } catch (const std::exception& e) {
    err << "merf: unexpected error: " << e.what() << '\n';
    return exit_unexpected;
  }
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

}  // namespace merf::cli
