#pragma once

// Monte-Carlo simulation engine: synthetic populations for the four
// model-based scenarios, stratified sampling, pluggable estimation methods,
// and the model-based and fixed-population (design-based) protocols.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "merf/area_estimator.hpp"
#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/log.hpp"
#include "merf/merf_fit.hpp"
#include "merf/metrics.hpp"
#include "merf/parallel.hpp"
#include "merf/random.hpp"
#include "merf/reb_bootstrap.hpp"

namespace merf {

enum class MeanModel { linear, interaction };
enum class ErrorLaw { normal, pareto };

/// Per-area sample sizes of the model-based design: 50 areas, 6 to 49 units,
/// median 21, total 1229.
inline std::vector<std::size_t> canonical_sample_sizes() {
  return {6,  7,  8,  9,  10, 10, 11, 12, 12, 13, 13, 14, 15, 15, 16, 16, 17, 17, 18, 18, 19, 19, 20, 20, 21,
          21, 22, 23, 24, 26, 27, 28, 29, 30, 31, 33, 34, 35, 36, 37, 38, 40, 41, 42, 43, 44, 45, 47, 48, 49};
}

struct ScenarioSpec {
  std::string name;
  /// linear:      y = intercept - 500 x1 - 500 x2 + v + e
  /// interaction: y = intercept - 500 x1 x2 - 250 x2^2 + v + e
  MeanModel model = MeanModel::linear;
  double intercept = 5000.0;
  double sd_x1 = 3.0;
  double sd_x2 = 3.0;
  /// Per-area covariate locations are uniform on [mu_low, mu_high].
  double mu_low = -1.0;
  double mu_high = 1.0;
  double sd_v = 500.0;
  ErrorLaw error = ErrorLaw::normal;
  double sd_eps = 1000.0;
  /// Pareto type I errors, centred by their mean shape*scale/(shape-1).
  double pareto_shape = 3.0;
  double pareto_scale = 800.0;
  std::size_t D = 50;
  std::size_t N_i = 1000;
  std::vector<std::size_t> n = canonical_sample_sizes();

  double mean(double x1, double x2) const {
    return model == MeanModel::linear ? intercept - 500.0 * x1 - 500.0 * x2
                                      : intercept - 500.0 * x1 * x2 - 250.0 * x2 * x2;
  }

  double pareto_mean() const { return pareto_shape * pareto_scale / (pareto_shape - 1.0); }

  void validate() const {
    if (D < 2) throw ConfigError("scenario needs at least 2 areas");
    if (N_i == 0) throw ConfigError("scenario areas need at least one unit");
    if (n.size() != D) throw ConfigError("scenario sample sizes do not match D");
    for (std::size_t v : n)
      if (v > N_i) throw ConfigError("scenario sample size exceeds the area population");
    if (!(sd_x1 >= 0.0 && sd_x2 >= 0.0 && sd_v >= 0.0 && sd_eps >= 0.0)) throw ConfigError("negative scenario sd");
    if (!(mu_low <= mu_high)) throw ConfigError("empty covariate location range");
    if (error == ErrorLaw::pareto && !(pareto_shape > 1.0 && pareto_scale > 0.0))
      throw ConfigError("Pareto errors need shape > 1 and scale > 0");
  }
};

namespace detail {

inline std::string scenario_key(const std::string& s) {
  std::string k;
  for (char c : s) {
    if (c == '-' || c == '_' || c == ' ') continue;
    k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return k;
}

}  // namespace detail

inline std::vector<ScenarioSpec> builtin_scenarios() {
  ScenarioSpec normal;
  normal.name = "Normal";

  ScenarioSpec interaction;
  interaction.name = "Interaction";
  interaction.model = MeanModel::interaction;
  interaction.intercept = 15000.0;
  interaction.sd_x1 = 4.0;
  interaction.sd_x2 = 2.0;

  ScenarioSpec normal_par = normal;
  normal_par.name = "Normal-Par";
  normal_par.error = ErrorLaw::pareto;

  ScenarioSpec interaction_par = interaction;
  interaction_par.name = "Interaction-Par";
  interaction_par.intercept = 20000.0;
  interaction_par.sd_x1 = 2.0;
  interaction_par.sd_x2 = 2.0;
  interaction_par.sd_v = 1000.0;
  interaction_par.error = ErrorLaw::pareto;

  return {normal, interaction, normal_par, interaction_par};
}

/// Looks a scenario up by name, ignoring case, '-' and '_'.
inline ScenarioSpec find_scenario(const std::vector<ScenarioSpec>& specs, const std::string& name) {
  for (const auto& s : specs)
    if (detail::scenario_key(s.name) == detail::scenario_key(name)) return s;
  std::string known;
  for (const auto& s : specs) known += (known.empty() ? "" : ", ") + s.name;
  throw ConfigError("unknown scenario '" + name + "' (known: " + known + ")");
}

inline ScenarioSpec scenario(const std::string& name) { return find_scenario(builtin_scenarios(), name); }

/// Reads scenario definitions from the scenarios config document.
inline std::vector<ScenarioSpec> scenarios_from_json(const nlohmann::json& doc) {
  try {
    std::vector<std::size_t> n = doc.at("sample_sizes").get<std::vector<std::size_t>>();
    const std::size_t D = doc.at("D").get<std::size_t>();
    const std::size_t N_i = doc.at("N_i").get<std::size_t>();
    std::vector<ScenarioSpec> out;
    for (const auto& s : doc.at("scenarios")) {
      ScenarioSpec spec;
      spec.name = s.at("name").get<std::string>();
      const std::string model = s.at("model").get<std::string>();
      if (model == "linear") spec.model = MeanModel::linear;
      else if (model == "interaction") spec.model = MeanModel::interaction;
      else throw ConfigError("unknown mean model '" + model + "'");
      spec.intercept = s.at("intercept").get<double>();
      spec.sd_x1 = s.at("x1_sd").get<double>();
      spec.sd_x2 = s.at("x2_sd").get<double>();
      const auto range = s.at("mu_range").get<std::vector<double>>();
      if (range.size() != 2) throw ConfigError("mu_range needs two values");
      spec.mu_low = range[0];
      spec.mu_high = range[1];
      spec.sd_v = s.at("v_sd").get<double>();
      const auto& err = s.at("error");
      const std::string law = err.at("law").get<std::string>();
      if (law == "normal") {
        spec.error = ErrorLaw::normal;
        spec.sd_eps = err.at("sd").get<double>();
      } else if (law == "pareto") {
        spec.error = ErrorLaw::pareto;
        spec.pareto_shape = err.at("shape").get<double>();
        spec.pareto_scale = err.at("scale").get<double>();
      } else {
        throw ConfigError("unknown error law '" + law + "'");
      }
      spec.D = D;
      spec.N_i = N_i;
      spec.n = n;
      spec.validate();
      out.push_back(std::move(spec));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid scenario config: ") + e.what());
  }
}

/// A finite population with its response; area labels are "1".."D".
struct Population {
  CensusDataset census;
  std::vector<double> y;
  /// Per area, in census order.
  std::vector<double> v;
  std::vector<double> mean;
};

/// Area means of y over the census areas, in first-appearance order.
inline std::vector<double> population_means(const CensusDataset& census, const std::vector<double>& y) {
  const Grouping g = census.groups();
  std::vector<double> mean(g.groups(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) mean[g.code[j]] += y[j];
  for (std::size_t i = 0; i < g.groups(); ++i) mean[i] /= static_cast<double>(g.counts[i]);
  return mean;
}

inline Population generate_population(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Engine rng = make_engine(seed);
  std::uniform_real_distribution<double> location(spec.mu_low, spec.mu_high);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t N = spec.D * spec.N_i;
  Population pop;
  pop.census.columns = {"x1", "x2"};
  pop.census.X.resize(static_cast<Eigen::Index>(N), 2);
  pop.census.area.reserve(N);
  pop.y.resize(N);
  pop.v.resize(spec.D);
  std::size_t row = 0;
  for (std::size_t i = 0; i < spec.D; ++i) {
    const double mu1 = location(rng);
    const double mu2 = location(rng);
    const double v = spec.sd_v * std_normal(rng);
    pop.v[i] = v;
    const std::string label = std::to_string(i + 1);
    for (std::size_t k = 0; k < spec.N_i; ++k, ++row) {
      const double x1 = mu1 + spec.sd_x1 * std_normal(rng);
      const double x2 = mu2 + spec.sd_x2 * std_normal(rng);
      double e;
      if (spec.error == ErrorLaw::normal) {
        e = spec.sd_eps * std_normal(rng);
      } else {
        const double u = 1.0 - unit(rng);  // (0, 1]
        e = spec.pareto_scale * std::pow(u, -1.0 / spec.pareto_shape) - spec.pareto_mean();
      }
      pop.census.X(static_cast<Eigen::Index>(row), 0) = x1;
      pop.census.X(static_cast<Eigen::Index>(row), 1) = x2;
      pop.census.area.push_back(label);
      pop.y[row] = spec.mean(x1, x2) + v + e;
    }
  }
  pop.mean = population_means(pop.census, pop.y);
  return pop;
}

/// Stratified simple random sampling without replacement: n[i] units from
/// the i-th area of `areas` (0 leaves the area out of the sample).
inline SurveyDataset stratified_sample(const CensusDataset& census, const std::vector<double>& y,
                                       const std::vector<std::string>& areas, const std::vector<std::size_t>& n,
                                       Engine& rng) {
  if (y.size() != census.N()) throw ShapeError("population response does not match the census");
  if (n.size() != areas.size()) throw ShapeError("sample sizes do not match the area list");
  const Grouping g = Grouping::with_order(census.area, areas);
  std::vector<std::vector<std::size_t>> rows(areas.size());
  for (std::size_t j = 0; j < census.N(); ++j) rows[g.code[j]].push_back(j);
  std::size_t total = 0;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    if (n[i] > rows[i].size())
      throw ConfigError("area '" + areas[i] + "' sample size " + std::to_string(n[i]) + " exceeds its " +
                        std::to_string(rows[i].size()) + " units");
    total += n[i];
  }
  SurveyDataset s;
  s.columns = census.columns;
  s.schema = numeric_schema(census.columns);
  s.X.resize(static_cast<Eigen::Index>(total), census.X.cols());
  s.y.reserve(total);
  s.area.reserve(total);
  std::size_t k = 0;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    if (n[i] == 0) continue;
    for (std::size_t r : sample_without_replacement(rng, rows[i].size(), n[i])) {
      const std::size_t j = rows[i][r];
      s.X.row(static_cast<Eigen::Index>(k++)) = census.X.row(static_cast<Eigen::Index>(j));
      s.y.push_back(y[j]);
      s.area.push_back(census.area[j]);
    }
  }
  return s;
}

inline SurveyDataset draw_sample(const Population& pop, const std::vector<std::size_t>& n, std::uint64_t seed) {
  Engine rng = make_engine(seed);
  return stratified_sample(pop.census, pop.y, pop.census.groups().labels, n, rng);
}

// ---------------------------------------------------------------------------
// Methods

struct MethodInput {
  const SurveyDataset& sample;
  const CensusDataset& census;
  const AreaIndex& index;
  std::uint64_t seed;
  unsigned threads;
};

struct MethodOutput {
  /// Per area, AreaIndex order.
  std::vector<double> mu_hat;
  /// Empty when the method does not estimate MSE.
  std::vector<double> mse;
  bool converged = true;
  std::size_t iterations = 0;
};

struct Method {
  std::string name;
  std::function<MethodOutput(const MethodInput&)> run;
};

/// MERF with the given learner. Without `reb` only point estimates are
/// produced and the bias correction (needed only for the bootstrap) is
/// skipped.
inline Method mixed_model_method(std::string name, FixedPartKind kind, MerfConfig config,
                                 std::optional<RebConfig> reb = std::nullopt) {
  if (!reb) config.bias_correction = false;
  return {std::move(name), [kind, config, reb](const MethodInput& in) {
            MerfConfig cfg = config;
            cfg.seed = in.seed;
            cfg.forest.threads = in.threads;
            const MerfModel model = fit_merf(in.sample, kind, cfg);
            MethodOutput out;
            out.mu_hat = estimate_means(model, in.census, in.index).mu_hat();
            out.converged = model.trace.converged;
            out.iterations = model.trace.iterations;
            if (reb) {
              RebConfig rc = *reb;
              rc.seed = derive_seed(in.seed, {stream::mse});
              rc.threads = in.threads;
              out.mse = bootstrap_mse(model, in.sample, in.census, in.index, rc).mse;
            }
            return out;
          }};
}

inline Method merf_method(const MerfConfig& config, std::optional<RebConfig> reb = std::nullopt) {
  return mixed_model_method("merf", FixedPartKind::random_forest, config, std::move(reb));
}

inline Method linear_baseline_method(const MerfConfig& config, std::optional<RebConfig> reb = std::nullopt) {
  return mixed_model_method("linear_baseline", FixedPartKind::linear, config, std::move(reb));
}

/// Builds methods by name ("merf", "linear_baseline").
inline std::vector<Method> methods_by_name(const std::vector<std::string>& names, const MerfConfig& config,
                                           const std::optional<RebConfig>& reb = std::nullopt) {
  std::vector<Method> out;
  for (const auto& name : names) {
    const FixedPartKind kind = parse_fixed_part_kind(name);
    out.push_back(kind == FixedPartKind::random_forest ? merf_method(config, reb) : linear_baseline_method(config, reb));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Protocols

struct SimConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

namespace detail {

struct ReplicationOutput {
  std::vector<double> truth;
  std::vector<std::optional<MethodOutput>> methods;
};

/// Runs `replicate(r, threads)` for every replication and assembles the
/// per-method results in replication order.
template <class Replicate>
void collect(SimResult& result, const std::vector<Method>& methods, std::size_t R, const SimConfig& config,
             Replicate&& replicate) {
  if (R == 0) throw ConfigError("simulation needs at least one replication");
  if (methods.empty()) throw ConfigError("simulation needs at least one method");
  std::vector<ReplicationOutput> reps(R);
  const unsigned outer = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(config.threads), R));
  const unsigned inner = outer > 1 ? 1 : config.threads;
  parallel_for(R, outer, [&](std::size_t r) { reps[r] = replicate(r, inner); });

  result.replications = R;
  result.methods.assign(methods.size(), {});
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MethodRuns& runs = result.methods[k];
    runs.method = methods[k].name;
    for (std::size_t r = 0; r < R; ++r) {
      auto& out = reps[r].methods[k];
      if (!out) {
        ++runs.failures;
        continue;
      }
      runs.replication.push_back(r);
      runs.estimate.push_back(std::move(out->mu_hat));
      runs.truth.push_back(reps[r].truth);
      if (!out->mse.empty()) runs.mse.push_back(std::move(out->mse));
      runs.converged.push_back(out->converged);
      runs.iterations.push_back(out->iterations);
    }
    if (!runs.mse.empty() && runs.mse.size() != runs.runs())
      throw FitError("method '" + runs.method + "' returned MSE estimates for only some replications");
    if (runs.failures > 0)
      log::warn("method '" + runs.method + "' failed in " + std::to_string(runs.failures) + " of " +
                std::to_string(R) + " replications");
  }
}

inline std::vector<std::optional<MethodOutput>> run_methods(const std::vector<Method>& methods, const SurveyDataset& s,
                                                           const CensusDataset& census, const AreaIndex& index,
                                                           std::uint64_t seed, std::size_t r, unsigned threads) {
  std::vector<std::optional<MethodOutput>> out(methods.size());
  for (std::size_t k = 0; k < methods.size(); ++k) {
    try {
      MethodOutput o = methods[k].run({s, census, index, derive_seed(seed, {stream::method, r, k}), threads});
      if (o.mu_hat.size() != index.size()) throw ShapeError("method returned the wrong number of area estimates");
      if (!o.converged)
        log::warn("method '" + methods[k].name + "' did not converge in replication " + std::to_string(r));
      out[k] = std::move(o);
    } catch (const std::exception& e) {
      log::warn("method '" + methods[k].name + "' failed in replication " + std::to_string(r) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Model-based protocol: every replication draws a fresh population and a
/// fresh stratified sample with the scenario's sample sizes.
inline SimResult run_model_based(const ScenarioSpec& spec, std::size_t M, const std::vector<Method>& methods,
                                 const SimConfig& config) {
  spec.validate();
  SimResult result;
  for (std::size_t i = 0; i < spec.D; ++i) result.areas.push_back(std::to_string(i + 1));
  result.in_sample.assign(spec.D, true);
  for (std::size_t v : spec.n)
    if (v == 0) throw ConfigError("model-based sample sizes must be positive");
  result.n = spec.n;
  detail::collect(result, methods, M, config, [&](std::size_t m, unsigned threads) {
    const Population pop = generate_population(spec, derive_seed(config.seed, {stream::population, m}));
    const SurveyDataset s = draw_sample(pop, spec.n, derive_seed(config.seed, {stream::sample, m}));
    const AreaIndex index = align(s, pop.census);
    return detail::ReplicationOutput{pop.mean, detail::run_methods(methods, s, pop.census, index, config.seed, m, threads)};
  });
  return result;
}

/// Design-based protocol: repeated stratified samples from one fixed
/// population. `pattern` lists the sample size per area; census areas not
/// listed are never sampled.
inline SimResult run_design_based(const CensusDataset& census, const std::vector<double>& y,
                                  const std::vector<std::pair<std::string, std::size_t>>& pattern, std::size_t T,
                                  const std::vector<Method>& methods, const SimConfig& config) {
  census.validate();
  if (y.size() != census.N()) throw ShapeError("population response does not match the census");
  const Grouping g = census.groups();
  std::vector<std::size_t> n(g.groups(), 0);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < g.groups(); ++i) pos.emplace(g.labels[i], i);
  for (const auto& [label, size] : pattern) {
    auto it = pos.find(label);
    if (it == pos.end()) throw ConsistencyError("sampling pattern references unknown area '" + label + "'");
    if (size > g.counts[it->second])
      throw ConfigError("area '" + label + "' sample size exceeds its population");
    n[it->second] = size;
  }
  std::size_t sampled = 0;
  for (std::size_t v : n) sampled += v > 0;
  if (sampled < 2) throw ConfigError("the sampling pattern needs at least 2 sampled areas");

  const std::vector<double> truth = population_means(census, y);
  SimResult result;
  result.areas = g.labels;
  result.n = n;
  result.in_sample.resize(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) result.in_sample[i] = n[i] > 0;
  detail::collect(result, methods, T, config, [&](std::size_t t, unsigned threads) {
    Engine rng = make_engine(config.seed, {stream::sample, t});
    const SurveyDataset s = stratified_sample(census, y, g.labels, n, rng);
    const AreaIndex index = align(s, census);
    return detail::ReplicationOutput{truth, detail::run_methods(methods, s, census, index, config.seed, t, threads)};
  });
  return result;
}

/// Share of successful replications in which the method converged.
inline double convergence_rate(const MethodRuns& runs) {
  if (runs.runs() == 0) return 0.0;
  std::size_t c = 0;
  for (char v : runs.converged) c += v != 0;
  return static_cast<double>(c) / static_cast<double>(runs.runs());
}

}  // namespace merf
