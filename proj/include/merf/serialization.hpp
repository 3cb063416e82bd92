#pragma once

// Versioned JSON envelope for fitted models.
//
//   {
//     "format": "merf-model", "version": 1,
//     "kind": "random_forest" | "linear",
//     "config": {...}, "schema": [...], "columns": [...],
//     "areas": [...], "area_n": [...], "v_hat": [...], "oob": [...],
//     "variance": {...}, "bias_correction": {...} | null, "trace": {...},
//     "fixed_part": {"forest": {...}} | {"linear": {...}}
//   }
//
// A forest stores per tree the parallel node arrays "feature" (-1 for
// leaves), "threshold", "value" and "left"; the right child is left + 1.
// NaN values are written as null.

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "merf/error.hpp"
#include "merf/fixed_part.hpp"
#include "merf/forest.hpp"
#include "merf/model.hpp"

namespace merf {

inline constexpr int model_format_version = 1;

namespace detail {

using nlohmann::json;

inline json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

inline double number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json numbers(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

inline std::vector<double> numbers(const json& j) {
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& x : j) v.push_back(number(x));
  return v;
}

inline json forest_config_json(const ForestConfig& c) {
  return {{"n_trees", c.n_trees}, {"mtry", c.mtry}, {"min_node_size", c.min_node_size}, {"seed", c.seed},
          {"bootstrap", c.bootstrap}};
}

inline ForestConfig forest_config_from(const json& j) {
  ForestConfig c;
  c.n_trees = j.at("n_trees").get<std::size_t>();
  c.mtry = j.at("mtry").get<std::size_t>();
  c.min_node_size = j.at("min_node_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.bootstrap = j.at("bootstrap").get<bool>();
  return c;
}

inline json forest_json(const Forest& f) {
  json trees = json::array();
  for (const auto& t : f.trees()) {
    std::vector<std::int32_t> feature;
    std::vector<std::uint32_t> left;
    std::vector<double> threshold, value;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      left.push_back(n.left);
      threshold.push_back(n.threshold);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"value", value}, {"left", left}});
  }
  return {{"config", forest_config_json(f.config())},
          {"features", f.features()},
          {"oob_fallbacks", f.oob_fallbacks()},
          {"trees", std::move(trees)}};
}

inline Forest forest_from(const json& j, std::vector<double> oob) {
  const ForestConfig config = forest_config_from(j.at("config"));
  std::vector<RegressionTree> trees;
  for (const auto& t : j.at("trees")) {
    const auto feature = t.at("feature").get<std::vector<std::int32_t>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto value = t.at("value").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<std::uint32_t>>();
    if (feature.empty() || threshold.size() != feature.size() || value.size() != feature.size() ||
        left.size() != feature.size())
      throw SchemaError("tree node arrays differ in length");
    RegressionTree tree;
    tree.nodes.resize(feature.size());
    for (std::size_t k = 0; k < feature.size(); ++k) {
      TreeNode& n = tree.nodes[k];
      n.feature = feature[k];
      n.threshold = threshold[k];
      n.value = value[k];
      if (!n.leaf()) {
        if (left[k] == 0 || left[k] + 1 >= feature.size()) throw SchemaError("tree child index out of range");
        n.left = left[k];
        n.right = left[k] + 1;
      }
    }
    trees.push_back(std::move(tree));
  }
  return Forest::restore(std::move(trees), config, j.at("features").get<std::size_t>(), std::move(oob),
                         j.at("oob_fallbacks").get<std::size_t>());
}

}  // namespace detail

inline nlohmann::json merf_config_json(const MerfConfig& c) {
  return {{"tolerance", c.tolerance},
          {"max_iter", c.max_iter},
          {"forest", detail::forest_config_json(c.forest)},
          {"seeding", to_string(c.seeding)},
          {"bias_correction", c.bias_correction},
          {"bias_correction_B", c.bias_correction_B},
          {"seed", c.seed}};
}

inline MerfConfig merf_config_from(const nlohmann::json& j) {
  MerfConfig c;
  c.tolerance = j.at("tolerance").get<double>();
  c.max_iter = j.at("max_iter").get<std::size_t>();
  c.forest = detail::forest_config_from(j.at("forest"));
  c.seeding = parse_iteration_seeding(j.at("seeding").get<std::string>());
  c.bias_correction = j.at("bias_correction").get<bool>();
  c.bias_correction_B = j.at("bias_correction_B").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json model_json(const MerfModel& m) {
  using detail::json;
  json schema = json::array();
  for (const auto& c : m.schema.columns) schema.push_back({{"name", c.name}, {"levels", c.levels}});
  const auto& vf = m.variance_fit;
  json variance = {{"sigma2_v", m.vc.sigma2_v},
                   {"sigma2_eps", m.vc.sigma2_eps},
                   {"sigma2_bc", m.vc.sigma2_bc ? json(*m.vc.sigma2_bc) : json(nullptr)},
                   {"log_likelihood", vf.log_likelihood},
                   {"ratio", vf.ratio},
                   {"boundary", vf.boundary},
                   {"evaluations", vf.evaluations},
                   {"final_relative_change", detail::number(vf.final_relative_change)}};
  json bc = nullptr;
  if (m.bias_correction) {
    const auto& b = *m.bias_correction;
    bc = {{"sigma2_naive", b.sigma2_naive}, {"K_hat", b.K_hat},     {"sigma2_bc", b.sigma2_bc},
          {"B", b.B},                       {"floored", b.floored}, {"replicate_terms", b.replicate_terms}};
  }
  json trace = {{"gll", detail::numbers(m.trace.gll)},
                {"relative_change", detail::numbers(m.trace.relative_change)},
                {"sigma2_v", m.trace.sigma2_v},
                {"sigma2_eps", m.trace.sigma2_eps},
                {"iterations", m.trace.iterations},
                {"converged", m.trace.converged}};
  json fixed;
  if (const auto* f = std::get_if<Forest>(&m.fixed_part)) {
    fixed = {{"forest", detail::forest_json(*f)}};
  } else {
    const auto& l = std::get<LinearFit>(m.fixed_part);
    fixed = {{"linear", {{"coef", l.coef}, {"fitted", l.fitted}}}};
  }
  return {{"format", "merf-model"},
          {"version", model_format_version},
          {"kind", to_string(m.kind)},
          {"config", merf_config_json(m.config)},
          {"schema", std::move(schema)},
          {"columns", m.columns},
          {"areas", m.areas},
          {"area_n", m.area_n},
          {"v_hat", m.v_hat.v_hat},
          {"oob", m.oob},
          {"variance", std::move(variance)},
          {"bias_correction", std::move(bc)},
          {"trace", std::move(trace)},
          {"fixed_part", std::move(fixed)}};
}

inline MerfModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "merf-model") throw SchemaError("not a merf model file");
    const int version = j.at("version").get<int>();
    if (version != model_format_version)
      throw SchemaError("unsupported model format version " + std::to_string(version));
    MerfModel m;
    m.kind = parse_fixed_part_kind(j.at("kind").get<std::string>());
    m.config = merf_config_from(j.at("config"));
    for (const auto& c : j.at("schema"))
      m.schema.columns.push_back({c.at("name").get<std::string>(), c.at("levels").get<std::vector<std::string>>()});
    m.columns = j.at("columns").get<std::vector<std::string>>();
    m.areas = j.at("areas").get<std::vector<std::string>>();
    m.area_n = j.at("area_n").get<std::vector<std::size_t>>();
    m.v_hat.v_hat = j.at("v_hat").get<std::vector<double>>();
    m.oob = j.at("oob").get<std::vector<double>>();
    if (m.v_hat.v_hat.size() != m.areas.size() || m.area_n.size() != m.areas.size())
      throw SchemaError("v_hat or area_n does not match the area list");

    const auto& v = j.at("variance");
    m.vc.sigma2_v = v.at("sigma2_v").get<double>();
    m.vc.sigma2_eps = v.at("sigma2_eps").get<double>();
    if (!v.at("sigma2_bc").is_null()) m.vc.sigma2_bc = v.at("sigma2_bc").get<double>();
    m.variance_fit.vc = {m.vc.sigma2_v, m.vc.sigma2_eps, std::nullopt};
    m.variance_fit.log_likelihood = v.at("log_likelihood").get<double>();
    m.variance_fit.ratio = v.at("ratio").get<double>();
    m.variance_fit.boundary = v.at("boundary").get<bool>();
    m.variance_fit.evaluations = v.at("evaluations").get<std::size_t>();
    m.variance_fit.final_relative_change = detail::number(v.at("final_relative_change"));
    m.vc.validate();

    if (const auto& b = j.at("bias_correction"); !b.is_null()) {
      BiasCorrectionResult r;
      r.sigma2_naive = b.at("sigma2_naive").get<double>();
      r.K_hat = b.at("K_hat").get<double>();
      r.sigma2_bc = b.at("sigma2_bc").get<double>();
      r.B = b.at("B").get<std::size_t>();
      r.floored = b.at("floored").get<bool>();
      r.replicate_terms = b.at("replicate_terms").get<std::vector<double>>();
      m.bias_correction = std::move(r);
    }

    const auto& t = j.at("trace");
    m.trace.gll = detail::numbers(t.at("gll"));
    m.trace.relative_change = detail::numbers(t.at("relative_change"));
    m.trace.sigma2_v = t.at("sigma2_v").get<std::vector<double>>();
    m.trace.sigma2_eps = t.at("sigma2_eps").get<std::vector<double>>();
    m.trace.iterations = t.at("iterations").get<std::size_t>();
    m.trace.converged = t.at("converged").get<bool>();

    const auto& fp = j.at("fixed_part");
    if (fp.contains("forest")) {
      if (m.kind != FixedPartKind::random_forest) throw SchemaError("model kind does not match its fixed part");
      m.fixed_part = detail::forest_from(fp.at("forest"), m.oob);
    } else {
      if (m.kind != FixedPartKind::linear) throw SchemaError("model kind does not match its fixed part");
      const auto& l = fp.at("linear");
      m.fixed_part = LinearFit{l.at("coef").get<std::vector<double>>(), l.at("fitted").get<std::vector<double>>()};
      if (std::get<LinearFit>(m.fixed_part).coef.size() != m.columns.size() + 1)
        throw SchemaError("linear coefficients do not match the covariates");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const MerfModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << model_json(m).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline MerfModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace merf
