#pragma once

// Monte-Carlo evaluation of area-mean estimators. For area i over M
// replications with estimates m_i, truths t_i and optional MSE estimates s_i:
//
//   RB_i         = mean((m - t) / t)
//   RRMSE_i      = sqrt(mean((m - t)^2)) / mean(t)
//   RMSE_emp_i   = sqrt(mean((m - t)^2))
//   RB-RMSE_i    = (sqrt(mean(s)) - RMSE_emp) / RMSE_emp
//   RRMSE-RMSE_i = sqrt(mean((sqrt(s) - RMSE_emp)^2)) / RMSE_emp

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "merf/csv.hpp"
#include "merf/error.hpp"
#include "merf/log.hpp"

namespace merf {

/// Replication results of one method. Rows are successful replications,
/// columns are areas.
struct MethodRuns {
  std::string method;
  std::vector<std::size_t> replication;
  std::vector<std::vector<double>> estimate;
  std::vector<std::vector<double>> truth;
  /// Empty, or one row per successful replication.
  std::vector<std::vector<double>> mse;
  std::vector<char> converged;
  std::vector<std::size_t> iterations;
  std::size_t failures = 0;

  std::size_t runs() const { return estimate.size(); }
  bool has_mse() const { return !mse.empty(); }
};

struct SimResult {
  std::vector<std::string> areas;
  std::vector<bool> in_sample;
  std::vector<std::size_t> n;
  std::size_t replications = 0;
  std::vector<MethodRuns> methods;

  const MethodRuns& method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw ConfigError("no results for method '" + name + "'");
  }
};

struct AreaMetrics {
  std::string area;
  bool in_sample = true;
  std::size_t n = 0;
  std::optional<double> rb;
  std::optional<double> rrmse;
  std::optional<double> rmse_emp;
  std::optional<double> rb_rmse;
  std::optional<double> rrmse_rmse;
};

enum class Metric { rb, rrmse, rmse_emp, rb_rmse, rrmse_rmse };
enum class AreaSubset { all, in_sample, out_of_sample };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::rb: return "RB";
    case Metric::rrmse: return "RRMSE";
    case Metric::rmse_emp: return "RMSE_emp";
    case Metric::rb_rmse: return "RB-RMSE";
    case Metric::rrmse_rmse: return "RRMSE-RMSE";
  }
  return "?";
}

inline const char* to_string(AreaSubset s) {
  switch (s) {
    case AreaSubset::all: return "all";
    case AreaSubset::in_sample: return "in";
    case AreaSubset::out_of_sample: return "out";
  }
  return "?";
}

struct Summary {
  std::size_t areas = 0;
  double mean = std::nan("");
  double median = std::nan("");
};

inline std::optional<double> metric_value(const AreaMetrics& a, Metric m) {
  switch (m) {
    case Metric::rb: return a.rb;
    case Metric::rrmse: return a.rrmse;
    case Metric::rmse_emp: return a.rmse_emp;
    case Metric::rb_rmse: return a.rb_rmse;
    case Metric::rrmse_rmse: return a.rrmse_rmse;
  }
  return std::nullopt;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

struct MetricTable {
  std::string method;
  std::size_t runs = 0;
  std::vector<AreaMetrics> areas;

  /// Mean and median over the areas of the subset where the metric is
  /// defined.
  Summary summary(Metric m, AreaSubset subset = AreaSubset::all) const {
    std::vector<double> values;
    for (const auto& a : areas) {
      if (subset == AreaSubset::in_sample && !a.in_sample) continue;
      if (subset == AreaSubset::out_of_sample && a.in_sample) continue;
      if (auto v = metric_value(a, m)) values.push_back(*v);
    }
    Summary s;
    s.areas = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    s.median = median(values);
    return s;
  }
};

inline MetricTable compute_metrics(const MethodRuns& runs, const SimResult& result) {
  const std::size_t D = result.areas.size();
  const std::size_t M = runs.runs();
  if (M == 0) throw ConfigError("method '" + runs.method + "' has no successful replications");
  MetricTable table;
  table.method = runs.method;
  table.runs = M;
  table.areas.resize(D);
  for (std::size_t i = 0; i < D; ++i) {
    AreaMetrics& a = table.areas[i];
    a.area = result.areas[i];
    a.in_sample = result.in_sample[i];
    a.n = result.n[i];
    double rel = 0.0, sq = 0.0, truth = 0.0, mse = 0.0;
    bool zero_truth = false;
    for (std::size_t m = 0; m < M; ++m) {
      const double t = runs.truth[m][i];
      const double d = runs.estimate[m][i] - t;
      if (t == 0.0) zero_truth = true;
      else rel += d / t;
      sq += d * d;
      truth += t;
      if (runs.has_mse()) mse += runs.mse[m][i];
    }
    const double Md = static_cast<double>(M);
    const double rmse = std::sqrt(sq / Md);
    a.rmse_emp = rmse;
    if (zero_truth) {
      log::warn("area '" + a.area + "' has a zero true mean; RB undefined");
    } else {
      a.rb = rel / Md;
    }
    if (truth != 0.0) a.rrmse = rmse / (truth / Md);
    if (runs.has_mse() && rmse > 0.0) {
      a.rb_rmse = (std::sqrt(mse / Md) - rmse) / rmse;
      double dev = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        const double d = std::sqrt(runs.mse[m][i]) - rmse;
        dev += d * d;
      }
      a.rrmse_rmse = std::sqrt(dev / Md) / rmse;
    }
  }
  return table;
}

inline std::vector<MetricTable> compute_metrics(const SimResult& result) {
  std::vector<MetricTable> out;
  for (const auto& m : result.methods)
    if (m.runs() > 0) out.push_back(compute_metrics(m, result));
  return out;
}

/// One row per replication, method and area.
inline void write_tidy_csv(std::ostream& out, const SimResult& result) {
  csv::write_row(out, {"replication", "method", "area", "in_sample", "estimate", "truth", "mse_hat"});
  for (const auto& m : result.methods)
    for (std::size_t r = 0; r < m.runs(); ++r)
      for (std::size_t i = 0; i < result.areas.size(); ++i)
        csv::write_row(out, {std::to_string(m.replication[r]), m.method, result.areas[i],
                             result.in_sample[i] ? "1" : "0", csv::format_double(m.estimate[r][i]),
                             csv::format_double(m.truth[r][i]),
                             m.has_mse() ? csv::format_double(m.mse[r][i]) : std::string("NA")});
}

inline std::string format_optional(const std::optional<double>& v) { return v ? csv::format_double(*v) : "NA"; }

/// Per-area metrics followed by mean/median summary rows per area subset.
inline void write_metric_csv(std::ostream& out, const std::vector<MetricTable>& tables) {
  csv::write_row(out, {"method", "row", "area", "in_sample", "n_i", "RB", "RRMSE", "RMSE_emp", "RB-RMSE", "RRMSE-RMSE"});
  constexpr Metric metrics[] = {Metric::rb, Metric::rrmse, Metric::rmse_emp, Metric::rb_rmse, Metric::rrmse_rmse};
  for (const auto& t : tables) {
    for (const auto& a : t.areas)
      csv::write_row(out, {t.method, "area", a.area, a.in_sample ? "1" : "0", std::to_string(a.n), format_optional(a.rb),
                           format_optional(a.rrmse), format_optional(a.rmse_emp), format_optional(a.rb_rmse),
                           format_optional(a.rrmse_rmse)});
    for (AreaSubset subset : {AreaSubset::all, AreaSubset::in_sample, AreaSubset::out_of_sample}) {
      if (t.summary(Metric::rmse_emp, subset).areas == 0) continue;
      for (const char* stat : {"mean", "median"}) {
        std::vector<std::string> row{t.method, stat, to_string(subset), "", ""};
        for (Metric m : metrics) {
          const Summary s = t.summary(m, subset);
          const double v = std::string(stat) == "mean" ? s.mean : s.median;
          row.push_back(s.areas ? csv::format_double(v) : "NA");
        }
        csv::write_row(out, row);
      }
    }
  }
}

}  // namespace merf
