#pragma once

// Area-level means: the census average of the fixed-part predictions plus the
// area's random effect. Areas without sample data get the fixed part only.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "merf/csv.hpp"
#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/model.hpp"

namespace merf {

struct AreaEstimate {
  std::string label;
  bool in_sample = false;
  std::size_t n = 0;
  std::size_t N = 0;
  double mu_hat = 0.0;
  double fixed_part_mean = 0.0;
  double v_hat = 0.0;
  std::optional<double> mse_hat;
  std::optional<double> cv;
};

struct AreaEstimates {
  std::vector<AreaEstimate> areas;

  std::vector<double> mu_hat() const {
    std::vector<double> out;
    out.reserve(areas.size());
    for (const auto& a : areas) out.push_back(a.mu_hat);
    return out;
  }

  /// Attaches MSE estimates (AreaIndex order) and derives the CV where the
  /// mean is nonzero.
  void attach_mse(const std::vector<double>& mse) {
    if (mse.size() != areas.size()) throw ShapeError("MSE vector does not match the area count");
    for (std::size_t i = 0; i < areas.size(); ++i) {
      areas[i].mse_hat = mse[i];
      areas[i].cv = areas[i].mu_hat != 0.0 ? std::optional<double>(std::sqrt(mse[i]) / areas[i].mu_hat) : std::nullopt;
    }
  }
};

/// Area index over the census areas (first-appearance order) with the sample
/// sizes recorded in the model. Every sampled area must be in the census.
inline AreaIndex index_from_model(const MerfModel& model, const CensusDataset& census) {
  const Grouping cg = census.groups();
  AreaIndex index;
  index.labels = cg.labels;
  index.N = cg.counts;
  index.n.assign(cg.groups(), 0);
  index.in_sample.assign(cg.groups(), false);
  for (std::size_t k = 0; k < model.areas.size(); ++k) {
    const auto pos = index.find(model.areas[k]);
    if (!pos) throw ConsistencyError("sampled area '" + model.areas[k] + "' is absent from the census");
    index.n[*pos] = model.area_n[k];
    index.in_sample[*pos] = model.area_n[k] > 0;
  }
  return index;
}

/// Mean of `values` within each area of the index, using the census area
/// labels. Every index area must have census rows.
inline std::vector<double> census_area_means(const std::vector<double>& values, const CensusDataset& census,
                                             const AreaIndex& index) {
  if (values.size() != census.N()) throw ShapeError("prediction length does not match the census");
  const Grouping g = Grouping::with_order(census.area, index.labels);
  std::vector<double> sum(index.size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j) sum[g.code[j]] += values[j];
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (g.counts[i] == 0) throw ConsistencyError("area '" + index.labels[i] + "' has no census rows");
    sum[i] /= static_cast<double>(g.counts[i]);
  }
  return sum;
}

/// Combines fixed-part area means with the model's random effects.
inline AreaEstimates assemble_estimates(const std::vector<double>& fixed_means, const MerfModel& model,
                                        const AreaIndex& index) {
  AreaEstimates out;
  out.areas.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    AreaEstimate& a = out.areas[i];
    a.label = index.labels[i];
    a.in_sample = index.in_sample[i];
    a.n = index.n[i];
    a.N = index.N[i];
    a.fixed_part_mean = fixed_means[i];
    a.v_hat = a.in_sample ? model.random_effect(a.label) : 0.0;
    a.mu_hat = a.fixed_part_mean + a.v_hat;
  }
  return out;
}

inline AreaEstimates estimate_means(const MerfModel& model, const CensusDataset& census, const AreaIndex& index) {
  if (census.columns != model.columns) throw ConsistencyError("census covariates do not match the model");
  const std::vector<double> pred = model.predict_fixed(census.X);
  return assemble_estimates(census_area_means(pred, census, index), model, index);
}

inline void write_estimates_csv(std::ostream& out, const AreaEstimates& est) {
  csv::write_row(out, {"area", "in_sample", "n_i", "N_i", "mu_hat", "v_hat", "mse_hat", "cv"});
  for (const auto& a : est.areas) {
    csv::write_row(out, {a.label, a.in_sample ? "1" : "0", std::to_string(a.n), std::to_string(a.N),
                         csv::format_double(a.mu_hat), csv::format_double(a.v_hat),
                         a.mse_hat ? csv::format_double(*a.mse_hat) : std::string("NA"),
                         a.cv ? csv::format_double(*a.cv) : std::string("NA")});
  }
}

}  // namespace merf
