#pragma once

// Unit-level survey and census datasets, CSV ingestion with one-hot encoding
// of categorical covariates, and the area index that ties the two together.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "merf/csv.hpp"
#include "merf/error.hpp"

namespace merf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// How one source CSV column maps onto encoded covariate columns.
struct CovariateColumn {
  std::string name;
  /// Empty for numeric columns. For categorical columns: all levels in
  /// lexicographic order; levels[0] is the reference and gets no indicator.
  std::vector<std::string> levels;

  bool categorical() const { return !levels.empty(); }
  std::size_t width() const { return categorical() ? levels.size() - 1 : 1; }
};

struct CovariateSchema {
  std::vector<CovariateColumn> columns;

  /// Encoded column names: numeric columns keep their name, categorical
  /// indicators are named "column=level".
  std::vector<std::string> encoded_names() const {
    std::vector<std::string> names;
    for (const auto& c : columns) {
      if (!c.categorical()) {
        names.push_back(c.name);
      } else {
        for (std::size_t l = 1; l < c.levels.size(); ++l) names.push_back(c.name + "=" + c.levels[l]);
      }
    }
    return names;
  }

  std::size_t width() const {
    std::size_t w = 0;
    for (const auto& c : columns) w += c.width();
    return w;
  }
};

/// Dense group codes for a vector of area labels, in order of first appearance.
struct Grouping {
  std::vector<std::string> labels;
  std::vector<std::size_t> code;
  std::vector<std::size_t> counts;

  std::size_t groups() const { return labels.size(); }
  std::size_t rows() const { return code.size(); }

  static Grouping from_labels(const std::vector<std::string>& area) {
    Grouping g;
    std::unordered_map<std::string, std::size_t> seen;
    g.code.reserve(area.size());
    for (const auto& label : area) {
      auto [it, inserted] = seen.try_emplace(label, g.labels.size());
      if (inserted) {
        g.labels.push_back(label);
        g.counts.push_back(0);
      }
      g.code.push_back(it->second);
      ++g.counts[it->second];
    }
    return g;
  }

  /// Grouping whose codes follow a prescribed label order; labels absent
  /// from `area` get count 0.
  static Grouping with_order(const std::vector<std::string>& area, const std::vector<std::string>& order) {
    Grouping g;
    g.labels = order;
    g.counts.assign(order.size(), 0);
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos.emplace(order[i], i);
    g.code.reserve(area.size());
    for (const auto& label : area) {
      auto it = pos.find(label);
      if (it == pos.end()) throw ConsistencyError("area '" + label + "' is not in the expected area list");
      g.code.push_back(it->second);
      ++g.counts[it->second];
    }
    return g;
  }
};

struct SurveyDataset {
  std::vector<double> y;
  Matrix X;
  std::vector<std::string> area;
  std::vector<std::string> columns;
  CovariateSchema schema;

  std::size_t n() const { return y.size(); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
  Grouping groups() const { return Grouping::from_labels(area); }

  void validate() const {
    if (y.empty()) throw EmptyInputError("survey has no rows");
    if (static_cast<std::size_t>(X.rows()) != y.size() || area.size() != y.size())
      throw ShapeError("survey y, X and area lengths differ");
    if (columns.size() != p()) throw ShapeError("survey column names do not match X");
    std::set<std::string> unique;
    for (const auto& c : columns) {
      if (c.empty()) throw SchemaError("empty covariate column name");
      if (!unique.insert(c).second) throw SchemaError("duplicate covariate column '" + c + "'");
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) throw ParseError("non-finite response in row " + std::to_string(i));
      if (area[i].empty()) throw ParseError("missing area label in row " + std::to_string(i));
    }
    if (!X.allFinite()) throw ParseError("non-finite covariate value");
  }
};

struct CensusDataset {
  Matrix X;
  std::vector<std::string> area;
  std::vector<std::string> columns;

  std::size_t N() const { return area.size(); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
  Grouping groups() const { return Grouping::from_labels(area); }

  void validate() const {
    if (area.empty()) throw EmptyInputError("census has no rows");
    if (static_cast<std::size_t>(X.rows()) != area.size()) throw ShapeError("census X and area lengths differ");
    if (columns.size() != p()) throw ShapeError("census column names do not match X");
    for (std::size_t i = 0; i < area.size(); ++i)
      if (area[i].empty()) throw ParseError("missing area label in census row " + std::to_string(i));
    if (!X.allFinite()) throw ParseError("non-finite census covariate value");
  }
};

/// All D areas of the census with their sample status.
struct AreaIndex {
  std::vector<std::string> labels;
  std::vector<bool> in_sample;
  std::vector<std::size_t> n;
  std::vector<std::size_t> N;

  std::size_t size() const { return labels.size(); }
  std::size_t sampled() const { return static_cast<std::size_t>(std::count(in_sample.begin(), in_sample.end(), true)); }

  std::optional<std::size_t> find(const std::string& label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  }

  friend bool operator==(const AreaIndex&, const AreaIndex&) = default;
};

/// Builds the area index over all census areas (census order of first
/// appearance) and flags the areas present in the survey.
inline AreaIndex align(const SurveyDataset& survey, const CensusDataset& census) {
  if (survey.columns != census.columns)
    throw ConsistencyError("survey and census covariate columns differ");
  const Grouping cg = census.groups();
  AreaIndex index;
  index.labels = cg.labels;
  index.N = cg.counts;
  index.n.assign(cg.groups(), 0);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < cg.groups(); ++i) pos.emplace(cg.labels[i], i);
  for (const auto& label : survey.area) {
    auto it = pos.find(label);
    if (it == pos.end()) throw ConsistencyError("survey area '" + label + "' is absent from the census");
    ++index.n[it->second];
  }
  index.in_sample.resize(cg.groups());
  for (std::size_t i = 0; i < cg.groups(); ++i) index.in_sample[i] = index.n[i] >= 1;
  return index;
}

namespace detail {

inline CovariateSchema infer_schema(const csv::Table& table, const std::vector<std::size_t>& covariate_cols) {
  CovariateSchema schema;
  for (std::size_t j : covariate_cols) {
    CovariateColumn column{table.header[j], {}};
    bool numeric = true;
    for (const auto& row : table.rows) {
      if (csv::trim(row[j]).empty())
        throw ParseError("missing value in column '" + table.header[j] + "'");
      if (!csv::parse_double(row[j])) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      std::set<std::string> levels;
      for (const auto& row : table.rows) levels.insert(csv::trim(row[j]));
      column.levels.assign(levels.begin(), levels.end());
    }
    schema.columns.push_back(std::move(column));
  }
  return schema;
}

inline Matrix encode(const csv::Table& table, const CovariateSchema& schema, const std::string& source) {
  const std::size_t rows = table.rows.size();
  Matrix X = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(schema.width()));
  Eigen::Index out = 0;
  for (const auto& column : schema.columns) {
    auto j = table.column(column.name);
    if (!j) throw SchemaError(source + " lacks covariate column '" + column.name + "'");
    for (std::size_t i = 0; i < rows; ++i) {
      const std::string& cell = table.rows[i][*j];
      if (csv::trim(cell).empty())
        throw ParseError(source + ": missing value in column '" + column.name + "' row " + std::to_string(i + 1));
      if (!column.categorical()) {
        auto v = csv::parse_double(cell);
        if (!v) throw ParseError(source + ": non-numeric value '" + cell + "' in column '" + column.name + "'");
        X(static_cast<Eigen::Index>(i), out) = *v;
      } else {
        const std::string level = csv::trim(cell);
        auto it = std::find(column.levels.begin(), column.levels.end(), level);
        if (it == column.levels.end())
          throw ConsistencyError(source + ": unknown level '" + level + "' in column '" + column.name + "'");
        auto l = static_cast<Eigen::Index>(it - column.levels.begin());
        if (l > 0) X(static_cast<Eigen::Index>(i), out + l - 1) = 1.0;
      }
    }
    out += static_cast<Eigen::Index>(column.width());
  }
  return X;
}

inline std::vector<std::string> area_column(const csv::Table& table, std::size_t j, const std::string& source) {
  std::vector<std::string> area;
  area.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    std::string label = csv::trim(table.rows[i][j]);
    if (label.empty()) throw ParseError(source + ": missing area label in row " + std::to_string(i + 1));
    area.push_back(std::move(label));
  }
  return area;
}

}  // namespace detail

/// Parses a survey table. Every column except the area and response columns
/// is a covariate; columns that are not entirely numeric are treated as
/// categorical and one-hot encoded against their lexicographically first level.
inline SurveyDataset read_survey(const csv::Table& table, const std::string& response_column,
                                 const std::string& area_column, const std::string& source = "survey") {
  auto yj = table.column(response_column);
  if (!yj) throw SchemaError(source + " lacks response column '" + response_column + "'");
  auto aj = table.column(area_column);
  if (!aj) throw SchemaError(source + " lacks area column '" + area_column + "'");
  if (*yj == *aj) throw SchemaError("response and area column must differ");
  if (table.rows.empty()) throw EmptyInputError(source + " has no data rows");

  std::vector<std::size_t> covariates;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (j != *yj && j != *aj) covariates.push_back(j);

  SurveyDataset s;
  s.schema = detail::infer_schema(table, covariates);
  s.X = detail::encode(table, s.schema, source);
  s.columns = s.schema.encoded_names();
  s.area = detail::area_column(table, *aj, source);
  s.y.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto v = csv::parse_double(table.rows[i][*yj]);
    if (!v) throw ParseError(source + ": non-numeric response '" + table.rows[i][*yj] + "' in row " + std::to_string(i + 1));
    s.y.push_back(*v);
  }
  s.validate();
  return s;
}

inline SurveyDataset load_survey(const std::string& path, const std::string& response_column,
                                 const std::string& area_column) {
  return read_survey(csv::read_file(path), response_column, area_column, path);
}

/// Parses a census table using the covariate schema learned from the survey.
/// Extra columns (for instance a response) are ignored.
inline CensusDataset read_census(const csv::Table& table, const std::string& area_column,
                                 const CovariateSchema& schema, const std::string& source = "census") {
  auto aj = table.column(area_column);
  if (!aj) throw SchemaError(source + " lacks area column '" + area_column + "'");
  if (table.rows.empty()) throw EmptyInputError(source + " has no data rows");
  CensusDataset c;
  c.X = detail::encode(table, schema, source);
  c.columns = schema.encoded_names();
  c.area = detail::area_column(table, *aj, source);
  c.validate();
  return c;
}

inline CensusDataset load_census(const std::string& path, const std::string& area_column,
                                 const CovariateSchema& schema) {
  return read_census(csv::read_file(path), area_column, schema, path);
}

/// Writes the survey with encoded (numeric) covariates: area, response, X.
inline void write_survey(std::ostream& out, const SurveyDataset& s, const std::string& response_column = "y",
                         const std::string& area_column = "area") {
  std::vector<std::string> fields{area_column, response_column};
  fields.insert(fields.end(), s.columns.begin(), s.columns.end());
  csv::write_row(out, fields);
  for (std::size_t i = 0; i < s.n(); ++i) {
    fields.assign({s.area[i], csv::format_double(s.y[i])});
    for (Eigen::Index j = 0; j < s.X.cols(); ++j) fields.push_back(csv::format_double(s.X(static_cast<Eigen::Index>(i), j)));
    csv::write_row(out, fields);
  }
}

inline void write_census(std::ostream& out, const CensusDataset& c, const std::vector<double>* response = nullptr,
                         const std::string& area_column = "area", const std::string& response_column = "y") {
  std::vector<std::string> fields{area_column};
  if (response) fields.push_back(response_column);
  fields.insert(fields.end(), c.columns.begin(), c.columns.end());
  csv::write_row(out, fields);
  for (std::size_t i = 0; i < c.N(); ++i) {
    fields.assign({c.area[i]});
    if (response) fields.push_back(csv::format_double((*response)[i]));
    for (Eigen::Index j = 0; j < c.X.cols(); ++j) fields.push_back(csv::format_double(c.X(static_cast<Eigen::Index>(i), j)));
    csv::write_row(out, fields);
  }
}

/// Numeric-only schema for datasets built in memory.
inline CovariateSchema numeric_schema(const std::vector<std::string>& names) {
  CovariateSchema schema;
  for (const auto& n : names) schema.columns.push_back({n, {}});
  return schema;
}

/// Rows of a survey selected by index, in the given order.
inline SurveyDataset subset(const SurveyDataset& s, const std::vector<std::size_t>& rows) {
  SurveyDataset out;
  out.columns = s.columns;
  out.schema = s.schema;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), s.X.cols());
  out.y.reserve(rows.size());
  out.area.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.X.row(static_cast<Eigen::Index>(k)) = s.X.row(static_cast<Eigen::Index>(rows[k]));
    out.y.push_back(s.y[rows[k]]);
    out.area.push_back(s.area[rows[k]]);
  }
  return out;
}

}  // namespace merf
