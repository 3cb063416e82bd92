#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "merf/merf.hpp"

namespace support {

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("merf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline merf::csv::Table table(const std::string& text) {
  std::istringstream in(text);
  return merf::csv::read(in);
}

/// y = b0 + X b + v_area + e with areas "a0".."a{D-1}" of the given sizes.
struct LinearData {
  merf::SurveyDataset survey;
  std::vector<double> v;
};

inline LinearData linear_data(const std::vector<std::size_t>& sizes, std::size_t p, double sd_v, double sd_e,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  LinearData d;
  auto& s = d.survey;
  s.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) s.columns.push_back("x" + std::to_string(k + 1));
  s.schema = merf::numeric_schema(s.columns);
  std::size_t row = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double v = sd_v * z(rng);
    d.v.push_back(v);
    for (std::size_t k = 0; k < sizes[i]; ++k, ++row) {
      double y = 10.0 + v + sd_e * z(rng);
      for (std::size_t c = 0; c < p; ++c) {
        const double x = z(rng) + 0.3 * static_cast<double>(i % 3);
        s.X(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = x;
        y += (static_cast<double>(c) + 1.0) * x;
      }
      s.y.push_back(y);
      s.area.push_back("a" + std::to_string(i));
    }
  }
  return d;
}

/// Census holding the survey rows plus `extra` fresh rows per area and
/// `oos_areas` additional unsampled areas.
inline merf::CensusDataset census_for(const merf::SurveyDataset& s, std::size_t extra, std::size_t oos_areas,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto g = s.groups();
  merf::CensusDataset c;
  c.columns = s.columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> area;
  for (std::size_t j = 0; j < s.n(); ++j) {
    std::vector<double> r(static_cast<std::size_t>(s.X.cols()));
    for (Eigen::Index k = 0; k < s.X.cols(); ++k) r[static_cast<std::size_t>(k)] = s.X(static_cast<Eigen::Index>(j), k);
    rows.push_back(r);
    area.push_back(s.area[j]);
  }
  auto fresh = [&](const std::string& label) {
    std::vector<double> r(static_cast<std::size_t>(s.X.cols()));
    for (auto& x : r) x = z(rng);
    rows.push_back(r);
    area.push_back(label);
  };
  for (const auto& label : g.labels)
    for (std::size_t k = 0; k < extra; ++k) fresh(label);
  for (std::size_t i = 0; i < oos_areas; ++i)
    for (std::size_t k = 0; k < extra + 5; ++k) fresh("out" + std::to_string(i));
  c.X.resize(static_cast<Eigen::Index>(rows.size()), s.X.cols());
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t k = 0; k < rows[j].size(); ++k) c.X(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[j][k];
  c.area = area;
  return c;
}

/// Collects warnings for the lifetime of the object.
struct CapturedWarnings {
  std::vector<std::string> messages;
  merf::log::ScopedSink sink{[this](const std::string& m) { messages.push_back(m); }};

  bool contains(const std::string& needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

}  // namespace support
