#pragma once

// CSV and SVG artifacts. Every CSV starts with a schema line
//   # sharpnoise-<kind> v<version>
// followed by a column header; readers reject other kinds or versions.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sharpnoise/experiment.hpp"
#include "sharpnoise/hwnoise.hpp"
#include "sharpnoise/sharpness.hpp"

namespace sharpnoise {

inline constexpr int kCsvSchemaVersion = 1;

// Shortest-stable decimal rendering used in every artifact.
std::string format_number(double v);

struct CsvTable {
  std::string kind;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

void write_csv(const std::filesystem::path& path, std::string_view kind, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
// Throws DataError (kBadFormat) on a wrong kind, unknown version or ragged rows.
CsvTable read_csv(const std::filesystem::path& path, std::string_view kind);

struct CurveFile {
  std::string method;
  bool adabs = true;
  RobustnessCurve curve;
};

void write_robustness(const std::filesystem::path& csv, const std::filesystem::path& summary, const CurveFile& file);
CurveFile read_robustness(const std::filesystem::path& csv);
nlohmann::json robustness_summary(const CurveFile& file);

void write_sharpness(const std::filesystem::path& csv, std::span<const SharpnessReport> reports);
std::vector<SharpnessReport> read_sharpness(const std::filesystem::path& csv);

void write_train_log(const std::filesystem::path& csv, std::span<const EpochLog> log);

void write_correlation(const std::filesystem::path& csv, std::span<const CorrelationCell> cells);
struct CorrelationRow {
  SharpnessMetric metric;
  double rho;
  double sigma_c;
  std::size_t models;
  double r;
};
std::vector<CorrelationRow> read_correlation(const std::filesystem::path& csv);

// One row per model: (model_id, method, sharpness, gap).
void write_scatter(const std::filesystem::path& csv, const CorrelationCell& cell, std::span<const std::string> methods);

// Minimal standalone SVG plots.
struct SvgSeries {
  std::string label;
  std::vector<double> x, y, err;
};
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, std::span<const SvgSeries> series, bool lines);

}  // namespace sharpnoise
