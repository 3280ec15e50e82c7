#include "sharpnoise/results.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sharpnoise/error.hpp"

namespace sharpnoise {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) return "0";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw DataError(DataError::Kind::kBadFormat, kind + " csv: missing column '" + std::string(name) + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string schema_line(std::string_view kind) {
  return "# sharpnoise-" + std::string(kind) + " v" + std::to_string(kCsvSchemaVersion);
}

double to_double(const std::string& s, const fs::path& path) {
  if (s == "nan") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError(DataError::Kind::kBadFormat, path.string() + ": not a number '" + s + "'");
}

std::size_t to_size(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw DataError(DataError::Kind::kBadFormat, path.string() + ": not an integer '" + s + "'");
}

}  // namespace

void write_csv(const fs::path& path, std::string_view kind, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << schema_line(kind) << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw Error(path.string() + ": row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i].find_first_of(",\n") != std::string::npos) {
        throw Error(path.string() + ": field contains a separator: '" + row[i] + "'");
      }
      out << (i ? "," : "") << row[i];
    }
    out << '\n';
  }
}

CsvTable read_csv(const fs::path& path, std::string_view kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(DataError::Kind::kBadFormat, path.string() + ": empty file");
  const std::string prefix = "# sharpnoise-" + std::string(kind) + " v";
  if (line.rfind(prefix, 0) != 0) {
    throw DataError(DataError::Kind::kBadFormat,
                    path.string() + ": expected a '" + std::string(kind) + "' schema line, got '" + line + "'");
  }
  if (line.substr(prefix.size()) != std::to_string(kCsvSchemaVersion)) {
    throw DataError(DataError::Kind::kBadFormat, path.string() + ": unsupported schema version '" +
                                                     line.substr(prefix.size()) + "'");
  }
  CsvTable t;
  t.kind = kind;
  if (!std::getline(in, line)) throw DataError(DataError::Kind::kBadFormat, path.string() + ": missing header");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size()) {
      throw DataError(DataError::Kind::kBadFormat, path.string() + ": ragged row '" + line + "'");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// --- robustness ---------------------------------------------------------------

json robustness_summary(const CurveFile& file) {
  json points = json::array();
  for (const auto& p : file.curve.points) {
    points.push_back({{"sigma_c", p.sigma_c}, {"mean", p.mean}, {"std", p.std}, {"accuracies", p.accuracies}});
  }
  return {{"model_id", file.curve.model_id}, {"method", file.method}, {"adabs", file.adabs}, {"points", points}};
}

void write_robustness(const fs::path& csv, const fs::path& summary, const CurveFile& file) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : file.curve.points) {
    for (std::size_t r = 0; r < p.accuracies.size(); ++r) {
      rows.push_back({file.curve.model_id, file.method, file.adabs ? "on" : "off", format_number(p.sigma_c),
                      std::to_string(r), format_number(p.accuracies[r])});
    }
  }
  write_csv(csv, "robustness", {"model_id", "method", "adabs", "sigma_c", "run", "accuracy"}, rows);
  if (!summary.empty()) {
    std::ofstream out(summary, std::ios::binary);
    if (!out) throw Error("cannot write " + summary.string());
    out << robustness_summary(file).dump(2) << '\n';
  }
}

CurveFile read_robustness(const fs::path& csv) {
  const CsvTable t = read_csv(csv, "robustness");
  const std::size_t c_id = t.column("model_id"), c_method = t.column("method"), c_adabs = t.column("adabs"),
                    c_sigma = t.column("sigma_c"), c_run = t.column("run"), c_acc = t.column("accuracy");
  CurveFile file;
  std::map<double, std::map<std::size_t, double>> levels;
  for (const auto& row : t.rows) {
    if (file.curve.model_id.empty()) {
      file.curve.model_id = row[c_id];
      file.method = row[c_method];
      file.adabs = row[c_adabs] == "on";
    } else if (row[c_id] != file.curve.model_id) {
      throw DataError(DataError::Kind::kBadFormat, csv.string() + ": more than one model_id");
    }
    levels[to_double(row[c_sigma], csv)][to_size(row[c_run], csv)] = to_double(row[c_acc], csv);
  }
  for (const auto& [sigma, runs] : levels) {
    std::vector<double> acc;
    for (const auto& [run, a] : runs) acc.push_back(a);
    file.curve.points.push_back(summarize_runs(sigma, std::move(acc)));
  }
  return file;
}

// --- sharpness ----------------------------------------------------------------

void write_sharpness(const fs::path& csv, std::span<const SharpnessReport> reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    rows.push_back({r.model_id, std::string(metric_name(r.metric)), format_number(r.rho), std::to_string(r.m),
                    std::to_string(r.num_batches), format_number(r.value)});
  }
  write_csv(csv, "sharpness", {"model_id", "metric", "rho", "m", "batches", "value"}, rows);
}

std::vector<SharpnessReport> read_sharpness(const fs::path& csv) {
  const CsvTable t = read_csv(csv, "sharpness");
  const std::size_t c_id = t.column("model_id"), c_metric = t.column("metric"), c_rho = t.column("rho"),
                    c_m = t.column("m"), c_b = t.column("batches"), c_v = t.column("value");
  std::vector<SharpnessReport> out;
  for (const auto& row : t.rows) {
    SharpnessReport r;
    r.model_id = row[c_id];
    r.metric = parse_metric(row[c_metric]);
    r.rho = to_double(row[c_rho], csv);
    r.m = to_size(row[c_m], csv);
    r.num_batches = to_size(row[c_b], csv);
    r.value = to_double(row[c_v], csv);
    out.push_back(std::move(r));
  }
  return out;
}

void write_train_log(const fs::path& csv, std::span<const EpochLog> log) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : log) {
    rows.push_back({std::to_string(e.epoch), format_number(e.lr), format_number(e.loss), format_number(e.perturbed_loss),
                    format_number(e.train_accuracy), format_number(e.mean_epsilon_norm),
                    format_number(e.max_epsilon_norm), std::to_string(e.degenerate_steps), std::to_string(e.clipped)});
  }
  write_csv(csv, "train-log",
            {"epoch", "lr", "loss", "perturbed_loss", "train_accuracy", "mean_epsilon_norm", "max_epsilon_norm",
             "degenerate_steps", "clipped"},
            rows);
}

// --- correlation ----------------------------------------------------------------

void write_correlation(const fs::path& csv, std::span<const CorrelationCell> cells) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : cells) {
    rows.push_back({std::string(metric_name(c.metric)), format_number(c.rho), format_number(c.sigma_c),
                    std::to_string(c.model_ids.size()), format_number(c.r)});
  }
  write_csv(csv, "correlation", {"metric", "rho", "sigma_c", "models", "pearson_r"}, rows);
}

std::vector<CorrelationRow> read_correlation(const fs::path& csv) {
  const CsvTable t = read_csv(csv, "correlation");
  const std::size_t c_metric = t.column("metric"), c_rho = t.column("rho"), c_sigma = t.column("sigma_c"),
                    c_n = t.column("models"), c_r = t.column("pearson_r");
  std::vector<CorrelationRow> out;
  for (const auto& row : t.rows) {
    out.push_back({parse_metric(row[c_metric]), to_double(row[c_rho], csv), to_double(row[c_sigma], csv),
                   to_size(row[c_n], csv), to_double(row[c_r], csv)});
  }
  return out;
}

void write_scatter(const fs::path& csv, const CorrelationCell& cell, std::span<const std::string> methods) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < cell.model_ids.size(); ++i) {
    rows.push_back({cell.model_ids[i], i < methods.size() ? methods[i] : std::string(),
                    format_number(cell.sharpness[i]), format_number(cell.gaps[i])});
  }
  write_csv(csv, "scatter", {"model_id", "method", "sharpness", "gap"}, rows);
}

// --- svg ------------------------------------------------------------------------

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

void write_svg_plot(const fs::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, std::span<const SvgSeries> series, bool lines) {
  constexpr double W = 640, H = 440, L = 70, R = 170, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double padx = 0.05 * (x1 - x0), pady = 0.05 * (y1 - y0);
  x0 -= padx, x1 += padx, y0 -= pady, y1 += pady;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << px(W / 2 - R / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  o << "<rect x=\"" << px(L) << "\" y=\"" << px(T) << "\" width=\"" << px(W - L - R) << "\" height=\"" << px(H - T - B)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << px(sx(xv)) << "\" y=\"" << px(H - B + 16) << "\" text-anchor=\"middle\">" << format_number(std::round(xv * 1e4) / 1e4) << "</text>\n";
    o << "<text x=\"" << px(L - 6) << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">" << format_number(std::round(yv * 1e4) / 1e4) << "</text>\n";
  }
  o << "<text x=\"" << px(L + (W - L - R) / 2) << "\" y=\"" << px(H - 18) << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << px(T + (H - T - B) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << px(T + (H - T - B) / 2) << ")\">" << escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (lines && s.x.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << px(sx(s.x[i])) << "," << px(sy(s.y[i]));
      o << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i < s.err.size() && s.err[i] > 0.0) {
        o << "<line x1=\"" << px(sx(s.x[i])) << "\" x2=\"" << px(sx(s.x[i])) << "\" y1=\"" << px(sy(s.y[i] - s.err[i]))
          << "\" y2=\"" << px(sy(s.y[i] + s.err[i])) << "\" stroke=\"" << color << "\"/>\n";
      }
      o << "<circle cx=\"" << px(sx(s.x[i])) << "\" cy=\"" << px(sy(s.y[i])) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    o << "<circle cx=\"" << px(W - R + 14) << "\" cy=\"" << px(ly - 4) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    o << "<text x=\"" << px(W - R + 24) << "\" y=\"" << px(ly) << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << o.str();
}

}  // namespace sharpnoise
