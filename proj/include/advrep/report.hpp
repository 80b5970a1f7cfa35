#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diagnostics.hpp"
#include "errors.hpp"
#include "stats.hpp"

namespace advrep {

inline constexpr const char* kMetricsHeader = "source,target,model,trained,mask_size,DA,RA,r0,rN,g_l1,seed,config_hash";

/// Round-trip decimal form of a double.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.source_name << ',' << r.target_name << ',' << r.model_tag << ',' << (r.trained ? "true" : "false") << ','
     << r.mask_size << ',' << fmt17(r.da) << ',' << fmt17(r.ra) << ',' << fmt17(r.r0) << ',' << fmt17(r.rn) << ','
     << fmt17(r.g_l1) << ',' << r.seed << ',' << r.config_hash;
  return os.str();
}

inline nlohmann::json metrics_json(const MetricsRecord& r) {
  return nlohmann::json{{"source", r.source_name}, {"target", r.target_name}, {"model", r.model_tag},
                        {"trained", r.trained},    {"mask_size", r.mask_size}, {"DA", r.da},
                        {"RA", r.ra},              {"r0", r.r0},               {"rN", r.rn},
                        {"g_l1", r.g_l1},          {"seed", r.seed},           {"config_hash", r.config_hash}};
}

/// Append-only metrics sink: <dir>/metrics.csv and <dir>/metrics.jsonl.
/// One writer serializes all appends.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& dir) : csv_(dir / "metrics.csv"), jsonl_(dir / "metrics.jsonl") {
    std::filesystem::create_directories(dir);
  }

  void append(const MetricsRecord& r) {
    std::lock_guard lock(mu_);
    const bool fresh = !std::filesystem::exists(csv_) || std::filesystem::file_size(csv_) == 0;
    std::ofstream csv(csv_, std::ios::app);
    std::ofstream js(jsonl_, std::ios::app);
    if (!csv || !js) throw IoError("cannot append to " + csv_.string());
    if (fresh) csv << kMetricsHeader << '\n';
    csv << metrics_csv_row(r) << '\n';
    js << metrics_json(r).dump() << '\n';
  }

  const std::filesystem::path& csv_path() const { return csv_; }
  const std::filesystem::path& jsonl_path() const { return jsonl_; }

 private:
  std::filesystem::path csv_, jsonl_;
  std::mutex mu_;
};

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "true";
  for (std::size_t c = 0; c < cm.classes; ++c) os << ',' << c;
  os << ",other\n";
  for (std::size_t r = 0; r < cm.classes; ++r) {
    os << r;
    for (std::size_t c = 0; c <= cm.classes; ++c) os << ',' << cm.at(r, c);
    os << '\n';
  }
}

/// A CSV file read as named string columns.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    std::string list;
    for (const auto& h : header) list += (list.empty() ? "" : ", ") + h;
    throw SchemaError("unknown column '" + name + "' (available: " + list + ")");
  }

  /// Column values as numbers; true/false read as 1/0.
  std::vector<double> numeric(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string& s = rows[i].at(c);
      if (s == "true") {
        out.push_back(1.0);
      } else if (s == "false") {
        out.push_back(0.0);
      } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(s, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != s.size() || s.empty())
          throw SchemaError("column '" + name + "' row " + std::to_string(i + 1) + " is not numeric: '" + s + "'");
        out.push_back(v);
      }
    }
    return out;
  }
};

/// Plain comma-separated reader (no quoting; metrics fields never contain commas).
inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    return f;
  };
  Table t;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split(line);
    if (t.header.empty()) {
      t.header = std::move(f);
    } else if (line == kMetricsHeader || f == t.header) {
      continue;  // concatenated files repeat the header
    } else {
      if (f.size() != t.header.size())
        throw FormatError(path.string() + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                          std::to_string(f.size()) + " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(f));
    }
  }
  if (t.header.empty()) throw FormatError(path.string() + " is empty");
  return t;
}

inline std::string correlation_csv_header() { return "x,y,method,coefficient,p_value,n_permutations,seed,exact,n"; }

inline std::string correlation_csv_row(const std::string& x, const std::string& y, const stats::CorrelationResult& r,
                                       std::size_t n) {
  std::ostringstream os;
  os << x << ',' << y << ',' << stats::to_string(r.method) << ',' << fmt17(r.coefficient) << ',' << fmt17(r.p_value)
     << ',' << r.n_permutations << ',' << r.seed << ',' << (r.exact ? "true" : "false") << ',' << n;
  return os.str();
}

}  // namespace advrep
