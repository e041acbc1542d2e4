#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "igmrf/error.hpp"
#include "igmrf/sampler.hpp"

namespace igmrf {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes `content` to `path`, creating parent directories; throws IoError on failure.
inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double_cell(const std::string& cell, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  // "nan"/"inf" are legitimate trace values (e.g. an undefined R2).
  if (used == 0 || used != cell.size()) throw IoError(where + ": malformed number `" + cell + "`");
  return v;
}

/// Observation CSV `element_id,value` with a header; ids are 0-based element
/// indices and every element must appear exactly once.
inline Eigen::VectorXd read_observations(std::istream& in, int element_count) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("observation file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "element_id,value") throw ConfigError("observation header must be `element_id,value`, got `" + line + "`");
  Eigen::VectorXd y(element_count);
  std::vector<char> seen(static_cast<std::size_t>(element_count), 0);
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw ConfigError("observation line " + std::to_string(lineno) + ": expected 2 fields");
    long id = -1;
    try {
      std::size_t used = 0;
      id = std::stol(cells[0], &used);
      if (used != cells[0].size()) id = -1;
    } catch (const std::exception&) {
      id = -1;
    }
    if (id < 0 || id >= element_count) {
      throw ConfigError("observation line " + std::to_string(lineno) + ": element id `" + cells[0] + "` out of range");
    }
    if (seen[static_cast<std::size_t>(id)]) throw ConfigError("duplicate observation for element " + cells[0]);
    seen[static_cast<std::size_t>(id)] = 1;
    double v = 0.0;
    try {
      v = parse_double_cell(cells[1], "observation line " + std::to_string(lineno));
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    if (!std::isfinite(v)) throw ConfigError("observation line " + std::to_string(lineno) + ": non-finite value");
    y[id] = v;
  }
  for (int m = 0; m < element_count; ++m) {
    if (!seen[static_cast<std::size_t>(m)]) throw ConfigError("no observation for element " + std::to_string(m));
  }
  return y;
}

inline Eigen::VectorXd load_observations(const std::filesystem::path& path, int element_count) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open observation file " + path.string());
  return read_observations(in, element_count);
}

inline std::string format_observations(const Eigen::VectorXd& y) {
  std::string out = "element_id,value\n";
  for (Eigen::Index m = 0; m < y.size(); ++m) out += std::to_string(m) + "," + format_double(y[m]) + "\n";
  return out;
}

/// Scalar trace: header of column names, one row per retained iteration.
inline std::string format_trace(const TraceRecord& trace) {
  std::string out;
  for (std::size_t c = 0; c < trace.scalar_names.size(); ++c) out += (c ? "," : "") + trace.scalar_names[c];
  out += "\n";
  for (const auto& row : trace.scalars) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ",";
      out += c == 0 ? std::to_string(static_cast<long>(row[c])) : format_double(row[c]);
    }
    out += "\n";
  }
  return out;
}

struct ScalarTrace {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == name) return c;
    }
    throw IoError("trace has no column `" + name + "`");
  }
};

/// Parses a scalar trace; every row must be complete and newline-terminated.
inline ScalarTrace parse_trace(const std::string& text) {
  ScalarTrace t;
  if (text.empty()) throw IoError("trace file is empty");
  if (text.back() != '\n') throw IoError("trace file is truncated (no final newline)");
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  t.names = split_csv_line(line);
  if (t.names.empty() || t.names.front() != "iteration") throw IoError("trace header must start with `iteration`");
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cells = split_csv_line(line);
    if (cells.size() != t.names.size()) {
      throw IoError("trace line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields, expected " +
                    std::to_string(t.names.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double_cell(c, "trace line " + std::to_string(lineno)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Field snapshots: `iteration,v0,...,v{n-1}` per row.
inline std::string format_snapshots(const std::vector<long>& iterations, const std::vector<Eigen::VectorXd>& values) {
  const Eigen::Index n = values.empty() ? 0 : values.front().size();
  std::string out = "iteration";
  for (Eigen::Index j = 0; j < n; ++j) out += ",v" + std::to_string(j);
  out += "\n";
  for (std::size_t k = 0; k < values.size(); ++k) {
    out += std::to_string(iterations[k]);
    for (Eigen::Index j = 0; j < values[k].size(); ++j) out += "," + format_double(values[k][j]);
    out += "\n";
  }
  return out;
}

struct Snapshots {
  std::vector<long> iterations;
  std::vector<Eigen::VectorXd> values;
};

inline Snapshots parse_snapshots(const std::string& text, const std::string& what) {
  Snapshots s;
  if (text.empty() || text.back() != '\n') throw IoError(what + " snapshot file is truncated");
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const std::size_t width = split_csv_line(line).size();
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    if (cells.size() != width) throw IoError(what + " snapshot row has the wrong number of fields");
    s.iterations.push_back(static_cast<long>(parse_double_cell(cells[0], what)));
    Eigen::VectorXd v(static_cast<Eigen::Index>(width - 1));
    for (std::size_t j = 1; j < width; ++j) v[static_cast<Eigen::Index>(j - 1)] = parse_double_cell(cells[j], what);
    s.values.push_back(std::move(v));
  }
  return s;
}

inline std::string format_vector_csv(const std::string& header, const Eigen::VectorXd& v) {
  std::string out = "element_id," + header + "\n";
  for (Eigen::Index m = 0; m < v.size(); ++m) out += std::to_string(m) + "," + format_double(v[m]) + "\n";
  return out;
}

}  // namespace igmrf
