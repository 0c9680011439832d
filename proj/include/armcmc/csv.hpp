#pragma once

// Observation streams as CSV: a header row, then one row per sample with
// the time index, input columns and output columns.

#include "armcmc/core.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace armcmc::csv {

/// Shortest representation that parses back to the same double.
inline std::string format(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{}) throw Error("csv: cannot parse number '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) cells.emplace_back();
  return cells;
}

struct Schema {
  std::string time_column = "time_index";
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

inline void write_observations(std::ostream& out, std::span<const Observation> stream, const Schema& schema) {
  out << schema.time_column;
  for (const auto& c : schema.inputs) out << ',' << c;
  for (const auto& c : schema.outputs) out << ',' << c;
  out << '\n';
  for (const auto& obs : stream) {
    if (obs.input.size() != schema.inputs.size() || obs.output.size() != schema.outputs.size())
      throw Error("csv: observation does not match schema");
    out << obs.time_index;
    for (double v : obs.input) out << ',' << format(v);
    for (double v : obs.output) out << ',' << format(v);
    out << '\n';
  }
}

/// Reads the columns named in `schema`; other columns are ignored.
inline std::vector<Observation> read_observations(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error("csv: missing column '" + name + "'");
  };
  const std::size_t time_col = column(schema.time_column);
  std::vector<std::size_t> in_cols;
  std::vector<std::size_t> out_cols;
  for (const auto& c : schema.inputs) in_cols.push_back(column(c));
  for (const auto& c : schema.outputs) out_cols.push_back(column(c));

  std::vector<Observation> stream;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() < header.size()) throw Error("csv: short row " + std::to_string(row));
    Observation obs;
    obs.time_index = static_cast<std::uint64_t>(parse_double(cells[time_col]));
    for (auto c : in_cols) obs.input.push_back(parse_double(cells[c]));
    for (auto c : out_cols) obs.output.push_back(parse_double(cells[c]));
    if (!stream.empty() && obs.time_index <= stream.back().time_index)
      throw Error("csv: time_index not strictly increasing at row " + std::to_string(row));
    stream.push_back(std::move(obs));
  }
  return stream;
}

}  // namespace armcmc::csv
