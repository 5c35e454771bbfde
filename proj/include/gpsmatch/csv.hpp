#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"

namespace gpsmatch {

/// Column-name mapping for tabular input. An empty outcome name means the
/// outcome column is not read at all; an empty covariate list means "every
/// column not claimed by another role".
struct Schema {
  std::string exposure = "w";
  std::string outcome = "y";
  std::vector<std::string> covariates;
  std::string offset;
  std::string id;                   // empty: a column named "id" is used when present
  std::vector<std::string> ignore;  // never read, never inferred as covariates
};

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw InputError("cannot format number");
  return std::string(buf, ptr);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_cell(std::string_view cell, std::size_t line_no, std::string_view column) {
  cell = trim(cell);
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("row " + std::to_string(line_no) + ", column '" + std::string(column) + "': " + why);
  };
  if (cell.empty()) throw fail("empty cell");
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) throw fail("'" + std::string(cell) + "' is not a number");
  if (!std::isfinite(value)) throw fail("non-finite value");
  return value;
}

}  // namespace detail

inline Dataset read_dataset(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("input is empty: missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header;
  for (auto h : detail::split_commas(line)) header.emplace_back(detail::trim(h));

  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    throw SchemaError("missing column '" + name + "'");
  };

  const std::size_t w_col = column_of(schema.exposure);
  std::optional<std::size_t> y_col, off_col, id_col;
  if (!schema.outcome.empty()) y_col = column_of(schema.outcome);
  if (!schema.offset.empty()) off_col = column_of(schema.offset);
  if (!schema.id.empty()) {
    id_col = column_of(schema.id);
  } else if (std::find(header.begin(), header.end(), "id") != header.end()) {
    id_col = column_of("id");
  }
  auto ignored = [&](std::size_t k) {
    return std::find(schema.ignore.begin(), schema.ignore.end(), header[k]) != schema.ignore.end();
  };

  std::vector<std::size_t> c_cols;
  std::vector<std::string> c_names;
  if (schema.covariates.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (k == w_col || k == y_col || k == off_col || k == id_col || ignored(k)) continue;
      c_cols.push_back(k);
      c_names.push_back(header[k]);
    }
  } else {
    for (const auto& name : schema.covariates) {
      c_cols.push_back(column_of(name));
      c_names.push_back(name);
    }
  }

  std::vector<double> w, y, off, cells;
  std::vector<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    w.push_back(detail::parse_cell(fields[w_col], line_no, header[w_col]));
    if (y_col) y.push_back(detail::parse_cell(fields[*y_col], line_no, header[*y_col]));
    if (off_col) off.push_back(detail::parse_cell(fields[*off_col], line_no, header[*off_col]));
    if (id_col) ids.emplace_back(detail::trim(fields[*id_col]));
    for (auto k : c_cols) cells.push_back(detail::parse_cell(fields[k], line_no, header[k]));
  }

  const auto n = static_cast<Eigen::Index>(w.size());
  if (n < 2) throw SizeError("dataset needs at least 2 rows, found " + std::to_string(n));
  const auto q = static_cast<Eigen::Index>(c_cols.size());
  Matrix c(n, q);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < q; ++k) c(j, k) = cells[static_cast<std::size_t>(j * q + k)];
  }
  auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval(); };
  std::optional<Vector> yv, offv;
  if (y_col) yv = to_vec(y);
  if (off_col) offv = to_vec(off);
  return Dataset(DesignData(to_vec(w), std::move(c), std::move(c_names)), std::move(yv), std::move(offv), std::move(ids));
}

inline Dataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return read_dataset(in, schema);
}

/// Writes id, exposure, [outcome], [offset], covariates. Values are written
/// in shortest round-trip form, so reading the file back is bit-exact.
inline void write_dataset(std::ostream& out, const Dataset& data, const std::string& exposure_name = "w",
                          const std::string& outcome_name = "y", const std::string& offset_name = "offset") {
  const auto& d = data.design();
  out << "id," << exposure_name;
  if (data.has_outcomes()) out << ',' << outcome_name;
  if (data.has_offsets()) out << ',' << offset_name;
  for (const auto& name : d.covariate_names()) out << ',' << name;
  out << '\n';
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out << data.unit_ids()[j] << ',' << format_double(d.exposure(j));
    if (data.has_outcomes()) out << ',' << format_double(data.outcomes()[jj]);
    if (data.has_offsets()) out << ',' << format_double(data.offsets()[jj]);
    for (Eigen::Index k = 0; k < d.covariates().cols(); ++k) out << ',' << format_double(d.covariates()(jj, k));
    out << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_dataset(out, data);
}

}  // namespace gpsmatch
