#pragma once

// File formats: CSV tables, key = value configs and crash-safe writes.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emrp/data_model.hpp"

namespace emrp::io {

// Writes to a temporary file in the same directory, then renames it over
// `path`, so readers never see a partially written file.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// A header row plus data rows. Quoted fields are not supported; cells are
// trimmed of surrounding whitespace.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index, or nullopt when absent.
  std::optional<std::size_t> column(const std::string& name) const;
};

// Throws ValidationError with the line number on ragged rows or a missing header.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);

// Parses `key = value` lines; `#` starts a comment. Throws ValidationError
// naming the line for malformed lines and duplicate keys.
struct Config {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> lines;  // key -> 1-based line number

  bool has(const std::string& key) const { return values.count(key) > 0; }
  const std::string& get(const std::string& key) const;  // throws when missing
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;
  // Keys starting with `prefix`, in sorted order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  // FNV-1a over the sorted key/value pairs, as 16 hex digits; independent of
  // the order of lines in the file.
  std::string hash() const;
};

Config parse_config(const std::string& text);
Config read_config(const std::string& path);

double parse_double(const std::string& text, const std::string& what);
long long parse_integer(const std::string& text, const std::string& what);

// Margins file with columns m (1-based) and count.
CellFrame read_margins(const std::string& path, std::size_t x_levels);

// Joint count file with columns j (1-based) and count.
std::vector<double> read_joint_counts(const std::string& path, std::size_t joint_cells);

}  // namespace emrp::io
