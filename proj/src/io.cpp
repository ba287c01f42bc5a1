#include "emrp/io.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "emrp/errors.hpp"

namespace emrp::io {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::random_device rd;
  fs::path tmp = target;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw ValidationError("cannot write " + tmp.string());
    os << content;
    os.flush();
    if (!os) throw ValidationError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw ValidationError("cannot move results into " + path + ": " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ValidationError("CSV has no header row");
  return t;
}

CsvTable read_csv(const std::string& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ValidationError("missing config key '" + key + "'");
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

namespace {
std::string where(const Config& c, const std::string& key) {
  const auto it = c.lines.find(key);
  return it == c.lines.end() ? key : "line " + std::to_string(it->second) + " (" + key + ")";
}
}  // namespace

double Config::number(const std::string& key) const {
  try {
    return parse_double(get(key), key);
  } catch (const ValidationError& e) {
    throw ValidationError(where(*this, key) + ": " + e.what());
  }
}

std::size_t Config::count(const std::string& key) const {
  long long v = 0;
  try {
    v = parse_integer(get(key), key);
  } catch (const ValidationError& e) {
    throw ValidationError(where(*this, key) + ": " + e.what());
  }
  if (v < 0) throw ValidationError(where(*this, key) + ": must be nonnegative");
  return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError(where(*this, key) + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> Config::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values) {
    if (k.rfind(prefix, 0) == 0) out.push_back(k);
  }
  return out;
}

std::string Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [k, v] : values) {
    feed(k);
    feed(v);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Config parse_config(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty key");
    if (c.values.count(key)) {
      throw ValidationError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    c.values.emplace(key, std::move(value));
    c.lines.emplace(std::move(key), lineno);
  }
  return c;
}

Config read_config(const std::string& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ValidationError(what + ": '" + text + "' is not a number");
  }
  return v;
}

long long parse_integer(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ValidationError(what + ": '" + text + "' is not an integer");
  }
  return v;
}

namespace {

std::vector<double> indexed_counts(const std::string& path, const std::string& index_col,
                                   std::optional<std::size_t> expected) {
  const auto t = read_csv(path);
  const auto ic = t.column(index_col);
  const auto cc = t.column("count");
  if (!ic || !cc) throw ValidationError(path + ": needs columns '" + index_col + "' and 'count'");
  const std::size_t n = expected ? *expected : t.rows.size();
  std::vector<double> out(n, 0.0);
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string ctx = path + " row " + std::to_string(r + 2);
    const auto idx = parse_integer(t.rows[r][*ic], ctx);
    if (idx < 1 || static_cast<std::size_t>(idx) > n) throw ValidationError(ctx + ": index out of range");
    if (seen[idx - 1]) throw ValidationError(ctx + ": duplicate index");
    seen[idx - 1] = true;
    out[idx - 1] = parse_double(t.rows[r][*cc], ctx);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw ValidationError(path + ": no count for index " + std::to_string(i + 1));
  }
  return out;
}

}  // namespace

CellFrame read_margins(const std::string& path, std::size_t x_levels) {
  auto margins = indexed_counts(path, "m", std::nullopt);
  const auto M = margins.size();
  return build_cell_frame(M, x_levels, std::move(margins));
}

std::vector<double> read_joint_counts(const std::string& path, std::size_t joint_cells) {
  return indexed_counts(path, "j", joint_cells);
}

}  // namespace emrp::io
