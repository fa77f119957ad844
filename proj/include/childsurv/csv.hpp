#pragma once

// Minimal CSV reading/writing: header row, comma separated, optional double
// quotes around fields, '.' decimal point. Doubles are written in shortest
// round-trip form so that re-reading reproduces them exactly.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "childsurv/error.hpp"

namespace childsurv::csv {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

class Table {
 public:
  Table() = default;
  Table(std::vector<std::string> header, std::string source)
      : header_(std::move(header)), source_(std::move(source)) {
    for (std::size_t i = 0; i < header_.size(); ++i) index_[header_[i]] = i;
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::string& source() const { return source_; }
  std::size_t rows() const { return rows_.size(); }
  bool has(const std::string& col) const { return index_.count(col) > 0; }

  void add_row(std::vector<std::string> row, std::size_t line) {
    if (row.size() != header_.size())
      throw FormatError(source_ + ":" + std::to_string(line) + ": expected " +
                        std::to_string(header_.size()) + " fields, got " +
                        std::to_string(row.size()));
    rows_.push_back(std::move(row));
    lines_.push_back(line);
  }

  const std::string& cell(std::size_t r, const std::string& col) const {
    const auto it = index_.find(col);
    if (it == index_.end()) throw FormatError(source_ + ": missing column '" + col + "'");
    return rows_[r][it->second];
  }

  std::string where(std::size_t r) const { return source_ + ":" + std::to_string(lines_[r]); }

  void require(std::initializer_list<const char*> cols) const {
    for (const char* c : cols)
      if (!has(c)) throw FormatError(source_ + ": missing column '" + std::string(c) + "'");
  }

 private:
  std::vector<std::string> header_;
  std::string source_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

inline Table parse(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
      line.erase(0, 3);
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw FormatError(source + ": empty file, header row required");
  Table t(split_line(line), source);
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    t.add_row(split_line(line), lineno);
  }
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return parse(in, path);
}

inline double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw FormatError(where + ": '" + s + "' is not a number");
  return v;
}

inline long to_long(const std::string& s, const std::string& where) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(where + ": '" + s + "' is not an integer");
  return v;
}

inline bool to_bool(const std::string& s, const std::string& where) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "no") return false;
  throw FormatError(where + ": '" + s + "' is not a boolean");
}

inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <class... Ts>
  Writer& row(const Ts&... xs) {
    bool first = true;
    ((out_ << (first ? "" : ",") << field(xs), first = false), ...);
    out_ << '\n';
    return *this;
  }

  Writer& row(const std::vector<std::string>& xs) {
    for (std::size_t i = 0; i < xs.size(); ++i) out_ << (i ? "," : "") << xs[i];
    out_ << '\n';
    return *this;
  }

 private:
  static std::string field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  static std::string field(const char* s) { return field(std::string(s)); }
  static std::string field(double v) { return fmt(v); }
  static std::string field(int v) { return fmt(v); }
  static std::string field(long v) { return fmt(v); }
  static std::string field(std::size_t v) { return std::to_string(v); }

  std::ostream& out_;
};

}  // namespace childsurv::csv
