#pragma once

// Minimal CSV support: comma-separated, no quoting, '.' decimal point.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "foodweb/errors.hpp"

namespace foodweb::csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string path;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  Table t;
  t.path = path;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ParseError("empty file: " + path);
  return t;
}

inline double to_double(const std::string& cell, const std::string& context) {
  if (cell.empty()) throw ParseError("empty numeric cell at " + context);
  char* end = nullptr;
  double v = std::strtod(cell.c_str(), &end);
  if (end == nullptr || *end != '\0')
    throw ParseError("bad number '" + cell + "' at " + context);
  return v;
}

// Round-trip-exact formatting for doubles; keeps chain files byte-stable.
inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace foodweb::csv
