#include "ndlab/csvio.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ndlab/errors.hpp"

namespace ndlab {

std::string format_double(double v) {
  char buf[64];
  // Try shorter precisions first; take the first that round-trips exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, expected a header");
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << join_csv(table.header) << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw DataError(path + ": row with " + std::to_string(row.size()) +
                      " fields under a " + std::to_string(table.header.size()) +
                      "-field header");
    out << join_csv(row) << '\n';
  }
  if (!out) throw IoError("failed while writing " + path);
}

double parse_double_strict(const std::string& s, const std::string& context) {
  if (s.empty()) throw DataError(context + ": empty numeric field");
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + s.size())
    throw DataError(context + ": '" + s + "' is not a number");
  return v;
}

long parse_long_strict(const std::string& s, const std::string& context) {
  if (s.empty()) throw DataError(context + ": empty integer field");
  const char* begin = s.c_str();
  char* end = nullptr;
  long v = std::strtol(begin, &end, 10);
  if (end != begin + s.size())
    throw DataError(context + ": '" + s + "' is not an integer");
  return v;
}

}  // namespace ndlab
