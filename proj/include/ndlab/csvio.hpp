#pragma once

#include <string>
#include <vector>

namespace ndlab {

// Shortest round-trip formatting for doubles (printf %.17g semantics but
// trimmed): the emitted text parses back to the exact same bits.
std::string format_double(double v);

std::string join_csv(const std::vector<std::string>& fields);
std::vector<std::string> split_csv_line(const std::string& line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Reads a simple comma-separated file (no quoting) with one header line.
// Throws IoError on missing file; DataError on ragged rows.
CsvTable read_csv(const std::string& path);

// Writes header + rows; throws IoError when the file cannot be created.
void write_csv(const std::string& path, const CsvTable& table);

double parse_double_strict(const std::string& s, const std::string& context);
long parse_long_strict(const std::string& s, const std::string& context);

}  // namespace ndlab
