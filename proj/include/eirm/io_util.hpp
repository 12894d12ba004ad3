#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eirm {

// Minimal delimited-text table. Lines starting with '#' are treated as
// comments and skipped on read (our own outputs carry a '#' header line).
struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

TextTable read_delimited(std::istream& in, char delim);

// Detects ',' vs '\t' from the header line.
TextTable read_delimited_auto(std::istream& in);

std::string csv_escape(const std::string& field);
std::string join_csv(const std::vector<std::string>& fields);

// Writes via temp file + rename so readers never observe partial output.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace eirm
