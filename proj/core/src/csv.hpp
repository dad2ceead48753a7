#pragma once

// Minimal RFC 4180 reader: quoted fields, doubled quotes, embedded newlines,
// CRLF line endings and a leading UTF-8 BOM. Not installed.

#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsa::detail {

struct CsvRecord {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

class CsvSyntaxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<CsvRecord> read_csv(std::istream& in);

}  // namespace tsa::detail
