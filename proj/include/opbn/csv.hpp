#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace opbn {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Minimal CSV writer: unquoted cells, LF line endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream os_;
  std::filesystem::path path_;
  std::size_t columns_;
};

/// Reads a CSV written by CsvWriter. The header must equal `expected_header`.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::vector<std::string>& expected_header);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace opbn
