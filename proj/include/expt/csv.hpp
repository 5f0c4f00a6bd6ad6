#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace expt::csv {

/// Numeric table with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column; throws InputError if absent.
  std::size_t column(std::string_view name) const;
};

/// Reads a comma-separated file whose body cells are all numeric
/// ('.' decimal separator). Throws IoError when the file cannot be read and
/// InputError on malformed content.
Table read_numeric(const std::string& path);

std::vector<std::string> split_line(std::string_view line);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace expt::csv
