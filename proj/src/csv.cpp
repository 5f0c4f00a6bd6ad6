#include "expt/csv.hpp"

#include <charconv>
#include <fstream>
#include <system_error>

#include "expt/errors.hpp"

namespace expt::csv {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw InputError("csv: missing column '" + std::string(name) + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    cells.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

Table read_numeric(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Table table;
  std::string line;
  if (!std::getline(in, line)) throw InputError("csv '" + path + "': missing header");
  // UTF-8 byte order mark
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  table.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != table.header.size())
      throw InputError("csv '" + path + "' line " + std::to_string(lineno) + ": expected " +
                       std::to_string(table.header.size()) + " cells, got " + std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), row[i]);
      if (ec != std::errc() || ptr != c.data() + c.size())
        throw InputError("csv '" + path + "' line " + std::to_string(lineno) + ": bad number '" + c + "'");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace expt::csv
