#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace povrate::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC-4180-ish: comma separated, optional double quotes, "" escapes a quote.
std::vector<std::string> split_line(std::string_view line);
Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

// Shortest representation that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace povrate::csv
