#include "amtu/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "amtu/error.hpp"

namespace amtu {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) fail(ErrorCode::ParseError, "missing CSV column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() < table.header.size()) cells.resize(table.header.size());
    table.rows.push_back(std::move(cells));
  }
  if (first) fail(ErrorCode::ParseError, path + " has no header row");
  return table;
}

double parse_double(const std::string& cell) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(ErrorCode::ParseError, "not a number: '" + cell + "'");
  return v;
}

long long parse_int(const std::string& cell) {
  long long v = 0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(ErrorCode::ParseError, "not an integer: '" + cell + "'");
  return v;
}

CsvWriter::CsvWriter(const std::string& path, std::string_view header) : path_(path) {
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) fail(ErrorCode::IoFailure, "cannot write " + path);
  write(std::string(header) + "\n");
}

CsvWriter::~CsvWriter() {
  if (file_) std::fclose(file_);
}

void CsvWriter::write(const std::string& line) {
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size()) {
    fail(ErrorCode::IoFailure, "short write to " + path_);
  }
}

void CsvWriter::flush() { std::fflush(file_); }

}  // namespace amtu
