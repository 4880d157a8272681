#pragma once

#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

namespace amtu {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by header name; throws ParseError when absent.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

/// Comma-separated, first line is the header, blank lines skipped. No quoting.
CsvTable read_csv(const std::string& path);

/// Strict decimal parse of a whole cell; throws ParseError.
double parse_double(const std::string& cell);
long long parse_int(const std::string& cell);

/// Line-oriented CSV output; the header is written on open. Throws IoFailure.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::string_view header);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  template <typename... Args>
  void row(fmt::format_string<Args...> format, Args&&... args) {
    auto line = fmt::format(format, std::forward<Args>(args)...);
    line.push_back('\n');
    write(line);
  }
  void flush();

 private:
  void write(const std::string& line);
  std::FILE* file_ = nullptr;
  std::string path_;
};

}  // namespace amtu
