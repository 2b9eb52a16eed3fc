#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "advt/errors.hpp"
#include "advt/training.hpp"

namespace advt::metrics {

inline constexpr std::string_view kHeader = "epoch,split,attack,accuracy,loss,wall_ms,gen_updates";

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw FormatError("cannot format number");
  return std::string(buf, end);
}

inline std::string format_row(const MetricsRecord& r) {
  std::string s = std::to_string(r.epoch);
  s += ',' + r.split + ',' + r.attack + ',' + format_double(r.accuracy) + ',' + format_double(r.loss) + ',' +
       format_double(r.wall_ms) + ',' + std::to_string(r.gen_updates);
  return s;
}

inline std::string to_csv(const std::vector<MetricsRecord>& rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) out += format_row(r) + '\n';
  return out;
}

namespace detail {

template <typename N>
N parse_number(std::string_view field, std::size_t line, const char* column) {
  N v{};
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || p != field.data() + field.size()) {
    throw FormatError("metrics line " + std::to_string(line) + ": bad " + column + " '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace detail

inline MetricsRecord parse_row(std::string_view line, std::size_t line_no = 0) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      f.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  if (f.size() != 7) {
    throw FormatError("metrics line " + std::to_string(line_no) + ": expected 7 fields, got " +
                      std::to_string(f.size()));
  }
  MetricsRecord r;
  r.epoch = detail::parse_number<int>(f[0], line_no, "epoch");
  r.split = std::string(f[1]);
  r.attack = std::string(f[2]);
  r.accuracy = detail::parse_number<double>(f[3], line_no, "accuracy");
  r.loss = detail::parse_number<double>(f[4], line_no, "loss");
  r.wall_ms = detail::parse_number<double>(f[5], line_no, "wall_ms");
  r.gen_updates = detail::parse_number<int>(f[6], line_no, "gen_updates");
  if (!(r.accuracy >= 0 && r.accuracy <= 1) || !(r.wall_ms >= 0)) {
    throw FormatError("metrics line " + std::to_string(line_no) + ": value out of range");
  }
  return r;
}

inline std::vector<MetricsRecord> from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("metrics: missing or wrong header");
  std::vector<MetricsRecord> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    rows.push_back(parse_row(line, n));
  }
  return rows;
}

inline void write_csv(const std::string& path, const std::vector<MetricsRecord>& rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << to_csv(rows);
}

inline std::vector<MetricsRecord> read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_csv(ss.str());
}

}  // namespace advt::metrics
