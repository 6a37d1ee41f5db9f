#include "that/strings.hpp"

#include <charconv>
#include <cstdint>

#include "that/error.hpp"

namespace that {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& raw : split(text, '\n')) {
    if (raw.empty() || raw[0] == '#') continue;
    const auto eq = raw.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::config, "expected key=value, got '" + raw + "'");
    }
    out.emplace_back(trim(std::string_view(raw).substr(0, eq)),
                     trim(std::string_view(raw).substr(eq + 1)));
  }
  return out;
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) {
    fail(ErrorCode::config,
         "'" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& value, const std::string& key) {
  return static_cast<std::size_t>(parse_u64(value, key));
}

std::vector<std::size_t> parse_size_list(const std::string& value,
                                         const std::string& key) {
  std::vector<std::size_t> out;
  if (trim(value).empty()) return out;
  for (const auto& part : split(value, ',')) out.push_back(parse_size(part, key));
  return out;
}

double parse_double(const std::string& value, const std::string& key) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) {
    fail(ErrorCode::config,
         "'" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes" || value == "on")
    return true;
  if (value == "false" || value == "0" || value == "no" || value == "off")
    return false;
  fail(ErrorCode::config,
       "'" + key + "': expected true/false, got '" + value + "'");
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace that
