#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace that {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// "key=value" lines; blank lines and '#' comments skipped. Keeps file order.
std::vector<std::pair<std::string, std::string>> parse_key_values(
    const std::string& text);

// Strict conversions; throw ErrorCode::config naming the offending key.
std::size_t parse_size(const std::string& value, const std::string& key);
std::vector<std::size_t> parse_size_list(const std::string& value,
                                         const std::string& key);
double parse_double(const std::string& value, const std::string& key);
std::uint64_t parse_u64(const std::string& value, const std::string& key);
bool parse_bool(const std::string& value, const std::string& key);

std::string join_sizes(const std::vector<std::size_t>& values);
// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace that
