#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deepdisaster {

/// Shortest text that parses back to exactly `v`.
std::string format_real(double v);
/// Whole-string parse; nullopt on any trailing garbage.
std::optional<double> parse_real(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view s);

}  // namespace deepdisaster
