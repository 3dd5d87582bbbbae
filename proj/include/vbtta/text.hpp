#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vbtta {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
// Whole-string parse; returns false on trailing garbage.
bool parse_double(std::string_view text, double& out);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

} // namespace vbtta
