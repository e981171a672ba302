#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace proxyset::csv {

// RFC 4180 subset: comma separated, double-quoted fields with "" escapes, no
// embedded newlines.
std::vector<std::string> split_line(std::string_view line);
std::string quote(std::string_view field);
std::string join(const std::vector<std::string>& fields);

// Strips a trailing '\r' and a leading UTF-8 BOM (first line only).
void normalize_line(std::string& line, bool first);

}  // namespace proxyset::csv
