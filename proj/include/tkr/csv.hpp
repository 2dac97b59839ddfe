#pragma once

// Minimal CSV helpers shared by every file format in the toolkit.

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tkr::csv {

/// Splits one line on commas. Double-quoted fields may contain commas and
/// doubled quotes. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_line(std::string_view line);

/// Quotes a field only when it needs it.
std::string escape(std::string_view field);

/// Next non-empty, non-comment line; strips a trailing '\r'. Counts every
/// physical line read into `line_number`.
bool next_line(std::istream& in, std::string& line, std::size_t& line_number);

std::optional<double> parse_double(std::string_view text);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

std::string_view trim(std::string_view text);

}  // namespace tkr::csv
