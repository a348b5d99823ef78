#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gtrans {

/// Splits one comma-separated line. Fields may be double-quoted, with ""
/// standing for a literal quote; unquoted fields are trimmed. Throws
/// DataError on an unterminated quote.
std::vector<std::string> split_csv_line(const std::string& line);

/// Quotes a field when it contains a comma, quote or surrounding space.
std::string csv_escape(const std::string& field);

std::string trim(std::string_view s);

}  // namespace gtrans
