#pragma once

#include <string>
#include <string_view>

namespace gaitforge {

/// Shortest decimal that parses back to the same double.
std::string format_shortest(double v);
/// Fixed 17-significant-digit form used by the CSV exports.
std::string format_csv(double v);
/// Exact decimal parse; throws std::invalid_argument on junk.
double parse_number(std::string_view s);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

}  // namespace gaitforge
