#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Helpers for the comma-separated, unquoted dialect used by uploads and
// segment files.
namespace cwh::text {

/// Splits on ',' without unquoting. Views point into `line`.
void split_fields(std::string_view line, std::vector<std::string_view>& out);
std::vector<std::string_view> split_fields(std::string_view line);

/// Removes one trailing '\r' (CRLF uploads).
std::string_view strip_cr(std::string_view line);

std::string join_fields(const std::vector<std::string>& fields);

std::optional<double> parse_decimal(std::string_view s);
std::optional<std::int64_t> parse_integer(std::string_view s);

/// Shortest representation that parses back to the same double.
std::string format_decimal(double value);

/// Reads a whole file; throws Error(kIo) on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace cwh::text
