#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace repose {

/// Reads a whole file; throws ValidationError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes `data` to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);

}  // namespace repose
