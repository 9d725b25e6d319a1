#pragma once

#include <string>

namespace relay {

/// Writes `content` to `path + ".tmp"` and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace relay
