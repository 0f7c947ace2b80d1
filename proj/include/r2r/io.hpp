#pragma once

#include <filesystem>
#include <string>

namespace r2r {

/// Writes `content` to a sibling temp file, then renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace r2r
