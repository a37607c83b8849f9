#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace mscount {

/// Writes through a sibling temp file and renames it over `path`, so readers
/// never observe a partial file.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace mscount
