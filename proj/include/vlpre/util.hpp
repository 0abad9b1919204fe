#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlpre {

// Writes via a temp file in the same directory, then renames into place, so
// readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);

uint64_t fnv1a64(const void* data, size_t len);
std::string hex64(uint64_t v);

std::vector<std::string> split_lines(const std::string& text);

}  // namespace vlpre
