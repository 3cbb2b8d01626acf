#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

namespace wmbench {

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace wmbench
