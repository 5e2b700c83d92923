#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cq {

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::string& path);

}  // namespace cq
