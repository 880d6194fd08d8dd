#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ctxbench {

/// Seeded 64-bit string hash (FNV-1a over the bytes, splitmix64 finalizer).
/// Stable across platforms and releases; the encoder's bucket assignment
/// depends on it.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed);

std::uint64_t mix64(std::uint64_t x);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::filesystem::path& path);

} // namespace ctxbench
