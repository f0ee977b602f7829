#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prmbas::io {

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never see half a file.
void write_file(const std::filesystem::path& path, std::string_view content);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Little-endian IEEE-754 doubles.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view base64);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace prmbas::io
