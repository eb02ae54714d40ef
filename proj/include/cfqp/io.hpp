#pragma once

#include "cfqp/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfqp::io {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Little-endian IEEE-754 binary32 encoding of a dense matrix in column order
// (sample-major for features x samples storage).
void append_f32_le(std::vector<std::uint8_t>& out, const double* values, std::size_t count);
std::vector<double> decode_f32_le(std::span<const std::uint8_t> bytes);

std::string sha1_hex(std::span<const std::uint8_t> bytes);
inline std::string sha1_hex(std::string_view text) {
    return sha1_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}
/// Hash of `content` as git stores a blob: sha1("blob <len>\0" + content).
std::string git_blob_hash(std::string_view content);

}  // namespace cfqp::io
