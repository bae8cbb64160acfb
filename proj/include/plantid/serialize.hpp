#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plantid/tensor.hpp"

namespace plantid {

/// Malformed or truncated binary payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor blob: u64 rank, rank x u64 dims, then f32 values; everything little-endian.
void write_tensor(std::ostream& os, const Tensor& tensor);
Tensor read_tensor(std::istream& is);

void write_u64(std::ostream& os, std::uint64_t value);
std::uint64_t read_u64(std::istream& is);
void write_i32_array(std::ostream& os, std::span<const std::int32_t> values);
std::vector<std::int32_t> read_i32_array(std::istream& is, std::size_t count);

/// Framed file: one line of compact JSON, '\n', then a binary body.
void write_header(std::ostream& os, const nlohmann::json& header);
nlohmann::json read_header(std::istream& is);

/// Checks the "format" and "version" fields of a header.
void expect_format(const nlohmann::json& header, std::string_view format, int version);

std::ofstream open_for_write(const std::filesystem::path& path);
std::ifstream open_for_read(const std::filesystem::path& path);

}  // namespace plantid
