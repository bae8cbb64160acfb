#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "plantid/serialize.hpp"
#include "plantid/tensor.hpp"

namespace plantid::data {

class PpmHeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};
class PpmTruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class PpmMaxvalError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Binary P6 with maxval 255 -> [3,H,W] with values v/255.
Tensor decode_ppm(std::string_view bytes);
Tensor load_ppm(const std::filesystem::path& path);

/// [3,H,W] in [0,1] -> P6 bytes, each sample round(v*255).
std::string encode_ppm(const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resampling of [C,H,W] with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Shorter side resized to `resolution`, then centre-cropped to a square.
Tensor preprocess(const Tensor& image, std::size_t resolution);

/// 64-bit average hash of an 8x8 grayscale downsample; bit 63 is the top-left cell.
std::uint64_t average_hash(const Tensor& image);
int hamming_distance(std::uint64_t a, std::uint64_t b);

std::string hash_to_hex(std::uint64_t hash);
std::uint64_t hash_from_hex(const std::string& hex);

}  // namespace plantid::data
