#include "plantid/data/image.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/core.h>

namespace plantid::data {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) throw PpmHeaderError(std::string("ppm header ends before ") + what);
    if (!std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      throw PpmHeaderError(std::string("ppm header: expected ") + what);
    }
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) throw PpmHeaderError(std::string("ppm header: ") + what + " is implausibly large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
};

}  // namespace

Tensor decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw PpmHeaderError("not a binary PPM (missing P6 magic)");
  HeaderReader r(bytes);
  r.pos_ = 2;
  const std::size_t width = r.number("width");
  const std::size_t height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (width == 0 || height == 0) throw PpmHeaderError("ppm header: zero image dimension");
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
    throw PpmHeaderError("ppm header: missing whitespace after maxval");
  }
  if (maxval != 255) throw PpmMaxvalError(fmt::format("ppm maxval {} is unsupported (only 255)", maxval));
  ++r.pos_;
  const std::size_t pixels = width * height;
  if (bytes.size() - r.pos_ < pixels * 3) {
    throw PpmTruncatedError(fmt::format("ppm payload truncated: {} of {} bytes", bytes.size() - r.pos_, pixels * 3));
  }
  Tensor t(Shape{3, height, width});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + r.pos_);
  for (std::size_t i = 0; i < pixels; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[c * pixels + i] = static_cast<float>(p[i * 3 + c]) / 255.0f;
  }
  return t;
}

Tensor load_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open image " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  return decode_ppm(bytes);
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("encode_ppm expects [3,H,W], got " + shape_to_string(image.shape()));
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::string out = fmt::format("P6\n{} {}\n255\n", w, h);
  const std::size_t pixels = h * w;
  for (std::size_t i = 0; i < pixels; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(image[c * pixels + i]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const std::string bytes = encode_ppm(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing image " + path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize expects [C,H,W], got " + shape_to_string(image.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be non-empty");
  const std::size_t C = image.dim(0);
  const std::size_t H = image.dim(1);
  const std::size_t W = image.dim(2);
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = Tap{lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(H, out_h);
  const auto tx = taps(W, out_w);
  Tensor out(Shape{C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    const float* src = &image.data()[c * H * W];
    float* dst = &out.data()[c * out_h * out_w];
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = src[a.lo * W + b.lo] * (1.0 - b.frac) + src[a.lo * W + b.hi] * b.frac;
        const double bottom = src[a.hi * W + b.lo] * (1.0 - b.frac) + src[a.hi * W + b.hi] * b.frac;
        dst[y * out_w + x] = static_cast<float>(top * (1.0 - a.frac) + bottom * a.frac);
      }
    }
  }
  return out;
}

Tensor preprocess(const Tensor& image, std::size_t resolution) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("preprocess expects [3,H,W], got " + shape_to_string(image.shape()));
  if (resolution == 0) throw std::invalid_argument("preprocess: resolution must be positive");
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::size_t rh = resolution;
  std::size_t rw = resolution;
  if (h < w) {
    rw = std::max(resolution, static_cast<std::size_t>(std::lround(static_cast<double>(w) * resolution / h)));
  } else if (w < h) {
    rh = std::max(resolution, static_cast<std::size_t>(std::lround(static_cast<double>(h) * resolution / w)));
  }
  const Tensor resized = (rh == h && rw == w) ? image : resize_bilinear(image, rh, rw);
  const std::size_t oy = (rh - resolution) / 2;
  const std::size_t ox = (rw - resolution) / 2;
  Tensor out(Shape{3, resolution, resolution});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        const float v = resized[(c * rh + y + oy) * rw + x + ox];
        out[(c * resolution + y) * resolution + x] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

std::uint64_t average_hash(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("average_hash expects [3,H,W]");
  const std::size_t pixels = image.dim(1) * image.dim(2);
  Tensor gray(Shape{1, image.dim(1), image.dim(2)});
  for (std::size_t i = 0; i < pixels; ++i) {
    gray[i] = static_cast<float>(0.299 * image[i] + 0.587 * image[pixels + i] + 0.114 * image[2 * pixels + i]);
  }
  const Tensor small = resize_bilinear(gray, 8, 8);
  double mean = 0.0;
  for (float v : small.data()) mean += v;
  mean /= 64.0;
  std::uint64_t hash = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    if (small[i] > mean) hash |= std::uint64_t{1} << (63 - i);
  }
  return hash;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::string hash_to_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

std::uint64_t hash_from_hex(const std::string& hex) {
  if (hex.size() != 16) throw FormatError("average hash must be 16 hex digits, got '" + hex + "'");
  std::size_t used = 0;
  const auto v = std::stoull(hex, &used, 16);
  if (used != 16) throw FormatError("invalid average hash '" + hex + "'");
  return v;
}

}  // namespace plantid::data
