#include <array>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/core.h>

#include "plantid/data/image.hpp"
#include "plantid/data/manifest.hpp"

namespace fs = std::filesystem;

namespace plantid::data {

namespace {

constexpr int kMaxAttempts = 200;
constexpr int kMinHashDistance = 8;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& v2 : rgb) v2 += v - c;
  return rgb;
}

}  // namespace

void make_synthetic_corpus(const fs::path& root, const SyntheticOptions& o) {
  if (o.classes < 2) throw std::invalid_argument("synthetic corpus needs at least 2 classes");
  if (o.per_class == 0) throw std::invalid_argument("synthetic corpus needs at least 1 image per class");
  if (o.resolution < 8) throw std::invalid_argument("synthetic corpus resolution must be >= 8");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw std::invalid_argument("cannot create corpus directory " + root.string());

  const int width = std::max(2, static_cast<int>(std::to_string(o.classes - 1).size()));
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-0.04, 0.04);
  std::normal_distribution<double> noise(0.0, o.noise);
  const std::size_t R = o.resolution;

  for (std::size_t c = 0; c < o.classes; ++c) {
    const fs::path dir = root / fmt::format("class_{:0{}}", c, width);
    fs::create_directories(dir, ec);
    if (ec) throw std::invalid_argument("cannot create " + dir.string());
    const auto base = hsv_to_rgb(static_cast<double>(c) / static_cast<double>(o.classes), 0.6, 0.75);
    const double theta = std::numbers::pi * static_cast<double>(c) / static_cast<double>(o.classes);
    const double freq = 2.0 + static_cast<double>(c % 3);
    auto render = [&]() {
      const double phi = phase(rng);
      const double shift = jitter(rng);
      // Low-frequency illumination and a soft blob make every image hash differently.
      const double psi = phase(rng);
      const double gradient = std::uniform_real_distribution<double>(0.05, 0.15)(rng);
      const double bx = std::uniform_real_distribution<double>(0.0, static_cast<double>(R))(rng);
      const double by = std::uniform_real_distribution<double>(0.0, static_cast<double>(R))(rng);
      const double blob = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      const double sigma = static_cast<double>(R) / 5.0;
      Tensor img(Shape{3, R, R});
      for (std::size_t y = 0; y < R; ++y) {
        for (std::size_t x = 0; x < R; ++x) {
          const double u = (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)) /
                           static_cast<double>(R);
          const double stripe = o.stripe_amplitude * std::sin(2.0 * std::numbers::pi * freq * u + phi);
          const double light =
              gradient * ((static_cast<double>(x) * std::cos(psi) + static_cast<double>(y) * std::sin(psi)) /
                              static_cast<double>(R) -
                          0.5);
          const double dx = static_cast<double>(x) - bx;
          const double dy = static_cast<double>(y) - by;
          const double spot = blob * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = base[ch] + shift + stripe + light + spot + noise(rng);
            img[(ch * R + y) * R + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      return img;
    };
    std::vector<std::uint64_t> hashes;
    for (std::size_t i = 0; i < o.per_class; ++i) {
      // Redraw images whose average hash lands near an earlier one, so the corpus survives dedup.
      std::string bytes;
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        bytes = encode_ppm(render());
        const std::uint64_t h = average_hash(decode_ppm(bytes));
        const bool close = std::any_of(hashes.begin(), hashes.end(),
                                       [&](std::uint64_t g) { return hamming_distance(g, h) < kMinHashDistance; });
        if (!close || attempt + 1 == kMaxAttempts) {
          hashes.push_back(h);
          break;
        }
      }
      std::ofstream os(dir / fmt::format("img_{:04}.ppm", i), std::ios::binary);
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw std::runtime_error("failed writing synthetic image in " + dir.string());
    }
  }
}

}  // namespace plantid::data
