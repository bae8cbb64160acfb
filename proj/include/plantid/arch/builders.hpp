#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "plantid/arch/network_spec.hpp"

namespace plantid::arch {

/// One row of the inverted-residual plan: expansion t, output channels c, repeats n, first stride s.
struct BottleneckConfig {
  std::size_t expansion = 6;
  std::size_t channels = 0;
  std::size_t repeats = 1;
  std::size_t stride = 1;
};

/// The seven bottleneck rows of the reference MobileNetV2 plan at width 1.0.
const std::vector<BottleneckConfig>& mobilenet_v2_plan();

/// max(8, round(channels * multiplier / 8) * 8)
std::size_t scale_channels(std::size_t channels, double multiplier);

NetworkSpec build_mobilenet_v2(double width_multiplier, std::size_t input_resolution, std::size_t embedding_dim);

/// `width_multiplier` shrinks every conv and hidden FC width (1.0 is the canonical network).
NetworkSpec build_vgg16(std::size_t input_resolution, std::size_t embedding_dim, double width_multiplier = 1.0);

NetworkSpec build_resnet_v2(const std::vector<std::size_t>& stage_depths, std::size_t base_width,
                            std::size_t input_resolution, std::size_t embedding_dim);

NetworkSpec build_inception_resnet_v2_reduced(double scale, std::size_t input_resolution, std::size_t embedding_dim,
                                              const std::vector<std::size_t>& repeats = {2, 2, 2});

/// Everything needed to rebuild a spec; stored in checkpoints and run configs.
struct BuilderArgs {
  Architecture architecture = Architecture::kMobileNetV2;
  double width_multiplier = 1.0;                      // mobilenet_v2, vgg16
  std::size_t input_resolution = 224;
  std::size_t embedding_dim = 128;
  std::vector<std::size_t> stage_depths{3, 4, 6, 3};  // resnet_v2
  std::size_t base_width = 64;                        // resnet_v2
  double scale = 1.0;                                 // inception_resnet_v2_reduced
  std::vector<std::size_t> repeats{2, 2, 2};          // inception_resnet_v2_reduced

  friend bool operator==(const BuilderArgs&, const BuilderArgs&) = default;
};

NetworkSpec build(const BuilderArgs& args);

void to_json(nlohmann::json& j, const BuilderArgs& args);
void from_json(const nlohmann::json& j, BuilderArgs& args);

/// Learnable parameter count (batchnorm running statistics excluded).
std::uint64_t count_params(const NetworkSpec& spec);
/// Multiply-adds of conv and linear inner products; batchnorm, activations and pooling are free.
std::uint64_t count_madds(const NetworkSpec& spec);

}  // namespace plantid::arch
