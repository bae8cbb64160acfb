#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plantid/arch/network.hpp"
#include "plantid/metric/triplet.hpp"

namespace plantid::metric {

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.05;
  double lr_decay = 0.95;  // per epoch
  std::size_t classes_per_batch = 8;  // P
  std::size_t images_per_class = 4;   // K
  std::size_t epochs = 10;
  MiningStrategy mining = MiningStrategy::kSemiHard;
  std::uint64_t seed = 42;
  /// Parameter-name prefixes left trainable; empty trains everything.
  std::vector<std::string> trainable_prefixes;

  std::size_t batch_size() const { return classes_per_batch * images_per_class; }
  /// Throws std::invalid_argument on a bad value.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Raised when the loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  arch::Parameters params;
  std::vector<double> loss_curve;  // mean batch loss per epoch
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Class-balanced triplet SGD over `images` [N,3,R,R] starting from `params`.
TrainResult train_embedding(const arch::NetworkSpec& spec, arch::Parameters params, const Tensor& images,
                            const std::vector<std::int32_t>& labels, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

/// CSV "epoch,mean_loss", epochs numbered from 1.
void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& loss_curve);

}  // namespace plantid::metric
