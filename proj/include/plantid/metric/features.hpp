#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plantid/arch/network.hpp"

namespace plantid::metric {

/// Unit-norm embeddings with parallel class labels.
struct FeatureMatrix {
  Tensor rows;  // [N, D]
  std::vector<std::int32_t> labels;
  std::vector<std::string> class_names;  // label -> name
  std::string checkpoint_id;
  std::string config_digest;
  std::size_t skipped = 0;  // images that failed to decode

  std::size_t count() const { return labels.size(); }
  std::size_t dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
};

/// Inference-mode embeddings of `images` [N,3,R,R], one row per image in input order.
FeatureMatrix extract_features(const arch::NetworkSpec& spec, const arch::Parameters& params, const Tensor& images,
                               std::vector<std::int32_t> labels, std::size_t batch_size = 32);

/// Throws if row and label counts differ or any row is not unit-norm within 1e-5.
void check_features(const FeatureMatrix& features);

void save_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace plantid::metric
