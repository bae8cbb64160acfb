#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plantid/arch/builders.hpp"
#include "plantid/data/manifest.hpp"
#include "plantid/metric/features.hpp"
#include "plantid/metric/trainer.hpp"
#include "plantid/svm/svm.hpp"

namespace plantid::pipeline {

/// Cross-stage inconsistency (digest or checkpoint mismatch).
class StageMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  arch::BuilderArgs builder;
  metric::TrainConfig train;
  svm::SmoOptions svm;
  std::string dataset_root;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 1;
  int dedup_threshold = 5;
  std::vector<std::size_t> class_subsets;  // evaluate on the first k classes; empty means all
  std::string output_dir = "runs/default";
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Desk-scale defaults for one backbone.
RunConfig default_config(arch::Architecture architecture);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// sha256 of the canonical config JSON with output_dir removed.
std::string config_digest(const RunConfig& config);

/// Throws StageMismatch naming both digests when they differ.
void require_same_digest(const std::string& expected, const std::string& found, const std::string& what);

// Stages. Each writes its artifact and returns what later stages need.

/// ingest -> dedup -> split of the config's dataset root.
data::DatasetManifest prepare_manifest(const RunConfig& config);

struct ImageBatch {
  Tensor images;  // [N,3,R,R]
  std::vector<std::int32_t> labels;
  std::size_t skipped = 0;
};

/// Decodes and preprocesses one partition; undecodable files are skipped and counted.
ImageBatch load_partition(const data::DatasetManifest& manifest, data::Partition partition, std::size_t resolution);

struct TrainEmbedOutput {
  std::string checkpoint_id;
  std::vector<double> loss_curve;
};

/// Trains the backbone on the train partition; writes the checkpoint and "epoch,mean_loss" CSV.
TrainEmbedOutput train_embed(const RunConfig& config, const data::DatasetManifest& manifest,
                             const std::filesystem::path& checkpoint_path, const std::filesystem::path& loss_csv_path,
                             std::ostream* log = nullptr);

/// Embeds one partition with a saved checkpoint; writes and returns the feature matrix.
metric::FeatureMatrix extract(const std::filesystem::path& checkpoint_path, const data::DatasetManifest& manifest,
                              data::Partition partition, const std::filesystem::path& features_path,
                              const std::optional<std::string>& expected_digest = std::nullopt);

/// Keeps rows whose label is below k (k = 0 keeps everything).
metric::FeatureMatrix restrict_classes(const metric::FeatureMatrix& features, std::size_t k);

/// One-vs-rest SVM on train features (optionally restricted to the first k classes); writes the model file.
svm::MulticlassSvm train_svm(const RunConfig& config, const metric::FeatureMatrix& train_features,
                             std::size_t class_subset, const std::filesystem::path& model_path);

struct Evaluation {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  double accuracy() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }
  std::vector<double> recall() const;
};

/// Top-1 evaluation over the features whose label the model covers. Rejects mismatched digests or an empty set.
Evaluation evaluate(const svm::MulticlassSvm& model, const svm::ModelFileInfo& model_info,
                    const metric::FeatureMatrix& features);

void write_confusion_csv(const std::filesystem::path& path, const Evaluation& evaluation);
void print_evaluation(std::ostream& os, const Evaluation& evaluation);

void print_stats(std::ostream& os, const data::ClassStats& stats);
void write_stats_csv(const std::filesystem::path& path, const data::ClassStats& stats);

struct RunSummary {
  arch::Architecture architecture = arch::Architecture::kMobileNetV2;
  std::string config_digest;
  std::string checkpoint_id;
  std::vector<std::size_t> subsets;   // class counts evaluated
  std::vector<double> accuracy;       // percent, parallel to subsets
  std::vector<double> loss_curve;
  double train_seconds = 0.0;  // embedding + svm training
  double eval_seconds = 0.0;   // feature extraction + prediction
  double total_seconds = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
};

/// The whole chain for one config, artifacts under config.output_dir.
RunSummary run_pipeline(const RunConfig& config, std::ostream* log = nullptr);

struct ComparisonReport {
  std::vector<RunSummary> rows;  // paper architecture order
  std::string markdown() const;
  std::string csv() const;
};

/// Runs every config sequentially; a failing run becomes a failed row.
ComparisonReport compare(const std::vector<RunConfig>& configs, std::ostream* log = nullptr);

}  // namespace plantid::pipeline
