#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace plantid::data {

enum class Split { kUnassigned, kTrain, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ImageRecord {
  std::string path;  // relative to the manifest root, '/' separated
  std::string class_name;
  std::int32_t class_index = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::string sha256;
  std::uint64_t ahash = 0;
  Split split = Split::kUnassigned;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct DatasetManifest {
  std::string root;
  std::vector<std::string> classes;  // index -> name
  std::vector<ImageRecord> records;  // sorted by path
  std::vector<std::string> notes;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;

  std::filesystem::path absolute_path(const ImageRecord& record) const { return std::filesystem::path(root) / record.path; }
};

/// One subdirectory per class (lexicographic class order); every decodable P6 file becomes a record.
/// Paths listed in `exclusions` (relative to root) are skipped and noted.
DatasetManifest ingest_directory(const std::filesystem::path& root, const std::vector<std::string>& exclusions = {});

/// Plain text, one relative path per line; blank lines and '#' comments ignored.
std::vector<std::string> read_exclusion_list(const std::filesystem::path& path);

/// JSON lines: a header object {format, version, root, classes, notes}, then one record per line.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Collapses byte-identical files globally and same-class near duplicates (average-hash Hamming distance
/// <= threshold), keeping the lexicographically first path. Cross-class near duplicates are only noted.
DatasetManifest dedup(const DatasetManifest& manifest, int perceptual_threshold = 5);

/// Stratified assignment: per class, clamp(round(n * test_fraction), 1, n - 1) test records.
DatasetManifest split(const DatasetManifest& manifest, double test_fraction, std::uint64_t seed);

enum class Partition { kAll, kTrain, kTest };
Partition partition_from_string(const std::string& name);

/// Records of a partition in manifest order.
std::vector<const ImageRecord*> select(const DatasetManifest& manifest, Partition partition);

struct ClassStats {
  std::uint64_t total = 0;
  double average = 0.0;
  double median = 0.0;
  std::uint64_t max = 0;
  std::uint64_t min = 0;
  std::size_t classes = 0;
};

/// Over per-class image counts; classes absent from the partition are left out.
ClassStats stats(const DatasetManifest& manifest, Partition partition);
ClassStats stats_from_counts(std::vector<std::uint64_t> counts);

struct SyntheticOptions {
  std::size_t classes = 8;
  std::size_t per_class = 40;
  std::size_t resolution = 32;
  std::uint64_t seed = 7;
  double stripe_amplitude = 0.18;
  double noise = 0.06;
};

/// Writes root/class_XX/img_NNNN.ppm: per-class hue and stripe orientation/frequency, random phase, pixel noise.
void make_synthetic_corpus(const std::filesystem::path& root, const SyntheticOptions& options);

}  // namespace plantid::data
