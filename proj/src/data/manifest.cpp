#include "plantid/data/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/core.h>
#include <json.hpp>

#include "plantid/data/image.hpp"
#include "plantid/digest.hpp"
#include "plantid/serialize.hpp"

namespace fs = std::filesystem;

namespace plantid::data {

namespace {
constexpr const char* kFormat = "plantid-manifest";
constexpr int kVersion = 1;

void add_note(std::vector<std::string>& notes, std::string note) {
  if (std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(std::move(note));
}

/// Drops classes without records and renumbers the rest densely, keeping their order.
void reindex(DatasetManifest& m) {
  std::vector<std::size_t> counts(m.classes.size(), 0);
  for (const auto& r : m.records) ++counts[static_cast<std::size_t>(r.class_index)];
  std::vector<std::int32_t> remap(m.classes.size(), -1);
  std::vector<std::string> kept;
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    if (counts[c] == 0) {
      add_note(m.notes, "class '" + m.classes[c] + "' has no remaining images and was dropped");
      continue;
    }
    remap[c] = static_cast<std::int32_t>(kept.size());
    kept.push_back(m.classes[c]);
  }
  m.classes = std::move(kept);
  for (auto& r : m.records) r.class_index = remap[static_cast<std::size_t>(r.class_index)];
}
}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "unassigned") return Split::kUnassigned;
  throw FormatError("unknown split '" + name + "'");
}

Partition partition_from_string(const std::string& name) {
  if (name == "all") return Partition::kAll;
  if (name == "train") return Partition::kTrain;
  if (name == "test") return Partition::kTest;
  throw std::invalid_argument("unknown partition '" + name + "' (expected all, train or test)");
}

DatasetManifest ingest_directory(const fs::path& root, const std::vector<std::string>& exclusions) {
  if (!fs::is_directory(root)) throw std::invalid_argument("dataset root " + root.string() + " is not a directory");
  const std::set<std::string> excluded(exclusions.begin(), exclusions.end());
  DatasetManifest m;
  m.root = fs::absolute(root).lexically_normal().generic_string();
  if (!m.root.empty() && m.root.back() == '/' && m.root.size() > 1) m.root.pop_back();

  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& dir : class_dirs) {
    const std::string class_name = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<ImageRecord> records;
    for (const auto& file : files) {
      const std::string rel = class_name + "/" + file.filename().string();
      if (excluded.count(rel) != 0) {
        m.notes.push_back("excluded: " + rel);
        continue;
      }
      std::ifstream is(file, std::ios::binary);
      const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
      Tensor image;
      try {
        image = decode_ppm(bytes);
      } catch (const FormatError& e) {
        m.notes.push_back("undecodable: " + rel + " (" + e.what() + ")");
        continue;
      }
      ImageRecord r;
      r.path = rel;
      r.class_name = class_name;
      r.width = image.dim(2);
      r.height = image.dim(1);
      r.sha256 = sha256_hex(bytes);
      r.ahash = average_hash(image);
      records.push_back(std::move(r));
    }
    if (records.empty()) {
      m.notes.push_back("class folder '" + class_name + "' holds no decodable images");
      continue;
    }
    for (auto& r : records) {
      r.class_index = static_cast<std::int32_t>(m.classes.size());
      m.records.push_back(std::move(r));
    }
    m.classes.push_back(class_name);
  }
  if (m.records.empty()) throw std::invalid_argument("no decodable images under " + root.string());
  return m;
}

std::vector<std::string> read_exclusion_list(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open exclusion list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    out.push_back(line.substr(start));
  }
  return out;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  const nlohmann::json header{{"format", kFormat}, {"version", kVersion}, {"root", m.root},
                              {"classes", m.classes}, {"notes", m.notes}};
  os << header.dump() << '\n';
  for (const auto& r : m.records) {
    const nlohmann::json j{{"path", r.path},       {"class", r.class_name},   {"class_index", r.class_index},
                           {"width", r.width},     {"height", r.height},      {"sha256", r.sha256},
                           {"ahash", hash_to_hex(r.ahash)}, {"split", to_string(r.split)}};
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("manifest " + path.string() + " is empty");
  DatasetManifest m;
  try {
    const auto header = nlohmann::json::parse(line);
    expect_format(header, kFormat, kVersion);
    m.root = header.at("root").get<std::string>();
    m.classes = header.at("classes").get<std::vector<std::string>>();
    m.notes = header.value("notes", std::vector<std::string>{});
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      ImageRecord r;
      r.path = j.at("path").get<std::string>();
      r.class_name = j.at("class").get<std::string>();
      r.class_index = j.at("class_index").get<std::int32_t>();
      r.width = j.at("width").get<std::size_t>();
      r.height = j.at("height").get<std::size_t>();
      r.sha256 = j.at("sha256").get<std::string>();
      r.ahash = hash_from_hex(j.at("ahash").get<std::string>());
      r.split = split_from_string(j.value("split", std::string("unassigned")));
      if (r.class_index < 0 || static_cast<std::size_t>(r.class_index) >= m.classes.size() ||
          m.classes[static_cast<std::size_t>(r.class_index)] != r.class_name) {
        throw FormatError(fmt::format("line {}: class '{}' / index {} disagree with the class map", lineno,
                                      r.class_name, r.class_index));
      }
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

DatasetManifest dedup(const DatasetManifest& manifest, int threshold) {
  if (threshold < 0 || threshold > 64) throw std::invalid_argument("dedup threshold must lie in [0, 64]");
  DatasetManifest m = manifest;
  std::vector<ImageRecord> sorted = manifest.records;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.path < b.path; });

  std::map<std::string, std::string> by_content;  // sha256 -> kept path
  std::vector<ImageRecord> kept;
  for (const auto& r : sorted) {
    if (auto it = by_content.find(r.sha256); it != by_content.end()) {
      add_note(m.notes, "removed " + r.path + ": exact duplicate of " + it->second);
      continue;
    }
    const ImageRecord* near = nullptr;
    for (const auto& k : kept) {
      if (k.class_index == r.class_index && hamming_distance(k.ahash, r.ahash) <= threshold) {
        near = &k;
        break;
      }
    }
    if (near != nullptr) {
      add_note(m.notes, fmt::format("removed {}: near duplicate of {} (distance {})", r.path, near->path,
                                    hamming_distance(near->ahash, r.ahash)));
      continue;
    }
    by_content.emplace(r.sha256, r.path);
    kept.push_back(r);
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (kept[i].class_index != kept[j].class_index) {
        const int d = hamming_distance(kept[i].ahash, kept[j].ahash);
        if (d <= threshold) {
          add_note(m.notes, fmt::format("cross-class near duplicate: {} ~ {} (distance {})", kept[i].path, kept[j].path, d));
        }
      }
    }
  }
  m.records = std::move(kept);
  reindex(m);
  return m;
}

DatasetManifest split(const DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must lie in (0, 1)");
  DatasetManifest m = manifest;
  std::vector<std::vector<std::size_t>> members(m.classes.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) members[static_cast<std::size_t>(m.records[i].class_index)].push_back(i);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& idx = members[c];
    const auto n = static_cast<long>(idx.size());
    if (n < 2) {
      throw std::invalid_argument(fmt::format("class '{}' has {} image(s); a split needs at least 2 per class",
                                              m.classes[c], n));
    }
    const long n_test = std::clamp(std::lround(static_cast<double>(n) * test_fraction), 1L, n - 1);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (long k = 0; k < n; ++k) m.records[idx[static_cast<std::size_t>(k)]].split = k < n_test ? Split::kTest : Split::kTrain;
  }
  return m;
}

std::vector<const ImageRecord*> select(const DatasetManifest& m, Partition partition) {
  std::vector<const ImageRecord*> out;
  for (const auto& r : m.records) {
    if (partition == Partition::kAll || (partition == Partition::kTrain && r.split == Split::kTrain) ||
        (partition == Partition::kTest && r.split == Split::kTest)) {
      out.push_back(&r);
    }
  }
  return out;
}

ClassStats stats_from_counts(std::vector<std::uint64_t> counts) {
  counts.erase(std::remove(counts.begin(), counts.end(), 0u), counts.end());
  if (counts.empty()) throw std::invalid_argument("stats: the partition holds no images");
  std::sort(counts.begin(), counts.end());
  ClassStats s;
  s.classes = counts.size();
  for (auto c : counts) s.total += c;
  s.average = static_cast<double>(s.total) / static_cast<double>(s.classes);
  const std::size_t mid = counts.size() / 2;
  s.median = counts.size() % 2 == 1 ? static_cast<double>(counts[mid])
                                    : (static_cast<double>(counts[mid - 1]) + static_cast<double>(counts[mid])) / 2.0;
  s.min = counts.front();
  s.max = counts.back();
  return s;
}

ClassStats stats(const DatasetManifest& m, Partition partition) {
  std::vector<std::uint64_t> counts(m.classes.size(), 0);
  for (const auto* r : select(m, partition)) ++counts[static_cast<std::size_t>(r->class_index)];
  return stats_from_counts(std::move(counts));
}

}  // namespace plantid::data
