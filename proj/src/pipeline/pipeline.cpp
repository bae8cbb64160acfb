#include "plantid/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/core.h>

#include "plantid/arch/checkpoint.hpp"
#include "plantid/data/image.hpp"
#include "plantid/digest.hpp"

namespace fs = std::filesystem;

namespace plantid::pipeline {

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"architecture", arch::to_string(c.builder.architecture)},
                     {"builder", c.builder},
                     {"train", c.train},
                     {"svm", c.svm},
                     {"dataset_root", c.dataset_root},
                     {"test_fraction", c.test_fraction},
                     {"split_seed", c.split_seed},
                     {"dedup_threshold", c.dedup_threshold},
                     {"class_subsets", c.class_subsets},
                     {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const auto arch = arch::architecture_from_string(j.at("architecture").get<std::string>());
  const RunConfig d = default_config(arch);
  c.builder = d.builder;
  if (j.contains("builder")) {
    nlohmann::json b = d.builder;
    b.update(j.at("builder"));
    b["architecture"] = arch::to_string(arch);
    c.builder = b.get<arch::BuilderArgs>();
  }
  c.train = j.value("train", d.train);
  c.svm = j.value("svm", d.svm);
  c.dataset_root = j.value("dataset_root", d.dataset_root);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.split_seed = j.value("split_seed", d.split_seed);
  c.dedup_threshold = j.value("dedup_threshold", d.dedup_threshold);
  c.class_subsets = j.value("class_subsets", d.class_subsets);
  c.output_dir = j.value("output_dir", d.output_dir);
}

RunConfig default_config(arch::Architecture architecture) {
  RunConfig c;
  c.builder.architecture = architecture;
  c.builder.input_resolution = 32;
  c.builder.embedding_dim = 64;
  switch (architecture) {
    case arch::Architecture::kMobileNetV2:
      c.builder.width_multiplier = 0.25;
      break;
    case arch::Architecture::kVgg16:
      c.builder.width_multiplier = 0.125;
      break;
    case arch::Architecture::kResNetV2:
      c.builder.stage_depths = {1, 1};
      c.builder.base_width = 8;
      break;
    case arch::Architecture::kInceptionResNetV2Reduced:
      c.builder.input_resolution = 64;
      c.builder.scale = 0.125;
      c.builder.repeats = {1, 1, 1};
      break;
  }
  c.train.epochs = 30;
  c.train.learning_rate = 0.2;
  c.dataset_root = "corpus";
  c.output_dir = "runs/" + arch::to_string(architecture);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
}

void save_config(const fs::path& path, const RunConfig& config) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config " + path.string());
  os << nlohmann::json(config).dump(2) << '\n';
}

std::string config_digest(const RunConfig& config) {
  nlohmann::json j = config;
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

void require_same_digest(const std::string& expected, const std::string& found, const std::string& what) {
  if (expected != found) {
    throw StageMismatch(fmt::format("{}: digest mismatch\n  expected {}\n  found    {}", what, expected, found));
  }
}

data::DatasetManifest prepare_manifest(const RunConfig& config) {
  const auto ingested = data::ingest_directory(config.dataset_root);
  return data::split(data::dedup(ingested, config.dedup_threshold), config.test_fraction, config.split_seed);
}

ImageBatch load_partition(const data::DatasetManifest& manifest, data::Partition partition, std::size_t resolution) {
  ImageBatch b;
  std::vector<float> pixels;
  for (const auto* r : data::select(manifest, partition)) {
    Tensor image;
    try {
      image = data::preprocess(data::load_ppm(manifest.absolute_path(*r)), resolution);
    } catch (const FormatError&) {
      ++b.skipped;
      continue;
    } catch (const std::invalid_argument&) {
      ++b.skipped;
      continue;
    }
    pixels.insert(pixels.end(), image.data().begin(), image.data().end());
    b.labels.push_back(r->class_index);
  }
  if (b.labels.empty()) throw std::invalid_argument("the selected partition holds no decodable images");
  b.images = Tensor(Shape{b.labels.size(), 3, resolution, resolution}, std::move(pixels));
  return b;
}

TrainEmbedOutput train_embed(const RunConfig& config, const data::DatasetManifest& manifest, const fs::path& checkpoint_path,
                             const fs::path& loss_csv_path, std::ostream* log) {
  const arch::NetworkSpec spec = arch::build(config.builder);
  const ImageBatch batch = load_partition(manifest, data::Partition::kTrain, spec.input_resolution);
  if (log != nullptr && batch.skipped > 0) *log << fmt::format("warning: skipped {} undecodable images\n", batch.skipped);
  auto on_epoch = [&](std::size_t epoch, double loss) {
    if (log != nullptr) *log << fmt::format("epoch {:3}  mean loss {:.6f}\n", epoch + 1, loss) << std::flush;
  };
  auto result = metric::train_embedding(spec, arch::init_parameters(spec, config.train.seed), batch.images,
                                        batch.labels, config.train, on_epoch);
  arch::Checkpoint ckpt{config.builder, std::move(result.params), config_digest(config), {}};
  TrainEmbedOutput out;
  out.checkpoint_id = arch::save_checkpoint(checkpoint_path, ckpt);
  out.loss_curve = std::move(result.loss_curve);
  metric::write_loss_curve(loss_csv_path, out.loss_curve);
  return out;
}

metric::FeatureMatrix extract(const fs::path& checkpoint_path, const data::DatasetManifest& manifest,
                              data::Partition partition, const fs::path& features_path,
                              const std::optional<std::string>& expected_digest) {
  const arch::Checkpoint ckpt = arch::load_checkpoint(checkpoint_path);
  if (expected_digest) require_same_digest(*expected_digest, ckpt.config_digest, "checkpoint " + checkpoint_path.string());
  const arch::NetworkSpec spec = arch::build(ckpt.builder);
  ImageBatch batch = load_partition(manifest, partition, spec.input_resolution);
  metric::FeatureMatrix f = metric::extract_features(spec, ckpt.params, batch.images, std::move(batch.labels));
  f.class_names = manifest.classes;
  f.checkpoint_id = ckpt.checkpoint_id;
  f.config_digest = ckpt.config_digest;
  f.skipped = batch.skipped;
  metric::save_features(features_path, f);
  return f;
}

metric::FeatureMatrix restrict_classes(const metric::FeatureMatrix& f, std::size_t k) {
  if (k == 0 || k >= f.class_names.size()) return f;
  metric::FeatureMatrix out = f;
  const std::size_t d = f.dim();
  std::vector<float> rows;
  out.labels.clear();
  for (std::size_t i = 0; i < f.count(); ++i) {
    if (static_cast<std::size_t>(f.labels[i]) >= k) continue;
    rows.insert(rows.end(), f.rows.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                f.rows.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    out.labels.push_back(f.labels[i]);
  }
  if (out.labels.empty()) throw std::invalid_argument("class subset leaves no feature rows");
  out.rows = Tensor(Shape{out.labels.size(), d}, std::move(rows));
  out.class_names.resize(k);
  return out;
}

svm::MulticlassSvm train_svm(const RunConfig& config, const metric::FeatureMatrix& train_features,
                             std::size_t class_subset, const fs::path& model_path) {
  require_same_digest(config_digest(config), train_features.config_digest, "train features");
  if (class_subset == 1) throw std::invalid_argument("a class subset needs at least 2 classes");
  if (class_subset > train_features.class_names.size()) {
    throw std::invalid_argument(fmt::format("class subset {} exceeds the {} available classes", class_subset,
                                            train_features.class_names.size()));
  }
  const metric::FeatureMatrix f = restrict_classes(train_features, class_subset);
  svm::MulticlassSvm m = svm::ovr_train(f.rows.cast<double>(), f.labels, f.class_names.size(), config.svm);
  m.class_names = f.class_names;
  svm::save_model(model_path, m, svm::ModelFileInfo{f.checkpoint_id, f.config_digest});
  return m;
}

std::vector<double> Evaluation::recall() const {
  std::vector<double> r;
  for (const auto& row : confusion) {
    std::size_t n = 0;
    for (auto v : row) n += v;
    const std::size_t hit = row[r.size()];
    r.push_back(n == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(n));
  }
  return r;
}

Evaluation evaluate(const svm::MulticlassSvm& model, const svm::ModelFileInfo& info, const metric::FeatureMatrix& f) {
  require_same_digest(info.config_digest, f.config_digest, "evaluation features vs model");
  if (info.checkpoint_id != f.checkpoint_id) {
    throw StageMismatch(fmt::format("evaluation features come from checkpoint {}, the model from {}", f.checkpoint_id,
                                    info.checkpoint_id));
  }
  const std::size_t k = model.num_classes();
  Evaluation e;
  e.class_names = model.class_names;
  e.class_names.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (e.class_names[c].empty()) e.class_names[c] = std::to_string(c);
  }
  e.confusion.assign(k, std::vector<std::size_t>(k, 0));
  const Tensor64 rows = f.rows.cast<double>();
  const std::size_t d = f.dim();
  for (std::size_t i = 0; i < f.count(); ++i) {
    const auto truth = static_cast<std::size_t>(f.labels[i]);
    if (truth >= k) continue;
    const auto pred = static_cast<std::size_t>(svm::ovr_predict(model, rows.data().subspan(i * d, d)));
    ++e.confusion[truth][pred];
    ++e.total;
    if (pred == truth) ++e.correct;
  }
  if (e.total == 0) throw std::invalid_argument("evaluation set is empty");
  return e;
}

void write_confusion_csv(const fs::path& path, const Evaluation& e) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "true\\predicted";
  for (const auto& name : e.class_names) os << ',' << name;
  os << '\n';
  for (std::size_t t = 0; t < e.confusion.size(); ++t) {
    os << e.class_names[t];
    for (auto v : e.confusion[t]) os << ',' << v;
    os << '\n';
  }
}

void print_evaluation(std::ostream& os, const Evaluation& e) {
  os << fmt::format("top-1 accuracy: {:.2f}% ({}/{})\n\n", e.accuracy(), e.correct, e.total);
  os << "| class | recall (%) | test images |\n|---|---:|---:|\n";
  const auto recall = e.recall();
  for (std::size_t c = 0; c < e.class_names.size(); ++c) {
    std::size_t n = 0;
    for (auto v : e.confusion[c]) n += v;
    os << fmt::format("| {} | {:.2f} | {} |\n", e.class_names[c], recall[c], n);
  }
}

void print_stats(std::ostream& os, const data::ClassStats& s) {
  os << "| Total amount | Average | Median | Max | Min |\n|---:|---:|---:|---:|---:|\n";
  os << fmt::format("| {} | {:.2f} | {:g} | {} | {} |\n", s.total, s.average, s.median, s.max, s.min);
}

void write_stats_csv(const fs::path& path, const data::ClassStats& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "total_amount,average,median,max,min\n";
  os << fmt::format("{},{:.6g},{:g},{},{}\n", s.total, s.average, s.median, s.max, s.min);
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int architecture_rank(arch::Architecture a) {
  switch (a) {
    case arch::Architecture::kMobileNetV2: return 0;
    case arch::Architecture::kVgg16: return 1;
    case arch::Architecture::kResNetV2: return 2;
    case arch::Architecture::kInceptionResNetV2Reduced: return 3;
  }
  return 4;
}

std::string display_name(arch::Architecture a) {
  switch (a) {
    case arch::Architecture::kMobileNetV2: return "MobileNetV2";
    case arch::Architecture::kVgg16: return "VGG16";
    case arch::Architecture::kResNetV2: return "ResNetV2";
    case arch::Architecture::kInceptionResNetV2Reduced: return "Inception-ResNet-v2 (reduced)";
  }
  return "unknown";
}

std::vector<std::size_t> report_subsets(const std::vector<RunSummary>& rows) {
  for (const auto& r : rows) {
    if (!r.failed) return r.subsets;
  }
  return rows.empty() ? std::vector<std::size_t>{} : rows.front().subsets;
}

}  // namespace

RunSummary run_pipeline(const RunConfig& config, std::ostream* log) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  RunSummary s;
  s.architecture = config.builder.architecture;
  s.config_digest = config_digest(config);
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  save_config(out / "config.json", config);

  const data::DatasetManifest manifest = prepare_manifest(config);
  data::save_manifest(out / "manifest.jsonl", manifest);
  s.subsets = config.class_subsets;
  if (s.subsets.empty()) s.subsets.push_back(manifest.classes.size());

  auto t = clock::now();
  const auto trained = train_embed(config, manifest, out / "checkpoint.bin", out / "loss.csv", log);
  s.train_seconds += seconds_since(t);
  s.checkpoint_id = trained.checkpoint_id;
  s.loss_curve = trained.loss_curve;

  t = clock::now();
  const auto train_f = extract(out / "checkpoint.bin", manifest, data::Partition::kTrain, out / "train.features", s.config_digest);
  const auto test_f = extract(out / "checkpoint.bin", manifest, data::Partition::kTest, out / "test.features", s.config_digest);
  s.eval_seconds += seconds_since(t);

  s.converged = true;
  for (auto k : s.subsets) {
    const std::string tag = std::to_string(k);
    t = clock::now();
    train_svm(config, train_f, k, out / ("svm_" + tag + ".model"));
    s.train_seconds += seconds_since(t);
    t = clock::now();
    svm::ModelFileInfo info;
    const auto model = svm::load_model(out / ("svm_" + tag + ".model"), &info);
    const Evaluation e = evaluate(model, info, test_f);
    s.eval_seconds += seconds_since(t);
    write_confusion_csv(out / ("confusion_" + tag + ".csv"), e);
    s.accuracy.push_back(e.accuracy());
    s.converged = s.converged && model.all_converged();
    if (log != nullptr) *log << fmt::format("{} classes: accuracy {:.2f}%\n", k, e.accuracy());
  }
  s.total_seconds = seconds_since(start);
  return s;
}

ComparisonReport compare(const std::vector<RunConfig>& configs, std::ostream* log) {
  if (configs.empty()) throw std::invalid_argument("compare needs at least one config");
  std::vector<RunConfig> ordered = configs;
  std::stable_sort(ordered.begin(), ordered.end(), [](const RunConfig& a, const RunConfig& b) {
    return architecture_rank(a.builder.architecture) < architecture_rank(b.builder.architecture);
  });
  ComparisonReport report;
  for (const auto& c : ordered) {
    if (log != nullptr) *log << "== " << arch::to_string(c.builder.architecture) << " ==\n";
    try {
      report.rows.push_back(run_pipeline(c, log));
    } catch (const std::exception& e) {
      RunSummary failed;
      failed.architecture = c.builder.architecture;
      failed.config_digest = config_digest(c);
      failed.subsets = c.class_subsets;
      failed.failed = true;
      failed.error = e.what();
      if (log != nullptr) *log << "run failed: " << e.what() << '\n';
      report.rows.push_back(std::move(failed));
    }
  }
  return report;
}

std::string ComparisonReport::markdown() const {
  const auto subsets = report_subsets(rows);
  std::ostringstream os;
  os << "| Model |";
  for (auto k : subsets) os << fmt::format(" Accuracy {} classes (%) |", k);
  os << " Train time (s) | Eval time (s) | Execution time (s) | Converged | Config digest |\n|---|";
  for (std::size_t i = 0; i < subsets.size(); ++i) os << "---:|";
  os << "---:|---:|---:|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << display_name(r.architecture) << " |";
    if (r.failed) {
      for (std::size_t i = 0; i < subsets.size(); ++i) os << " failed |";
      os << " - | - | - | - | " << r.config_digest.substr(0, 12) << " |\n";
      continue;
    }
    for (std::size_t i = 0; i < subsets.size(); ++i) {
      os << (i < r.accuracy.size() ? fmt::format(" {:.2f} |", r.accuracy[i]) : std::string(" - |"));
    }
    os << fmt::format(" {:.1f} | {:.1f} | {:.1f} | {} | {} |\n", r.train_seconds, r.eval_seconds, r.total_seconds,
                      r.converged ? "yes" : "no", r.config_digest.substr(0, 12));
  }
  for (const auto& r : rows) {
    if (r.failed) os << "\n" << display_name(r.architecture) << " failed: " << r.error << "\n";
  }
  return os.str();
}

std::string ComparisonReport::csv() const {
  const auto subsets = report_subsets(rows);
  std::ostringstream os;
  os << "architecture";
  for (auto k : subsets) os << ",accuracy_" << k;
  os << ",train_s,eval_s,total_s,converged,status,config_digest\n";
  for (const auto& r : rows) {
    os << arch::to_string(r.architecture);
    for (std::size_t i = 0; i < subsets.size(); ++i) {
      os << ',' << (!r.failed && i < r.accuracy.size() ? fmt::format("{:.4f}", r.accuracy[i]) : std::string());
    }
    if (r.failed) {
      os << ",,,,," << "failed," << r.config_digest << '\n';
    } else {
      os << fmt::format(",{:.3f},{:.3f},{:.3f},{},ok,{}\n", r.train_seconds, r.eval_seconds, r.total_seconds,
                        r.converged ? "true" : "false", r.config_digest);
    }
  }
  return os.str();
}

}  // namespace plantid::pipeline
