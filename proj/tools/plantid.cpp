#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "plantid/arch/checkpoint.hpp"
#include "plantid/data/manifest.hpp"
#include "plantid/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace plantid;

namespace {

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw std::invalid_argument(fmt::format("{} '{}' does not exist", what, path));
}

pipeline::RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return pipeline::default_config(arch::Architecture::kMobileNetV2);
  require_file(path, "config");
  return pipeline::load_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Plant identification pipeline: backbones, triplet embeddings, SVM classification"};
  app.require_subcommand(1);

  // make-synthetic
  data::SyntheticOptions synth;
  std::string synth_root = "corpus";
  auto* make_synth = app.add_subcommand("make-synthetic", "Write a synthetic PPM corpus");
  make_synth->add_option("--out", synth_root, "Corpus directory")->capture_default_str();
  make_synth->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  make_synth->add_option("--per-class", synth.per_class, "Images per class")->capture_default_str();
  make_synth->add_option("--resolution", synth.resolution, "Image side in pixels")->capture_default_str();
  make_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  // ingest
  std::string ingest_root;
  std::string ingest_out = "manifest.jsonl";
  std::string exclusions;
  auto* ingest = app.add_subcommand("ingest", "Build a manifest from a class-per-folder tree");
  ingest->add_option("root", ingest_root, "Dataset root")->required();
  ingest->add_option("--out", ingest_out, "Manifest path")->capture_default_str();
  ingest->add_option("--exclude", exclusions, "Exclusion list (one relative path per line)");

  // stats
  std::string stats_manifest;
  std::string stats_partition = "all";
  std::string stats_csv;
  auto* stats = app.add_subcommand("stats", "Per-class count statistics");
  stats->add_option("manifest", stats_manifest, "Manifest path")->required();
  stats->add_option("--partition", stats_partition, "all, train or test")->capture_default_str();
  stats->add_option("--csv", stats_csv, "Also write CSV here");

  // dedup
  std::string dedup_in;
  std::string dedup_out;
  int dedup_threshold = 5;
  auto* dedup = app.add_subcommand("dedup", "Remove exact and same-class near-duplicate images");
  dedup->add_option("manifest", dedup_in, "Input manifest")->required();
  dedup->add_option("--out", dedup_out, "Output manifest (default: overwrite input)");
  dedup->add_option("--threshold", dedup_threshold, "Average-hash Hamming threshold")->capture_default_str();

  // split
  std::string split_in;
  std::string split_out;
  double split_fraction = 0.25;
  std::uint64_t split_seed = 1;
  auto* split = app.add_subcommand("split", "Stratified train/test assignment");
  split->add_option("manifest", split_in, "Input manifest")->required();
  split->add_option("--out", split_out, "Output manifest (default: overwrite input)");
  split->add_option("--test-fraction", split_fraction, "Test fraction in (0,1)")->capture_default_str();
  split->add_option("--seed", split_seed, "Split seed")->capture_default_str();

  // train-embed
  std::string te_config;
  std::string te_manifest;
  std::string te_out;
  auto* train_embed = app.add_subcommand("train-embed", "Train a backbone with triplet loss");
  train_embed->add_option("--config", te_config, "Run config JSON")->required();
  train_embed->add_option("--manifest", te_manifest, "Split manifest (default: ingest+dedup+split the dataset root)");
  train_embed->add_option("--out", te_out, "Output directory (default: the config's output_dir)");

  // extract
  std::string ex_checkpoint;
  std::string ex_manifest;
  std::string ex_partition = "test";
  std::string ex_out;
  std::string ex_config;
  auto* extract = app.add_subcommand("extract", "Embed a manifest partition with a checkpoint");
  extract->add_option("--checkpoint", ex_checkpoint, "Checkpoint file")->required();
  extract->add_option("--manifest", ex_manifest, "Split manifest")->required();
  extract->add_option("--partition", ex_partition, "train, test or all")->capture_default_str();
  extract->add_option("--out", ex_out, "Feature file")->required();
  extract->add_option("--config", ex_config, "Run config to check the checkpoint against");

  // train-svm
  std::string svm_config;
  std::string svm_features;
  std::string svm_out;
  std::size_t svm_subset = 0;
  auto* train_svm = app.add_subcommand("train-svm", "One-vs-rest SVM on train features");
  train_svm->add_option("--config", svm_config, "Run config JSON")->required();
  train_svm->add_option("--features", svm_features, "Train feature file")->required();
  train_svm->add_option("--out", svm_out, "Model file")->required();
  train_svm->add_option("--class-subset", svm_subset, "Use only the first k classes (0 = all)");

  // evaluate
  std::string ev_model;
  std::string ev_features;
  std::string ev_confusion;
  auto* evaluate = app.add_subcommand("evaluate", "Top-1 accuracy, per-class recall and confusion matrix");
  evaluate->add_option("--model", ev_model, "Model file")->required();
  evaluate->add_option("--features", ev_features, "Test feature file")->required();
  evaluate->add_option("--confusion", ev_confusion, "Confusion matrix CSV path");

  // compare
  std::vector<std::string> cmp_configs;
  std::string cmp_dataset;
  std::string cmp_out = "compare";
  std::vector<std::size_t> cmp_subsets;
  auto* compare = app.add_subcommand("compare", "Run the full pipeline per backbone and tabulate");
  compare->add_option("--configs", cmp_configs, "Run configs (default: the four desk-scale backbones)");
  compare->add_option("--dataset", cmp_dataset, "Dataset root for the default configs");
  compare->add_option("--out", cmp_out, "Report directory")->capture_default_str();
  compare->add_option("--class-subset", cmp_subsets, "Class counts to evaluate (default configs only)");

  // print-config
  std::string pc_arch = "mobilenet_v2";
  auto* print_config = app.add_subcommand("print-config", "Print the default run config");
  print_config->add_option("--architecture", pc_arch, "Backbone")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*make_synth) {
      data::make_synthetic_corpus(synth_root, synth);
      std::cout << fmt::format("wrote {} classes x {} images ({}x{}) to {}\n", synth.classes, synth.per_class,
                               synth.resolution, synth.resolution, fs::absolute(synth_root).string());
      pipeline::print_stats(std::cout, data::stats(data::ingest_directory(synth_root), data::Partition::kAll));
    } else if (*ingest) {
      std::vector<std::string> excluded;
      if (!exclusions.empty()) excluded = data::read_exclusion_list(exclusions);
      const auto m = data::ingest_directory(ingest_root, excluded);
      data::save_manifest(ingest_out, m);
      std::cout << fmt::format("{} records, {} classes, {} notes -> {}\n", m.records.size(), m.classes.size(),
                               m.notes.size(), ingest_out);
    } else if (*stats) {
      require_file(stats_manifest, "manifest");
      const auto s = data::stats(data::load_manifest(stats_manifest), data::partition_from_string(stats_partition));
      pipeline::print_stats(std::cout, s);
      if (!stats_csv.empty()) pipeline::write_stats_csv(stats_csv, s);
    } else if (*dedup) {
      require_file(dedup_in, "manifest");
      const auto before = data::load_manifest(dedup_in);
      const auto after = data::dedup(before, dedup_threshold);
      data::save_manifest(dedup_out.empty() ? dedup_in : dedup_out, after);
      std::cout << fmt::format("{} -> {} records\n", before.records.size(), after.records.size());
    } else if (*split) {
      require_file(split_in, "manifest");
      const auto m = data::split(data::load_manifest(split_in), split_fraction, split_seed);
      data::save_manifest(split_out.empty() ? split_in : split_out, m);
      const auto test = data::select(m, data::Partition::kTest).size();
      std::cout << fmt::format("train {} / test {}\n", m.records.size() - test, test);
    } else if (*train_embed) {
      const auto cfg = config_or_default(te_config);
      const fs::path out = te_out.empty() ? fs::path(cfg.output_dir) : fs::path(te_out);
      fs::create_directories(out);
      data::DatasetManifest m;
      if (te_manifest.empty()) {
        m = pipeline::prepare_manifest(cfg);
        data::save_manifest(out / "manifest.jsonl", m);
      } else {
        require_file(te_manifest, "manifest");
        m = data::load_manifest(te_manifest);
      }
      const auto r = pipeline::train_embed(cfg, m, out / "checkpoint.bin", out / "loss.csv", &std::cout);
      std::cout << fmt::format("checkpoint {} ({})\nconfig digest {}\n", (out / "checkpoint.bin").string(),
                               r.checkpoint_id, pipeline::config_digest(cfg));
    } else if (*extract) {
      require_file(ex_checkpoint, "checkpoint");
      require_file(ex_manifest, "manifest");
      std::optional<std::string> digest;
      if (!ex_config.empty()) digest = pipeline::config_digest(config_or_default(ex_config));
      const auto f = pipeline::extract(ex_checkpoint, data::load_manifest(ex_manifest),
                                       data::partition_from_string(ex_partition), ex_out, digest);
      std::cout << fmt::format("{} rows x {} dims -> {}", f.count(), f.dim(), ex_out);
      if (f.skipped > 0) std::cout << fmt::format(" (warning: {} undecodable images skipped)", f.skipped);
      std::cout << '\n';
    } else if (*train_svm) {
      require_file(svm_features, "features");
      const auto cfg = config_or_default(svm_config);
      const auto m = pipeline::train_svm(cfg, metric::load_features(svm_features), svm_subset, svm_out);
      std::size_t sv = 0;
      for (const auto& b : m.models) sv += b.support_count();
      std::cout << fmt::format("{} binary models, {} support vectors, converged: {} -> {}\n", m.num_classes(), sv,
                               m.all_converged() ? "yes" : "no", svm_out);
    } else if (*evaluate) {
      require_file(ev_model, "model");
      require_file(ev_features, "features");
      svm::ModelFileInfo info;
      const auto model = svm::load_model(ev_model, &info);
      const auto e = pipeline::evaluate(model, info, metric::load_features(ev_features));
      pipeline::print_evaluation(std::cout, e);
      const fs::path confusion = ev_confusion.empty() ? fs::path(ev_model).replace_extension(".confusion.csv") : fs::path(ev_confusion);
      pipeline::write_confusion_csv(confusion, e);
      std::cout << "confusion matrix -> " << confusion.string() << '\n';
    } else if (*compare) {
      std::vector<pipeline::RunConfig> configs;
      if (cmp_configs.empty()) {
        if (cmp_dataset.empty()) throw std::invalid_argument("compare needs --configs or --dataset");
        for (auto a : {arch::Architecture::kMobileNetV2, arch::Architecture::kVgg16, arch::Architecture::kResNetV2,
                       arch::Architecture::kInceptionResNetV2Reduced}) {
          auto c = pipeline::default_config(a);
          c.dataset_root = cmp_dataset;
          c.class_subsets = cmp_subsets;
          c.output_dir = (fs::path(cmp_out) / arch::to_string(a)).string();
          configs.push_back(std::move(c));
        }
      } else {
        for (const auto& p : cmp_configs) configs.push_back(config_or_default(p));
      }
      const auto report = pipeline::compare(configs, &std::cout);
      fs::create_directories(cmp_out);
      write_text(fs::path(cmp_out) / "report.md", report.markdown());
      write_text(fs::path(cmp_out) / "report.csv", report.csv());
      std::cout << '\n' << report.markdown();
    } else if (*print_config) {
      std::cout << nlohmann::json(pipeline::default_config(arch::architecture_from_string(pc_arch))).dump(2) << '\n';
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
