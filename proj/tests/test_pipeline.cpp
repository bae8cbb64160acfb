#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "plantid/arch/checkpoint.hpp"
#include "plantid/pipeline/pipeline.hpp"
#include "support/cli.hpp"
#include "support/oracles.hpp"

using namespace plantid;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(oracle::read_bytes(p));
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

pipeline::RunConfig small_config(const fs::path& corpus, const fs::path& out) {
  auto c = pipeline::default_config(arch::Architecture::kMobileNetV2);
  c.builder.embedding_dim = 16;
  c.train.epochs = 20;
  c.train.classes_per_batch = 4;
  c.dataset_root = corpus.string();
  c.output_dir = out.string();
  return c;
}

// make-synthetic -> ingest -> dedup -> split -> train-embed -> extract x2 -> train-svm -> evaluate, all via the CLI.
struct Chain {
  oracle::TempDir dir{"chain"};
  pipeline::RunConfig config;
  cli::Result train, extract_train, extract_test, svm, eval_test, eval_train;
  fs::path path(const std::string& name) const { return dir / name; }

  Chain() {
    auto ok = [&](const std::vector<std::string>& args) {
      auto r = cli::run(args, dir.path());
      if (r.code != 0) throw std::runtime_error("cli failed: " + args.front() + "\n" + r.err);
      return r;
    };
    ok({"make-synthetic", "--out", path("corpus").string(), "--classes", "4", "--per-class", "20", "--resolution", "32",
        "--seed", "3"});
    ok({"ingest", path("corpus").string(), "--out", path("m.jsonl").string()});
    ok({"dedup", path("m.jsonl").string()});
    ok({"split", path("m.jsonl").string(), "--test-fraction", "0.25", "--seed", "1"});
    config = small_config(path("corpus"), path("run"));
    pipeline::save_config(path("config.json"), config);
    train = ok({"train-embed", "--config", path("config.json").string(), "--manifest", path("m.jsonl").string()});
    extract_train = ok({"extract", "--checkpoint", path("run/checkpoint.bin").string(), "--manifest",
                        path("m.jsonl").string(), "--partition", "train", "--out", path("train.features").string(),
                        "--config", path("config.json").string()});
    extract_test = ok({"extract", "--checkpoint", path("run/checkpoint.bin").string(), "--manifest",
                       path("m.jsonl").string(), "--partition", "test", "--out", path("test.features").string()});
    svm = ok({"train-svm", "--config", path("config.json").string(), "--features", path("train.features").string(),
              "--out", path("svm.model").string()});
    eval_test = ok({"evaluate", "--model", path("svm.model").string(), "--features", path("test.features").string(),
                    "--confusion", path("confusion.csv").string()});
    eval_train = ok({"evaluate", "--model", path("svm.model").string(), "--features", path("train.features").string(),
                     "--confusion", path("confusion_train.csv").string()});
  }
};

Chain& chain() {
  static Chain c;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- exit codes and small commands

TEST(Cli, ExitCodes) {
  oracle::TempDir dir("cli_codes");
  EXPECT_EQ(cli::run({"print-config"}, dir.path()).code, 0);
  EXPECT_EQ(cli::run({"print-config", "--architecture", "alexnet"}, dir.path()).code, 1);
  EXPECT_EQ(cli::run({}, dir.path()).code, 1);
  EXPECT_EQ(cli::run({"no-such-command"}, dir.path()).code, 1);
  EXPECT_EQ(cli::run({"make-synthetic", "--out", (dir / "c").string(), "--classes", "1"}, dir.path()).code, 1);
  EXPECT_EQ(cli::run({"stats", (dir / "missing.jsonl").string()}, dir.path()).code, 1);
  EXPECT_EQ(cli::run({"evaluate", "--model", (dir / "a.model").string(), "--features", (dir / "b.features").string()},
                     dir.path())
                .code,
            1);
  EXPECT_EQ(cli::run({"train-embed", "--config", (dir / "none.json").string()}, dir.path()).code, 1);
  // A corrupt manifest is a runtime failure, not a usage error.
  oracle::write_bytes(dir / "bad.jsonl", "{\"format\": \"plantid-manifest\"\n");
  EXPECT_EQ(cli::run({"stats", (dir / "bad.jsonl").string()}, dir.path()).code, 2);
}

TEST(Cli, PrintConfigRoundTrips) {
  oracle::TempDir dir("cli_print");
  for (auto a : {"mobilenet_v2", "vgg16", "resnet_v2", "inception_resnet_v2_reduced"}) {
    const auto r = cli::run({"print-config", "--architecture", a}, dir.path());
    ASSERT_EQ(r.code, 0) << r.err;
    oracle::write_bytes(dir / "c.json", r.out);
    const auto c = pipeline::load_config(dir / "c.json");
    EXPECT_EQ(nlohmann::json(c), nlohmann::json(pipeline::default_config(arch::architecture_from_string(a))));
  }
}

TEST(Cli, StatsTableAndCsv) {
  oracle::TempDir dir("cli_stats");
  ASSERT_EQ(cli::run({"make-synthetic", "--out", (dir / "c").string(), "--classes", "3", "--per-class", "5",
                      "--resolution", "16"},
                     dir.path())
                .code,
            0);
  ASSERT_EQ(cli::run({"ingest", (dir / "c").string(), "--out", (dir / "m.jsonl").string()}, dir.path()).code, 0);
  const auto r = cli::run({"stats", (dir / "m.jsonl").string(), "--csv", (dir / "s.csv").string()}, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("| Total amount | Average | Median | Max | Min |"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("| 15 | 5.00 | 5 | 5 | 5 |"), std::string::npos) << r.out;
  const auto csv = read_csv(dir / "s.csv");
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[0], (std::vector<std::string>{"total_amount", "average", "median", "max", "min"}));
  EXPECT_EQ(csv[1], (std::vector<std::string>{"15", "5", "5", "5", "5"}));

  // Unsplit manifest: the test partition is empty.
  EXPECT_EQ(cli::run({"stats", (dir / "m.jsonl").string(), "--partition", "test"}, dir.path()).code, 1);
}

TEST(Cli, SyntheticSeedIsHonoured) {
  oracle::TempDir dir("cli_seed");
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(cli::run({"make-synthetic", "--out", (dir / name).string(), "--classes", "2", "--per-class", "3",
                        "--resolution", "16", "--seed", "9"},
                       dir.path())
                  .code,
              0);
  }
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (e.is_regular_file()) {
      EXPECT_EQ(oracle::read_bytes(e.path()), oracle::read_bytes(dir / "b" / fs::relative(e.path(), dir / "a")));
    }
  }
}

// ---------------------------------------------------------------- config

TEST(Config, DigestIgnoresOutputDirOnly) {
  auto a = pipeline::default_config(arch::Architecture::kResNetV2);
  auto b = a;
  b.output_dir = "elsewhere";
  EXPECT_EQ(pipeline::config_digest(a), pipeline::config_digest(b));
  b.svm.C = 11.0;
  EXPECT_NE(pipeline::config_digest(a), pipeline::config_digest(b));
  EXPECT_EQ(pipeline::config_digest(a).size(), 64u);

  oracle::TempDir dir("config");
  pipeline::save_config(dir / "c.json", a);
  const auto back = pipeline::load_config(dir / "c.json");
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(a));
  EXPECT_EQ(pipeline::config_digest(back), pipeline::config_digest(a));
}

TEST(Config, DigestMismatchNamesBoth) {
  try {
    pipeline::require_same_digest("aaaa", "bbbb", "stage");
    FAIL();
  } catch (const pipeline::StageMismatch& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("aaaa"), std::string::npos);
    EXPECT_NE(w.find("bbbb"), std::string::npos);
  }
  EXPECT_NO_THROW(pipeline::require_same_digest("x", "x", "stage"));
}

// ---------------------------------------------------------------- the staged chain

TEST(Chain, ArtifactsCarryTheDigest) {
  auto& c = chain();
  const auto digest = pipeline::config_digest(c.config);
  EXPECT_NE(c.train.out.find(digest), std::string::npos);
  const auto ckpt = arch::load_checkpoint(c.path("run/checkpoint.bin"));
  EXPECT_EQ(ckpt.config_digest, digest);
  const auto tr = metric::load_features(c.path("train.features"));
  const auto te = metric::load_features(c.path("test.features"));
  EXPECT_EQ(tr.config_digest, digest);
  EXPECT_EQ(te.config_digest, digest);
  EXPECT_EQ(tr.checkpoint_id, ckpt.checkpoint_id);
  EXPECT_EQ(tr.count(), 60u);
  EXPECT_EQ(te.count(), 20u);
  svm::ModelFileInfo info;
  svm::load_model(c.path("svm.model"), &info);
  EXPECT_EQ(info.config_digest, digest);
  EXPECT_EQ(info.checkpoint_id, ckpt.checkpoint_id);

  const auto loss = read_csv(c.path("run/loss.csv"));
  ASSERT_EQ(loss.size(), 1u + c.config.train.epochs);
  EXPECT_EQ(loss[0], (std::vector<std::string>{"epoch", "mean_loss"}));
}

TEST(Chain, TrainAccuracyAtLeastTestAccuracy) {
  auto& c = chain();
  const double test = cli::accuracy(c.eval_test.out), train = cli::accuracy(c.eval_train.out);
  ASSERT_GE(test, 0.0) << c.eval_test.out;
  ASSERT_GE(train, 0.0) << c.eval_train.out;
  EXPECT_GE(train, test);
  EXPECT_LE(train, 100.0);
}

TEST(Chain, ConfusionRowsSumToClassCounts) {
  auto& c = chain();
  const auto te = metric::load_features(c.path("test.features"));
  std::map<std::string, std::size_t> counts;
  for (auto l : te.labels) ++counts[te.class_names[static_cast<std::size_t>(l)]];
  const auto rows = read_csv(c.path("confusion.csv"));
  ASSERT_EQ(rows.size(), 1u + te.class_names.size());
  EXPECT_EQ(rows[0][0], "true\\predicted");
  EXPECT_EQ(std::vector<std::string>(rows[0].begin() + 1, rows[0].end()), te.class_names);
  std::size_t diagonal = 0, total = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::size_t sum = 0;
    for (std::size_t j = 1; j < rows[i].size(); ++j) sum += std::stoul(rows[i][j]);
    EXPECT_EQ(sum, counts[rows[i][0]]) << rows[i][0];
    diagonal += std::stoul(rows[i][i]);
    total += sum;
  }
  const double acc = cli::accuracy(c.eval_test.out);
  EXPECT_NEAR(acc, 100.0 * diagonal / total, 0.005);
}

TEST(Chain, StageMismatchesAreRejected) {
  auto& c = chain();
  auto other = c.config;
  other.svm.C = 3.0;
  pipeline::save_config(c.path("other.json"), other);
  const auto svm = cli::run({"train-svm", "--config", c.path("other.json").string(), "--features",
                             c.path("train.features").string(), "--out", c.path("other.model").string()},
                            c.dir.path());
  EXPECT_EQ(svm.code, 1);
  EXPECT_NE(svm.err.find(pipeline::config_digest(c.config)), std::string::npos) << svm.err;
  EXPECT_NE(svm.err.find(pipeline::config_digest(other)), std::string::npos) << svm.err;

  const auto ex = cli::run({"extract", "--checkpoint", c.path("run/checkpoint.bin").string(), "--manifest",
                            c.path("m.jsonl").string(), "--out", c.path("x.features").string(), "--config",
                            c.path("other.json").string()},
                           c.dir.path());
  EXPECT_EQ(ex.code, 1);

  // Features from a different checkpoint are refused by evaluate.
  auto f = metric::load_features(c.path("test.features"));
  f.checkpoint_id = "0000";
  metric::save_features(c.path("foreign.features"), f);
  EXPECT_EQ(cli::run({"evaluate", "--model", c.path("svm.model").string(), "--features",
                      c.path("foreign.features").string()},
                     c.dir.path())
                .code,
            1);
}

TEST(Chain, EmptyPartitionsAreRejected) {
  auto& c = chain();
  ASSERT_EQ(cli::run({"ingest", c.path("corpus").string(), "--out", c.path("unsplit.jsonl").string()}, c.dir.path()).code,
            0);
  EXPECT_EQ(cli::run({"extract", "--checkpoint", c.path("run/checkpoint.bin").string(), "--manifest",
                      c.path("unsplit.jsonl").string(), "--partition", "test", "--out", c.path("e.features").string()},
                     c.dir.path())
                .code,
            1);
}

TEST(Chain, ClassSubset) {
  auto& c = chain();
  ASSERT_EQ(cli::run({"train-svm", "--config", c.path("config.json").string(), "--features",
                      c.path("train.features").string(), "--out", c.path("sub.model").string(), "--class-subset", "2"},
                     c.dir.path())
                .code,
            0);
  EXPECT_EQ(svm::load_model(c.path("sub.model")).num_classes(), 2u);
  const auto r = cli::run({"evaluate", "--model", c.path("sub.model").string(), "--features",
                           c.path("test.features").string()},
                          c.dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("/10)"), std::string::npos) << r.out;  // 5 test images in each of 2 classes
  EXPECT_EQ(cli::run({"train-svm", "--config", c.path("config.json").string(), "--features",
                      c.path("train.features").string(), "--out", c.path("one.model").string(), "--class-subset", "1"},
                     c.dir.path())
                .code,
            1);
}

// ---------------------------------------------------------------- compare

TEST(Compare, OneConfigOneRow) {
  auto& c = chain();
  auto cfg = c.config;
  cfg.train.epochs = 2;
  cfg.class_subsets = {2, 4};
  cfg.output_dir = c.path("cmp_run").string();
  pipeline::save_config(c.path("cmp.json"), cfg);
  const auto r = cli::run({"compare", "--configs", c.path("cmp.json").string(), "--out", c.path("cmp").string()},
                          c.dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_csv(c.path("cmp/report.csv"));
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[0], (std::vector<std::string>{"architecture", "accuracy_2", "accuracy_4", "train_s", "eval_s", "total_s",
                                              "converged", "status", "config_digest"}));
  EXPECT_EQ(csv[1][0], "mobilenet_v2");
  EXPECT_EQ(csv[1][7], "ok");
  EXPECT_EQ(csv[1][8], pipeline::config_digest(cfg));
  for (int k : {1, 2}) {
    const double a = std::stod(csv[1][k]);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 100.0);
  }
  const auto md = oracle::read_bytes(c.path("cmp/report.md"));
  EXPECT_NE(md.find("Execution time (s)"), std::string::npos);
  EXPECT_NE(md.find("| MobileNetV2 |"), std::string::npos) << md;
  for (const char* f : {"config.json", "manifest.jsonl", "checkpoint.bin", "loss.csv", "train.features", "test.features",
                        "svm_2.model", "svm_4.model", "confusion_2.csv", "confusion_4.csv"}) {
    EXPECT_TRUE(fs::exists(c.path("cmp_run") / f)) << f;
  }
}

TEST(Compare, FailedRowDoesNotStopTheRest) {
  auto& c = chain();
  auto good = c.config;
  good.train.epochs = 1;
  good.output_dir = c.path("ok_run").string();
  auto bad = good;
  bad.builder = arch::BuilderArgs{};
  bad.builder.architecture = arch::Architecture::kResNetV2;
  bad.builder.input_resolution = 32;
  bad.builder.embedding_dim = 16;
  bad.builder.stage_depths = {1};
  bad.builder.base_width = 4;
  bad.dataset_root = c.path("no_such_corpus").string();
  bad.output_dir = c.path("bad_run").string();
  const auto report = pipeline::compare({bad, good});
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].architecture, arch::Architecture::kMobileNetV2);  // paper order
  EXPECT_FALSE(report.rows[0].failed);
  EXPECT_TRUE(report.rows[1].failed);
  EXPECT_NE(report.csv().find(",failed,"), std::string::npos);
}
