#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "plantid/data/image.hpp"
#include "plantid/data/manifest.hpp"
#include "plantid/digest.hpp"
#include "support/oracles.hpp"

using namespace plantid;
using data::Partition;
using data::Split;
namespace fs = std::filesystem;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor t(Shape{3, h, w});
  std::uniform_int_distribution<int> u(0, 255);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(u(rng)) / 255.0f;
  return t;
}

std::string ppm_bytes(const std::string& header, std::size_t payload) {
  return header + std::string(payload, '\x10');
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// root/<class>/<name>.ppm for every (class, count) pair.
void write_tree(const fs::path& root, const std::vector<std::pair<std::string, int>>& classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& [name, n] : classes) {
    fs::create_directories(root / name);
    for (int i = 0; i < n; ++i) data::write_ppm(root / name / ("img" + std::to_string(i) + ".ppm"), random_image(12, 12, rng));
  }
}

data::DatasetManifest counted_manifest(const std::vector<int>& counts) {
  data::DatasetManifest m;
  m.root = "/nowhere";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    m.classes.push_back("class_" + std::to_string(c));
    for (int i = 0; i < counts[c]; ++i) {
      data::ImageRecord r;
      r.path = m.classes.back() + "/" + std::to_string(i) + ".ppm";
      r.class_name = m.classes.back();
      r.class_index = static_cast<std::int32_t>(c);
      r.sha256 = sha256_hex(r.path);
      m.records.push_back(r);
    }
  }
  std::sort(m.records.begin(), m.records.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

// 109 counts with min 86, median 190, max 2420 summing to 28046.
std::vector<std::uint64_t> table_counts() {
  std::vector<std::uint64_t> c{86};
  for (int i = 0; i < 53; ++i) c.push_back(150);
  c.push_back(190);
  for (int i = 0; i < 53; ++i) c.push_back(i < 16 ? 329 : 328);
  c.push_back(2420);
  return c;
}

}  // namespace

// ---------------------------------------------------------------- ppm

TEST(Ppm, SingleRedPixel) {
  const Tensor t = data::decode_ppm(std::string("P6\n1 1\n255\n") + '\xff' + '\x00' + '\x00');
  ASSERT_EQ(t.shape(), (Shape{3, 1, 1}));
  EXPECT_EQ(t[0], 1.0f);
  EXPECT_EQ(t[1], 0.0f);
  EXPECT_EQ(t[2], 0.0f);
}

TEST(Ppm, AllZero) {
  const Tensor t = data::decode_ppm(std::string("P6 2 2 255\n") + std::string(12, '\0'));
  ASSERT_EQ(t.shape(), (Shape{3, 2, 2}));
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Ppm, ChannelPlanarAndScaled) {
  // Pixel (0,1) holds (10,20,30).
  std::string payload(12, '\0');
  payload[3] = 10;
  payload[4] = 20;
  payload[5] = 30;
  const Tensor t = data::decode_ppm("P6\n# comment\n2 2\n255\n" + payload);
  EXPECT_EQ(t.at(0, 0, 0, 1), 10.0f / 255.0f);
  EXPECT_EQ(t[0 * 4 + 1], 10.0f / 255.0f);
  EXPECT_EQ(t[1 * 4 + 1], 20.0f / 255.0f);
  EXPECT_EQ(t[2 * 4 + 1], 30.0f / 255.0f);
}

TEST(Ppm, DistinctErrors) {
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P3\n1 1\n255\n", 3)), data::PpmHeaderError);
  EXPECT_THROW(data::decode_ppm("P6\n1"), data::PpmHeaderError);
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n0 1\n255\n", 3)), data::PpmHeaderError);
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n2 2\n255\n", 11)), data::PpmTruncatedError);
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n1 1\n65535\n", 6)), data::PpmMaxvalError);
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n1 1\n15\n", 3)), data::PpmMaxvalError);
  // All three are format errors underneath.
  EXPECT_THROW(data::decode_ppm(ppm_bytes("P6\n2 2\n255\n", 1)), FormatError);
}

TEST(Ppm, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(1);
  oracle::TempDir dir("ppm");
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor im = random_image(7 + trial, 13 - trial, rng);
    data::write_ppm(dir / "x.ppm", im);
    EXPECT_EQ(data::load_ppm(dir / "x.ppm"), im);
    EXPECT_EQ(data::encode_ppm(data::decode_ppm(data::encode_ppm(im))), data::encode_ppm(im));
  }
  EXPECT_THROW(data::load_ppm(dir / "missing.ppm"), std::invalid_argument);
}

// ---------------------------------------------------------------- preprocessing

TEST(Preprocess, SquareInputIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor im = random_image(24, 24, rng);
  EXPECT_LE(max_abs_diff(data::preprocess(im, 24), im), 1e-6f);
}

TEST(Preprocess, ConstantStaysConstant) {
  const Tensor im = Tensor::filled(Shape{3, 13, 29}, 0.4f);
  for (std::size_t r : {5u, 13u, 32u}) {
    const Tensor out = data::preprocess(im, r);
    ASSERT_EQ(out.shape(), (Shape{3, r, r}));
    for (float v : out.data()) EXPECT_NEAR(v, 0.4f, 1e-6f);
  }
}

TEST(Preprocess, TwiceUpscaledMatchesOriginal) {
  std::mt19937_64 rng(3);
  const Tensor im = random_image(16, 16, rng);
  Tensor big(Shape{3, 32, 32});  // pixel replication
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) big[(c * 32 + y) * 32 + x] = im[(c * 16 + y / 2) * 16 + x / 2];
  EXPECT_LE(max_abs_diff(data::preprocess(big, 16), data::preprocess(im, 16)), 2.0f / 255.0f);
}

TEST(Preprocess, ShapeAndRange) {
  std::mt19937_64 rng(4);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{10, 40}, {40, 10}, {7, 7}, {33, 50}}) {
    const Tensor out = data::preprocess(random_image(h, w, rng), 16);
    ASSERT_EQ(out.shape(), (Shape{3, 16, 16}));
    for (float v : out.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(data::preprocess(Tensor(Shape{1, 4, 4}), 4), ShapeError);
}

TEST(Preprocess, CentreCrop) {
  // 4 x 8 image whose columns 2..5 are white: the centre crop at 4 is all white.
  Tensor im(Shape{3, 4, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 2; x < 6; ++x) im[(c * 4 + y) * 8 + x] = 1.0f;
  const Tensor out = data::preprocess(im, 4);
  for (float v : out.data()) EXPECT_EQ(v, 1.0f);
}

// ---------------------------------------------------------------- hashes

TEST(Hash, HalfBlackHalfWhite) {
  Tensor im(Shape{3, 8, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 4; x < 8; ++x) im[(c * 8 + y) * 8 + x] = 1.0f;
  EXPECT_EQ(data::average_hash(im), 0x0F0F0F0F0F0F0F0FULL);
  EXPECT_EQ(data::hash_to_hex(0x0F0F0F0F0F0F0F0FULL), "0f0f0f0f0f0f0f0f");
  EXPECT_EQ(data::hash_from_hex("0f0f0f0f0f0f0f0f"), 0x0F0F0F0F0F0F0F0FULL);
  EXPECT_THROW(data::hash_from_hex("0f0f"), FormatError);
  EXPECT_EQ(data::hamming_distance(0, ~0ULL), 64);
  EXPECT_EQ(data::hamming_distance(0b1011, 0b0001), 2);
}

TEST(Hash, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// ---------------------------------------------------------------- ingest

TEST(Ingest, ThreeClassesTwoImages) {
  oracle::TempDir dir("ingest");
  write_tree(dir.path(), {{"cherry", 2}, {"apple", 2}, {"banana", 2}}, 5);
  const auto m = data::ingest_directory(dir.path());
  EXPECT_EQ(m.records.size(), 6u);
  EXPECT_EQ(m.classes, (std::vector<std::string>{"apple", "banana", "cherry"}));
  std::map<std::string, std::int32_t> seen;
  for (const auto& r : m.records) {
    seen[r.class_name] = r.class_index;
    EXPECT_EQ(r.width, 12u);
    EXPECT_EQ(r.height, 12u);
    EXPECT_EQ(r.sha256, sha256_file(m.absolute_path(r)));
    EXPECT_EQ(r.ahash, data::average_hash(data::load_ppm(m.absolute_path(r))));
    EXPECT_EQ(r.split, Split::kUnassigned);
  }
  EXPECT_EQ(seen, (std::map<std::string, std::int32_t>{{"apple", 0}, {"banana", 1}, {"cherry", 2}}));
  EXPECT_TRUE(std::is_sorted(m.records.begin(), m.records.end(), [](auto& a, auto& b) { return a.path < b.path; }));
}

TEST(Ingest, NonImageIsNotedNotCounted) {
  oracle::TempDir dir("ingest_junk");
  write_tree(dir.path(), {{"a", 2}, {"b", 2}}, 6);
  oracle::write_bytes(dir / "a/readme.txt", "not an image");
  oracle::write_bytes(dir / "b/broken.ppm", "P6\n4 4\n255\nxx");
  const auto m = data::ingest_directory(dir.path());
  EXPECT_EQ(m.records.size(), 4u);
  auto noted = [&](const std::string& what) {
    return std::any_of(m.notes.begin(), m.notes.end(), [&](const auto& n) { return n.find(what) != std::string::npos; });
  };
  EXPECT_TRUE(noted("readme.txt"));
  EXPECT_TRUE(noted("broken.ppm"));
}

TEST(Ingest, Deterministic) {
  oracle::TempDir dir("ingest_det");
  write_tree(dir.path(), {{"x", 3}, {"y", 4}, {"z", 2}}, 7);
  EXPECT_EQ(data::ingest_directory(dir.path()), data::ingest_directory(dir.path()));
}

TEST(Ingest, ExclusionList) {
  oracle::TempDir dir("ingest_excl");
  write_tree(dir.path(), {{"x", 3}, {"y", 3}}, 8);
  oracle::write_bytes(dir / "exclude.txt", "# irrelevant\n\nx/img1.ppm\ny/img2.ppm\n");
  const auto ex = data::read_exclusion_list(dir / "exclude.txt");
  EXPECT_EQ(ex, (std::vector<std::string>{"x/img1.ppm", "y/img2.ppm"}));
  const auto m = data::ingest_directory(dir.path(), ex);
  EXPECT_EQ(m.records.size(), 4u);
  for (const auto& r : m.records) EXPECT_TRUE(r.path != "x/img1.ppm" && r.path != "y/img2.ppm") << r.path;
}

TEST(Ingest, Rejections) {
  oracle::TempDir dir("ingest_empty");
  EXPECT_THROW(data::ingest_directory(dir.path()), std::invalid_argument);
  EXPECT_THROW(data::ingest_directory(dir / "missing"), std::invalid_argument);
  fs::create_directories(dir / "only");
  oracle::write_bytes(dir / "only/notes.txt", "x");
  EXPECT_THROW(data::ingest_directory(dir.path()), std::invalid_argument);
}

TEST(Manifest, SaveLoadRoundTrip) {
  oracle::TempDir dir("manifest");
  write_tree(dir / "corpus", {{"p", 3}, {"q", 3}}, 9);
  auto m = data::split(data::ingest_directory(dir / "corpus"), 0.3, 1);
  m.notes.push_back("hand note");
  data::save_manifest(dir / "m.jsonl", m);
  EXPECT_EQ(data::load_manifest(dir / "m.jsonl"), m);
  const auto text = oracle::read_bytes(dir / "m.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);  // header plus 6 records

  oracle::write_bytes(dir / "bad.jsonl", text.substr(0, text.size() / 2) + "\n{not json\n");
  EXPECT_THROW(data::load_manifest(dir / "bad.jsonl"), FormatError);
  oracle::write_bytes(dir / "empty.jsonl", "");
  EXPECT_THROW(data::load_manifest(dir / "empty.jsonl"), FormatError);
}

// ---------------------------------------------------------------- dedup

TEST(Dedup, ExactCopiesCollapse) {
  oracle::TempDir dir("dedup_exact");
  write_tree(dir.path(), {{"a", 3}, {"b", 2}}, 10);
  fs::copy_file(dir / "a/img0.ppm", dir / "a/img9.ppm");
  fs::copy_file(dir / "a/img0.ppm", dir / "b/img7.ppm");  // across classes too
  const auto before = data::ingest_directory(dir.path());
  ASSERT_EQ(before.records.size(), 7u);
  const auto after = data::dedup(before, 0);
  EXPECT_EQ(after.records.size(), 5u);
  std::set<std::string> sha, paths;
  for (const auto& r : after.records) {
    EXPECT_TRUE(sha.insert(r.sha256).second);
    paths.insert(r.path);
  }
  EXPECT_TRUE(paths.count("a/img0.ppm"));
  EXPECT_FALSE(paths.count("a/img9.ppm"));
  EXPECT_FALSE(paths.count("b/img7.ppm"));
}

TEST(Dedup, ThresholdZeroNeedsEqualHashes) {
  auto m = counted_manifest({3, 1});
  m.records[0].ahash = 0xFF;
  m.records[1].ahash = 0xFE;  // one bit away, same class
  m.records[2].ahash = 0xFF;  // identical hash, same class
  m.records[3].ahash = 0x00;
  const auto d0 = data::dedup(m, 0);
  EXPECT_EQ(d0.records.size(), 3u);
  const auto d1 = data::dedup(m, 1);
  EXPECT_EQ(d1.records.size(), 2u);
  EXPECT_THROW(data::dedup(m, 65), std::invalid_argument);
  EXPECT_THROW(data::dedup(m, -1), std::invalid_argument);
}

TEST(Dedup, PlantedNearDuplicatesMatchExhaustiveScan) {
  oracle::TempDir dir("dedup_planted");
  write_tree(dir.path(), {{"a", 10}, {"b", 10}}, 11);
  // Perturb one pixel of three images and save the copies under later names.
  std::mt19937_64 rng(12);
  const std::vector<std::string> sources{"a/img2.ppm", "a/img5.ppm", "b/img1.ppm"};
  for (std::size_t k = 0; k < sources.size(); ++k) {
    Tensor im = data::load_ppm(dir / sources[k]);
    im[k * 7] = im[k * 7] > 0.5f ? im[k * 7] - 3.0f / 255.0f : im[k * 7] + 3.0f / 255.0f;
    const std::string cls = sources[k].substr(0, 1);
    data::write_ppm(dir / (cls + "/zz" + std::to_string(k) + ".ppm"), im);
  }
  const auto m = data::ingest_directory(dir.path());
  const int t = 5;

  // Exhaustive scan: same-class pairs within t bits.
  std::vector<std::pair<std::string, std::string>> close;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    for (std::size_t j = i + 1; j < m.records.size(); ++j) {
      const auto& a = m.records[i];
      const auto& b = m.records[j];
      if (a.class_index == b.class_index && std::popcount(a.ahash ^ b.ahash) <= t) close.emplace_back(a.path, b.path);
    }
  ASSERT_EQ(close.size(), sources.size()) << "fixture must only contain the planted pairs";

  const auto d = data::dedup(m, t);
  EXPECT_EQ(m.records.size() - d.records.size(), sources.size());
  std::set<std::string> kept;
  for (const auto& r : d.records) kept.insert(r.path);
  for (const auto& [first, second] : close) {
    EXPECT_TRUE(kept.count(std::min(first, second)));
    EXPECT_FALSE(kept.count(std::max(first, second)));
  }
  EXPECT_EQ(data::dedup(d, t), d);
}

TEST(Dedup, CrossClassNearDuplicatesAreOnlyNoted) {
  auto m = counted_manifest({2, 2});
  for (std::size_t i = 0; i < 4; ++i) m.records[i].ahash = 0x1111ULL << (12 * i);
  m.records[3].ahash = m.records[0].ahash;  // class 0 vs class 1
  const auto d = data::dedup(m, 2);
  EXPECT_EQ(d.records.size(), 4u);
  EXPECT_TRUE(std::any_of(d.notes.begin(), d.notes.end(), [](auto& n) { return n.find("cross-class") != std::string::npos; }));
}

TEST(Dedup, Idempotent) {
  oracle::TempDir dir("dedup_idem");
  data::SyntheticOptions o;
  o.classes = 3;
  o.per_class = 12;
  o.resolution = 16;
  data::make_synthetic_corpus(dir.path(), o);
  fs::copy_file(dir / "class_00/img_0000.ppm", dir / "class_00/img_9999.ppm");
  const auto m = data::ingest_directory(dir.path());
  for (int t : {0, 5, 20}) {
    const auto once = data::dedup(m, t);
    EXPECT_EQ(data::dedup(once, t), once) << t;
    std::set<std::string> sha;
    for (const auto& r : once.records) EXPECT_TRUE(sha.insert(r.sha256).second);
  }
}

// ---------------------------------------------------------------- split

TEST(Split, TenByTenAtOneTenth) {
  const auto m = data::split(counted_manifest(std::vector<int>(10, 10)), 0.1, 3);
  std::vector<int> test(10, 0);
  for (const auto& r : m.records) test[static_cast<std::size_t>(r.class_index)] += r.split == Split::kTest;
  for (int t : test) EXPECT_EQ(t, 1);
}

TEST(Split, DeterministicAndSeedSensitive) {
  const auto base = counted_manifest({7, 9, 12, 30});
  EXPECT_EQ(data::split(base, 0.25, 5), data::split(base, 0.25, 5));
  EXPECT_NE(data::split(base, 0.25, 5), data::split(base, 0.25, 6));
}

TEST(Split, PartitionProperties) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> counts;
    for (int c = 0; c < 2 + trial % 6; ++c) counts.push_back(std::uniform_int_distribution<int>(2, 40)(rng));
    const double f = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    const auto m = data::split(counted_manifest(counts), f, trial);
    const auto train = data::select(m, Partition::kTrain);
    const auto test = data::select(m, Partition::kTest);
    EXPECT_EQ(train.size() + test.size(), m.records.size());
    std::set<std::string> tr, te;
    for (auto* r : train) tr.insert(r->path);
    for (auto* r : test) te.insert(r->path);
    for (const auto& p : te) EXPECT_FALSE(tr.count(p));
    std::set<std::int32_t> ctr, cte;
    for (auto* r : train) ctr.insert(r->class_index);
    for (auto* r : test) cte.insert(r->class_index);
    EXPECT_EQ(ctr.size(), counts.size());
    EXPECT_EQ(cte.size(), counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const long n = counts[c];
      const long expect = std::clamp(std::lround(n * f), 1L, n - 1);
      EXPECT_EQ(std::count_if(test.begin(), test.end(), [&](auto* r) { return r->class_index == static_cast<int>(c); }), expect);
    }
  }
}

TEST(Split, SingletonClassIsNamed) {
  auto m = counted_manifest({5, 1, 4});
  try {
    data::split(m, 0.2, 1);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("class_1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(data::split(counted_manifest({3, 3}), 0.0, 1), std::invalid_argument);
  EXPECT_THROW(data::split(counted_manifest({3, 3}), 1.0, 1), std::invalid_argument);
}

TEST(Split, PaperScaleProportion) {
  // 109 classes shaped like the published table; a 0.0371 fraction lands near 1071 test images.
  const auto counts = table_counts();
  const auto m = data::split(counted_manifest(std::vector<int>(counts.begin(), counts.end())), 0.0371, 1);
  ASSERT_EQ(m.records.size(), 28046u);
  const double test = static_cast<double>(data::select(m, Partition::kTest).size());
  // Per-class rounding lifts the plain product 28046 * 0.0371 = 1040.5 towards the published count.
  EXPECT_NEAR(test, 1071.0, 0.05 * 1071.0) << test;
  EXPECT_GE(test, 28046 * 0.0371 - 109 * 0.5);
}

// ---------------------------------------------------------------- stats

TEST(Stats, TableColumnsFixture) {
  const auto s = data::stats_from_counts({86, 190, 2420});
  EXPECT_EQ(s.total, 2696u);
  EXPECT_EQ(s.min, 86u);
  EXPECT_EQ(s.max, 2420u);
  EXPECT_EQ(s.median, 190.0);
  EXPECT_DOUBLE_EQ(s.average, 2696.0 / 3.0);
  EXPECT_EQ(s.classes, 3u);
}

TEST(Stats, Singleton) {
  const auto s = data::stats_from_counts({42});
  EXPECT_EQ(s.total, 42u);
  EXPECT_EQ(s.average, 42.0);
  EXPECT_EQ(s.median, 42.0);
  EXPECT_EQ(s.max, 42u);
  EXPECT_EQ(s.min, 42u);
}

TEST(Stats, EvenCountMedianIsMidpoint) {
  EXPECT_EQ(data::stats_from_counts({1, 4, 10, 100}).median, 7.0);
}

TEST(Stats, PublishedTotals) {
  const auto counts = table_counts();
  ASSERT_EQ(counts.size(), 109u);
  const auto s = data::stats_from_counts(counts);
  EXPECT_EQ(s.total, 28046u);
  EXPECT_EQ(std::lround(s.average), 257);
  EXPECT_DOUBLE_EQ(s.average, 28046.0 / 109.0);
  EXPECT_EQ(s.median, 190.0);
  EXPECT_EQ(s.max, 2420u);
  EXPECT_EQ(s.min, 86u);
}

TEST(Stats, PermutationInvariantAndOrdered) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> c(1 + trial % 17);
    for (auto& v : c) v = std::uniform_int_distribution<std::uint64_t>(1, 500)(rng);
    const auto a = data::stats_from_counts(c);
    std::shuffle(c.begin(), c.end(), rng);
    const auto b = data::stats_from_counts(c);
    EXPECT_EQ(a.total, std::accumulate(c.begin(), c.end(), std::uint64_t{0}));
    EXPECT_EQ(a.total, b.total);
    EXPECT_EQ(a.median, b.median);
    EXPECT_EQ(a.average, b.average);
    EXPECT_LE(static_cast<double>(a.min), a.median);
    EXPECT_LE(a.median, static_cast<double>(a.max));
  }
}

TEST(Stats, ManifestPartitions) {
  auto m = data::split(counted_manifest({10, 20, 30}), 0.1, 2);
  const auto all = data::stats(m, Partition::kAll);
  EXPECT_EQ(all.total, 60u);
  EXPECT_EQ(all.median, 20.0);
  const auto test = data::stats(m, Partition::kTest);
  EXPECT_EQ(test.total, 6u);
  EXPECT_EQ(data::stats(m, Partition::kTrain).total, 54u);
  std::reverse(m.records.begin(), m.records.end());
  EXPECT_EQ(data::stats(m, Partition::kTest).total, 6u);
  EXPECT_THROW(data::stats(counted_manifest({3, 3}), Partition::kTest), std::invalid_argument);
  EXPECT_EQ(data::partition_from_string("train"), Partition::kTrain);
  EXPECT_THROW(data::partition_from_string("val"), std::invalid_argument);
}

// ---------------------------------------------------------------- synthetic corpus

TEST(Synthetic, Enumeration) {
  oracle::TempDir dir("synth");
  data::SyntheticOptions o;
  o.classes = 3;
  o.per_class = 20;
  o.resolution = 32;
  data::make_synthetic_corpus(dir.path(), o);
  std::size_t files = 0, folders = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    ASSERT_TRUE(e.is_directory());
    ++folders;
    for (const auto& f : fs::directory_iterator(e.path())) {
      ++files;
      EXPECT_EQ(f.path().extension(), ".ppm");
      EXPECT_EQ(data::load_ppm(f.path()).shape(), (Shape{3, 32, 32}));
    }
  }
  EXPECT_EQ(folders, 3u);
  EXPECT_EQ(files, 60u);
}

TEST(Synthetic, SameSeedSameBytes) {
  oracle::TempDir a("synth_a"), b("synth_b"), c("synth_c");
  data::SyntheticOptions o;
  o.classes = 3;
  o.per_class = 5;
  data::make_synthetic_corpus(a.path(), o);
  data::make_synthetic_corpus(b.path(), o);
  o.seed += 1;
  data::make_synthetic_corpus(c.path(), o);
  bool any_differs = false;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(oracle::read_bytes(e.path()), oracle::read_bytes(b.path() / rel)) << rel;
    any_differs = any_differs || oracle::read_bytes(e.path()) != oracle::read_bytes(c.path() / rel);
  }
  EXPECT_TRUE(any_differs);
}

TEST(Synthetic, RawPixelNearestNeighbour) {
  oracle::TempDir dir("synth_nn");
  data::SyntheticOptions o;
  o.classes = 8;
  o.per_class = 40;
  o.resolution = 32;
  data::make_synthetic_corpus(dir.path(), o);
  const auto m = data::ingest_directory(dir.path());
  std::vector<Tensor> train, test;
  std::vector<std::int32_t> ltrain, ltest;
  std::map<std::int32_t, int> seen;
  for (const auto& r : m.records) {
    Tensor im = data::load_ppm(m.absolute_path(r));
    if (seen[r.class_index]++ % 4 == 0) {
      test.push_back(std::move(im));
      ltest.push_back(r.class_index);
    } else {
      train.push_back(std::move(im));
      ltrain.push_back(r.class_index);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = 1e300;
    std::int32_t label = -1;
    for (std::size_t j = 0; j < train.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < test[i].size(); ++k) d += (test[i][k] - train[j][k]) * (test[i][k] - train[j][k]);
      if (d < best) {
        best = d;
        label = ltrain[j];
      }
    }
    correct += label == ltest[i];
  }
  EXPECT_GE(static_cast<double>(correct) / test.size(), 0.90);
}

TEST(Synthetic, Rejections) {
  oracle::TempDir dir("synth_bad");
  data::SyntheticOptions o;
  o.classes = 1;
  EXPECT_THROW(data::make_synthetic_corpus(dir / "one", o), std::invalid_argument);
  o.classes = 2;
  oracle::write_bytes(dir / "file", "x");
  EXPECT_THROW(data::make_synthetic_corpus(dir / "file" / "sub", o), std::invalid_argument);
}
