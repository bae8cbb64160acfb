#include "plantid/metric/features.hpp"

#include <cmath>
#include <fstream>

#include "plantid/serialize.hpp"

namespace plantid::metric {

namespace {
constexpr const char* kFormat = "plantid-features";
constexpr int kVersion = 1;
}  // namespace

FeatureMatrix extract_features(const arch::NetworkSpec& spec, const arch::Parameters& params, const Tensor& images,
                               std::vector<std::int32_t> labels, std::size_t batch_size) {
  if (images.rank() != 4 || images.dim(0) == 0) throw std::invalid_argument("extract: empty partition");
  if (images.dim(0) != labels.size()) throw std::invalid_argument("extract: image and label counts differ");
  FeatureMatrix f;
  f.rows = arch::embed(spec, params, images, batch_size);
  f.labels = std::move(labels);
  return f;
}

void check_features(const FeatureMatrix& f) {
  if (f.rows.rank() != 2 || f.rows.dim(0) != f.labels.size()) {
    throw std::invalid_argument("feature matrix has " + shape_to_string(f.rows.shape()) + " rows but " +
                                std::to_string(f.labels.size()) + " labels");
  }
  const std::size_t d = f.rows.dim(1);
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(f.rows.data()[i * d + k]) * f.rows.data()[i * d + k];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5) {
      throw std::invalid_argument("feature row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  check_features(f);
  nlohmann::json header{{"format", kFormat},         {"version", kVersion},
                        {"count", f.count()},        {"dim", f.dim()},
                        {"checkpoint_id", f.checkpoint_id}, {"config_digest", f.config_digest},
                        {"label_map", f.class_names}, {"skipped", f.skipped}};
  auto os = open_for_write(path);
  write_header(os, header);
  write_tensor(os, f.rows);
  write_i32_array(os, f.labels);
  if (!os) throw std::runtime_error("failed writing features " + path.string());
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  auto is = open_for_read(path);
  const auto header = read_header(is);
  expect_format(header, kFormat, kVersion);
  FeatureMatrix f;
  f.checkpoint_id = header.value("checkpoint_id", "");
  f.config_digest = header.value("config_digest", "");
  f.class_names = header.value("label_map", std::vector<std::string>{});
  f.skipped = header.value("skipped", std::size_t{0});
  const auto count = header.at("count").get<std::size_t>();
  f.rows = read_tensor(is);
  if (f.rows.rank() != 2 || f.rows.dim(0) != count || f.rows.dim(1) != header.at("dim").get<std::size_t>()) {
    throw FormatError("feature file " + path.string() + ": row tensor " + shape_to_string(f.rows.shape()) +
                      " disagrees with header");
  }
  f.labels = read_i32_array(is, count);
  check_features(f);
  return f;
}

}  // namespace plantid::metric
