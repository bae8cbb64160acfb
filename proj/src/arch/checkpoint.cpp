#include "plantid/arch/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "plantid/digest.hpp"
#include "plantid/serialize.hpp"

namespace plantid::arch {

namespace {
constexpr const char* kFormat = "plantid-checkpoint";
constexpr int kVersion = 1;
}  // namespace

std::string save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint) {
  const NetworkSpec spec = build(checkpoint.builder);
  check_parameters(spec, checkpoint.params);

  std::ostringstream body;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : parameter_shapes(spec)) {
    write_tensor(body, checkpoint.params.at(p.name));
    manifest.push_back({{"name", p.name}, {"shape", p.shape}, {"learnable", p.learnable}});
  }
  const std::string bytes = body.str();
  checkpoint.checkpoint_id = sha256_hex(bytes);

  nlohmann::json header{{"format", kFormat},
                        {"version", kVersion},
                        {"architecture", to_string(checkpoint.builder.architecture)},
                        {"builder", checkpoint.builder},
                        {"parameters", manifest},
                        {"config_digest", checkpoint.config_digest},
                        {"checkpoint_id", checkpoint.checkpoint_id}};
  auto os = open_for_write(path);
  write_header(os, header);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
  return checkpoint.checkpoint_id;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = open_for_read(path);
  const nlohmann::json header = read_header(is);
  expect_format(header, kFormat, kVersion);

  Checkpoint c;
  c.builder = header.at("builder").get<BuilderArgs>();
  c.config_digest = header.value("config_digest", "");
  const NetworkSpec spec = build(c.builder);
  const auto expected = parameter_shapes(spec);
  const auto& manifest = header.at("parameters");
  if (manifest.size() != expected.size()) {
    throw std::invalid_argument("checkpoint " + path.string() + " lists " + std::to_string(manifest.size()) +
                                " tensors, the " + to_string(c.builder.architecture) + " spec needs " +
                                std::to_string(expected.size()));
  }

  const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  std::istringstream body(bytes);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& p = expected[i];
    if (manifest[i].at("name").get<std::string>() != p.name) {
      throw std::invalid_argument("checkpoint tensor " + std::to_string(i) + " is '" +
                                  manifest[i].at("name").get<std::string>() + "', expected '" + p.name + "'");
    }
    Tensor t = read_tensor(body);
    if (t.shape() != p.shape) {
      throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + shape_to_string(t.shape()) +
                       ", spec expects " + shape_to_string(p.shape));
    }
    c.params.add(p.name, std::move(t), p.learnable);
  }
  if (body.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint " + path.string());
  c.checkpoint_id = sha256_hex(bytes);
  if (header.contains("checkpoint_id") && header.at("checkpoint_id").get<std::string>() != c.checkpoint_id) {
    throw FormatError("checkpoint payload does not match its recorded id (file corrupted?)");
  }
  return c;
}

}  // namespace plantid::arch
