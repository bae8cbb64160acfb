#include "plantid/arch/builders.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace plantid::arch {

namespace {

Layer conv(std::string name, std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t stride,
           std::size_t pad_h, std::size_t pad_w, bool bias = false, std::size_t groups = 1) {
  return Layer{Conv{std::move(name), in, out, kh, kw, stride, pad_h, pad_w, groups, bias}};
}

Layer square_conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                  bool bias = false) {
  return conv(std::move(name), in, out, k, k, stride, k / 2, k / 2, bias);
}

Layer bn(std::string name, std::size_t channels) { return Layer{BatchNorm{std::move(name), channels}}; }
Layer act(Activation kind) { return Layer{Act{kind}}; }
Layer seq(std::string name, std::vector<Layer> layers) { return Layer{Sequential{std::move(name), std::move(layers)}}; }

void append(std::vector<Layer>& dst, std::vector<Layer> src) {
  for (auto& l : src) dst.push_back(std::move(l));
}

/// conv (no bias) -> batchnorm -> activation
std::vector<Layer> conv_bn_act(const std::string& name, std::size_t in, std::size_t out, std::size_t kh,
                               std::size_t kw, std::size_t stride, std::size_t pad_h, std::size_t pad_w,
                               Activation a, std::size_t groups = 1) {
  std::vector<Layer> v;
  v.push_back(conv(name + ".conv", in, out, kh, kw, stride, pad_h, pad_w, false, groups));
  v.push_back(bn(name + ".bn", out));
  if (a != Activation::kIdentity) v.push_back(act(a));
  return v;
}

std::vector<Layer> cbr(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                       std::size_t stride = 1) {
  return conv_bn_act(name, in, out, k, k, stride, k / 2, k / 2, Activation::kRelu);
}

Layer head(std::size_t features, std::size_t embedding_dim) {
  return seq("head", {Layer{Flatten{}}, Layer{Linear{"head.linear", features, embedding_dim, true}}});
}

void finish(NetworkSpec& spec) { validate(spec); }

}  // namespace

const std::vector<BottleneckConfig>& mobilenet_v2_plan() {
  static const std::vector<BottleneckConfig> plan{
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
  };
  return plan;
}

std::size_t scale_channels(std::size_t channels, double multiplier) {
  const double scaled = static_cast<double>(channels) * multiplier / 8.0;
  const auto rounded = static_cast<std::size_t>(std::llround(scaled)) * 8;
  return std::max<std::size_t>(8, rounded);
}

NetworkSpec build_mobilenet_v2(double width_multiplier, std::size_t input_resolution, std::size_t embedding_dim) {
  if (input_resolution < 32 || input_resolution > 224 || input_resolution % 32 != 0) {
    throw std::invalid_argument("mobilenet_v2: unsupported resolution " + std::to_string(input_resolution) +
                                " (expected one of 32, 64, ..., 224; the final pool needs an integral 1..7 map)");
  }
  if (!(width_multiplier >= 0.25 && width_multiplier <= 1.4)) {
    throw std::invalid_argument("mobilenet_v2: width multiplier must lie in [0.25, 1.4]");
  }
  if (embedding_dim == 0) throw std::invalid_argument("mobilenet_v2: embedding_dim must be positive");

  NetworkSpec spec;
  spec.architecture = Architecture::kMobileNetV2;
  spec.input_resolution = input_resolution;
  spec.width_multiplier = width_multiplier;
  spec.embedding_dim = embedding_dim;

  std::size_t in = scale_channels(32, width_multiplier);
  spec.layers.push_back(seq("conv2d", conv_bn_act("conv2d", 3, in, 3, 3, 2, 1, 1, Activation::kRelu6)));

  std::size_t row_index = 1;
  for (const auto& row : mobilenet_v2_plan()) {
    const std::size_t out = scale_channels(row.channels, width_multiplier);
    std::vector<Layer> units;
    for (std::size_t r = 0; r < row.repeats; ++r) {
      const std::size_t stride = r == 0 ? row.stride : 1;
      const std::string name = "bottleneck" + std::to_string(row_index) + ".unit" + std::to_string(r);
      const std::size_t hidden = in * row.expansion;
      std::vector<Layer> body;
      // t = 1 has nothing to expand; the reference network omits that 1x1 conv.
      if (row.expansion != 1) {
        append(body, conv_bn_act(name + ".expand", in, hidden, 1, 1, 1, 0, 0, Activation::kRelu6));
      }
      append(body, conv_bn_act(name + ".depthwise", hidden, hidden, 3, 3, stride, 1, 1, Activation::kRelu6, hidden));
      append(body, conv_bn_act(name + ".project", hidden, out, 1, 1, 1, 0, 0, Activation::kIdentity));
      if (stride == 1 && in == out) {
        units.push_back(Layer{Residual{name, std::move(body), {}, Activation::kIdentity, 1.0}});
      } else {
        units.push_back(seq(name, std::move(body)));
      }
      in = out;
    }
    spec.layers.push_back(seq("bottleneck" + std::to_string(row_index), std::move(units)));
    ++row_index;
  }

  // Multipliers below one leave the last conv at 1280.
  const std::size_t last = width_multiplier > 1.0 ? scale_channels(1280, width_multiplier) : 1280;
  spec.layers.push_back(seq("conv2d_1x1", conv_bn_act("conv2d_1x1", in, last, 1, 1, 1, 0, 0, Activation::kRelu6)));
  spec.layers.push_back(seq("avgpool", {Layer{GlobalAvgPool{}}}));
  spec.layers.push_back(head(last, embedding_dim));
  finish(spec);
  return spec;
}

NetworkSpec build_vgg16(std::size_t input_resolution, std::size_t embedding_dim, double width_multiplier) {
  if (input_resolution < 32 || input_resolution % 32 != 0) {
    throw std::invalid_argument("vgg16: resolution " + std::to_string(input_resolution) +
                                " is not a positive multiple of 32");
  }
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw std::invalid_argument("vgg16: width multiplier must lie in (0, 1]");
  }
  if (embedding_dim == 0) throw std::invalid_argument("vgg16: embedding_dim must be positive");
  auto width = [&](std::size_t c) { return width_multiplier == 1.0 ? c : scale_channels(c, width_multiplier); };

  NetworkSpec spec;
  spec.architecture = Architecture::kVgg16;
  spec.input_resolution = input_resolution;
  spec.width_multiplier = width_multiplier;
  spec.embedding_dim = embedding_dim;

  const std::vector<std::vector<std::size_t>> blocks{{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  std::size_t in = 3;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string block = "block" + std::to_string(b + 1);
    std::vector<Layer> layers;
    for (std::size_t j = 0; j < blocks[b].size(); ++j) {
      const std::size_t out = width(blocks[b][j]);
      layers.push_back(square_conv(block + ".conv" + std::to_string(j + 1), in, out, 3, 1, true));
      layers.push_back(act(Activation::kRelu));
      in = out;
    }
    layers.push_back(Layer{MaxPool{2, 2}});
    spec.layers.push_back(seq(block, std::move(layers)));
  }
  const std::size_t spatial = input_resolution / 32;
  const std::size_t fc = width(4096);
  spec.layers.push_back(seq("classifier", {Layer{Flatten{}}, Layer{Linear{"classifier.fc1", in * spatial * spatial, fc, true}},
                                           act(Activation::kRelu), Layer{Linear{"classifier.fc2", fc, fc, true}},
                                           act(Activation::kRelu)}));
  spec.layers.push_back(seq("head", {Layer{Linear{"head.linear", fc, embedding_dim, true}}}));
  finish(spec);
  return spec;
}

NetworkSpec build_resnet_v2(const std::vector<std::size_t>& stage_depths, std::size_t base_width,
                            std::size_t input_resolution, std::size_t embedding_dim) {
  if (stage_depths.empty()) throw std::invalid_argument("resnet_v2: stage_depths must be non-empty");
  for (auto d : stage_depths) {
    if (d == 0) throw std::invalid_argument("resnet_v2: every stage needs at least one unit");
  }
  if (base_width < 8) throw std::invalid_argument("resnet_v2: base_width must be >= 8");
  if (embedding_dim == 0) throw std::invalid_argument("resnet_v2: embedding_dim must be positive");

  NetworkSpec spec;
  spec.architecture = Architecture::kResNetV2;
  spec.input_resolution = input_resolution;
  spec.embedding_dim = embedding_dim;

  // The stem already produces the first stage's width, so every unit of stage 0 has an identity shortcut.
  std::size_t in = 4 * base_width;
  spec.layers.push_back(seq("stem", {conv("stem.conv", 3, in, 7, 7, 2, 3, 3, true), Layer{MaxPool{2, 2}}}));
  for (std::size_t s = 0; s < stage_depths.size(); ++s) {
    const std::size_t inner = base_width << s;
    const std::size_t out = 4 * inner;
    std::vector<Layer> units;
    for (std::size_t u = 0; u < stage_depths[s]; ++u) {
      const std::size_t stride = (s > 0 && u == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s) + ".unit" + std::to_string(u);
      std::vector<Layer> body{
          bn(name + ".bn1", in),    act(Activation::kRelu), square_conv(name + ".conv1", in, inner, 1),
          bn(name + ".bn2", inner), act(Activation::kRelu), square_conv(name + ".conv2", inner, inner, 3, stride),
          bn(name + ".bn3", inner), act(Activation::kRelu), square_conv(name + ".conv3", inner, out, 1),
      };
      std::vector<Layer> shortcut;
      if (stride != 1 || in != out) shortcut.push_back(conv(name + ".shortcut", in, out, 1, 1, stride, 0, 0));
      units.push_back(Layer{Residual{name, std::move(body), std::move(shortcut), Activation::kIdentity, 1.0}});
      in = out;
    }
    spec.layers.push_back(seq("stage" + std::to_string(s), std::move(units)));
  }
  spec.layers.push_back(seq("post", {bn("post.bn", in), act(Activation::kRelu)}));
  spec.layers.push_back(seq("avgpool", {Layer{GlobalAvgPool{}}}));
  spec.layers.push_back(head(in, embedding_dim));
  finish(spec);
  return spec;
}

NetworkSpec build_inception_resnet_v2_reduced(double scale, std::size_t input_resolution, std::size_t embedding_dim,
                                              const std::vector<std::size_t>& repeats) {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("inception_resnet_v2_reduced: scale must lie in (0, 1]");
  if (input_resolution < 64) throw std::invalid_argument("inception_resnet_v2_reduced: resolution must be >= 64");
  if (repeats.size() != 3) throw std::invalid_argument("inception_resnet_v2_reduced: expected three stage repeat counts");
  for (auto r : repeats) {
    if (r == 0) throw std::invalid_argument("inception_resnet_v2_reduced: stage repeat counts must be positive");
  }
  if (embedding_dim == 0) throw std::invalid_argument("inception_resnet_v2_reduced: embedding_dim must be positive");
  auto w = [&](std::size_t c) {
    const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(c) * scale));
    if (v == 0) {
      throw std::invalid_argument("inception_resnet_v2_reduced: scale " + std::to_string(scale) +
                                  " gives a zero-width branch (from " + std::to_string(c) + " channels)");
    }
    return v;
  };
  auto tower = [](std::vector<std::vector<Layer>> parts) {
    std::vector<Layer> out;
    for (auto& p : parts) append(out, std::move(p));
    return out;
  };

  NetworkSpec spec;
  spec.architecture = Architecture::kInceptionResNetV2Reduced;
  spec.input_resolution = input_resolution;
  spec.width_multiplier = scale;
  spec.embedding_dim = embedding_dim;

  std::vector<Layer> stem = tower({cbr("stem.conv1", 3, w(32), 3, 2), cbr("stem.conv2", w(32), w(32), 3),
                                   cbr("stem.conv3", w(32), w(64), 3)});
  stem.push_back(Layer{MaxPool{2, 2}});
  append(stem, cbr("stem.conv4", w(64), w(320), 1));
  spec.layers.push_back(seq("stem", std::move(stem)));
  const std::size_t a_ch = w(320);

  std::vector<Layer> stage_a;
  for (std::size_t i = 0; i < repeats[0]; ++i) {
    const std::string n = "stage_a.block" + std::to_string(i);
    Concat towers{n + ".towers",
                  {cbr(n + ".b0", a_ch, w(32), 1),
                   tower({cbr(n + ".b1a", a_ch, w(32), 1), cbr(n + ".b1b", w(32), w(32), 3)}),
                   tower({cbr(n + ".b2a", a_ch, w(32), 1), cbr(n + ".b2b", w(32), w(48), 3),
                          cbr(n + ".b2c", w(48), w(64), 3)})}};
    const std::size_t cat = w(32) + w(32) + w(64);
    stage_a.push_back(Layer{Residual{n, {Layer{std::move(towers)}, square_conv(n + ".project", cat, a_ch, 1, 1, true)},
                                     {}, Activation::kRelu, 0.17}});
  }
  spec.layers.push_back(seq("stage_a", std::move(stage_a)));

  {
    const std::string n = "reduction_a";
    Concat towers{n + ".towers",
                  {{Layer{MaxPool{2, 2}}},
                   cbr(n + ".b1", a_ch, w(384), 3, 2),
                   tower({cbr(n + ".b2a", a_ch, w(256), 1), cbr(n + ".b2b", w(256), w(256), 3),
                          cbr(n + ".b2c", w(256), w(384), 3, 2)})}};
    spec.layers.push_back(seq(n, {Layer{std::move(towers)}}));
  }
  const std::size_t b_ch = a_ch + w(384) + w(384);

  std::vector<Layer> stage_b;
  for (std::size_t i = 0; i < repeats[1]; ++i) {
    const std::string n = "stage_b.block" + std::to_string(i);
    Concat towers{n + ".towers",
                  {cbr(n + ".b0", b_ch, w(192), 1),
                   tower({cbr(n + ".b1a", b_ch, w(128), 1),
                          conv_bn_act(n + ".b1b", w(128), w(160), 1, 7, 1, 0, 3, Activation::kRelu),
                          conv_bn_act(n + ".b1c", w(160), w(192), 7, 1, 1, 3, 0, Activation::kRelu)})}};
    const std::size_t cat = w(192) + w(192);
    stage_b.push_back(Layer{Residual{n, {Layer{std::move(towers)}, square_conv(n + ".project", cat, b_ch, 1, 1, true)},
                                     {}, Activation::kRelu, 0.1}});
  }
  spec.layers.push_back(seq("stage_b", std::move(stage_b)));

  {
    const std::string n = "reduction_b";
    Concat towers{n + ".towers",
                  {{Layer{MaxPool{2, 2}}},
                   tower({cbr(n + ".b1a", b_ch, w(256), 1), cbr(n + ".b1b", w(256), w(384), 3, 2)}),
                   tower({cbr(n + ".b2a", b_ch, w(256), 1), cbr(n + ".b2b", w(256), w(288), 3, 2)}),
                   tower({cbr(n + ".b3a", b_ch, w(256), 1), cbr(n + ".b3b", w(256), w(288), 3),
                          cbr(n + ".b3c", w(288), w(320), 3, 2)})}};
    spec.layers.push_back(seq(n, {Layer{std::move(towers)}}));
  }
  const std::size_t c_ch = b_ch + w(384) + w(288) + w(320);

  std::vector<Layer> stage_c;
  for (std::size_t i = 0; i < repeats[2]; ++i) {
    const std::string n = "stage_c.block" + std::to_string(i);
    Concat towers{n + ".towers",
                  {cbr(n + ".b0", c_ch, w(192), 1),
                   tower({cbr(n + ".b1a", c_ch, w(192), 1),
                          conv_bn_act(n + ".b1b", w(192), w(224), 1, 3, 1, 0, 1, Activation::kRelu),
                          conv_bn_act(n + ".b1c", w(224), w(256), 3, 1, 1, 1, 0, Activation::kRelu)})}};
    const std::size_t cat = w(192) + w(256);
    stage_c.push_back(Layer{Residual{n, {Layer{std::move(towers)}, square_conv(n + ".project", cat, c_ch, 1, 1, true)},
                                     {}, Activation::kRelu, 0.2}});
  }
  spec.layers.push_back(seq("stage_c", std::move(stage_c)));

  spec.layers.push_back(seq("conv_final", cbr("conv_final", c_ch, w(1536), 1)));
  spec.layers.push_back(seq("avgpool", {Layer{GlobalAvgPool{}}}));
  spec.layers.push_back(head(w(1536), embedding_dim));
  finish(spec);
  return spec;
}

NetworkSpec build(const BuilderArgs& a) {
  switch (a.architecture) {
    case Architecture::kMobileNetV2: return build_mobilenet_v2(a.width_multiplier, a.input_resolution, a.embedding_dim);
    case Architecture::kVgg16: return build_vgg16(a.input_resolution, a.embedding_dim, a.width_multiplier);
    case Architecture::kResNetV2: return build_resnet_v2(a.stage_depths, a.base_width, a.input_resolution, a.embedding_dim);
    case Architecture::kInceptionResNetV2Reduced:
      return build_inception_resnet_v2_reduced(a.scale, a.input_resolution, a.embedding_dim, a.repeats);
  }
  throw std::invalid_argument("unknown architecture");
}

void to_json(nlohmann::json& j, const BuilderArgs& a) {
  j = nlohmann::json{{"architecture", to_string(a.architecture)},
                     {"width_multiplier", a.width_multiplier},
                     {"input_resolution", a.input_resolution},
                     {"embedding_dim", a.embedding_dim},
                     {"stage_depths", a.stage_depths},
                     {"base_width", a.base_width},
                     {"scale", a.scale},
                     {"repeats", a.repeats}};
}

void from_json(const nlohmann::json& j, BuilderArgs& a) {
  BuilderArgs defaults;
  a.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  a.width_multiplier = j.value("width_multiplier", defaults.width_multiplier);
  a.input_resolution = j.value("input_resolution", defaults.input_resolution);
  a.embedding_dim = j.value("embedding_dim", defaults.embedding_dim);
  a.stage_depths = j.value("stage_depths", defaults.stage_depths);
  a.base_width = j.value("base_width", defaults.base_width);
  a.scale = j.value("scale", defaults.scale);
  a.repeats = j.value("repeats", defaults.repeats);
}

}  // namespace plantid::arch
