#include <variant>

#include "plantid/arch/builders.hpp"

namespace plantid::arch {

namespace {

struct Totals {
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
};

Shape tally(const std::vector<Layer>& layers, Shape in, Totals& t);

Shape tally(const Layer& layer, const Shape& in, Totals& t) {
  if (const auto* c = std::get_if<Conv>(&layer.op)) {
    const Shape out = infer_shape(layer, in);
    const std::uint64_t kernel = c->kernel_h * c->kernel_w * (c->in_channels / c->groups);
    t.params += kernel * c->out_channels + (c->bias ? c->out_channels : 0);
    t.madds += static_cast<std::uint64_t>(out[1]) * out[2] * kernel * c->out_channels;
    return out;
  }
  if (const auto* b = std::get_if<BatchNorm>(&layer.op)) {
    t.params += 2 * b->channels;
    return infer_shape(layer, in);
  }
  if (const auto* l = std::get_if<Linear>(&layer.op)) {
    t.params += l->in_features * l->out_features + (l->bias ? l->out_features : 0);
    t.madds += static_cast<std::uint64_t>(l->in_features) * l->out_features;
    return infer_shape(layer, in);
  }
  if (const auto* s = std::get_if<Sequential>(&layer.op)) return tally(s->layers, in, t);
  if (const auto* r = std::get_if<Residual>(&layer.op)) {
    const Shape out = tally(r->body, in, t);
    if (!r->shortcut.empty()) tally(r->shortcut, in, t);
    return out;
  }
  if (const auto* c = std::get_if<Concat>(&layer.op)) {
    for (const auto& b : c->branches) tally(b, in, t);
    return infer_shape(layer, in);
  }
  return infer_shape(layer, in);
}

Shape tally(const std::vector<Layer>& layers, Shape in, Totals& t) {
  for (const auto& l : layers) in = tally(l, in, t);
  return in;
}

Totals totals(const NetworkSpec& spec) {
  Totals t;
  tally(spec.layers, spec.input_shape(), t);
  return t;
}

}  // namespace

std::uint64_t count_params(const NetworkSpec& spec) { return totals(spec).params; }

std::uint64_t count_madds(const NetworkSpec& spec) { return totals(spec).madds; }

}  // namespace plantid::arch
