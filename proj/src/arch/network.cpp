#include "plantid/arch/network.hpp"

#include <cmath>
#include <random>

#include "plantid/autograd.hpp"

namespace plantid::arch {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
class Runner {
 public:
  Runner(const ParameterSet<T>& params, ForwardContext<T>& ctx) : params_(params), ctx_(ctx) {}

  Var<T> run(const std::vector<Layer>& layers, Var<T> x) {
    for (const auto& l : layers) x = run(l, x);
    return x;
  }

  Var<T> run(const Layer& layer, const Var<T>& x) {
    return std::visit(
        Overloaded{
            [&](const Conv& c) {
              const ag::Param<T> w = param(c.name + ".weight");
              const ag::Param<T> b = c.bias ? param(c.name + ".bias") : ag::Param<T>{};
              return ag::conv2d(tape(), x, w, c.bias ? &b : nullptr, ops::ConvOptions{c.stride, c.pad_h, c.pad_w, c.groups});
            },
            [&](const BatchNorm& b) {
              ag::BatchNormArgs<T> args;
              args.gamma = param(b.name + ".gamma");
              args.beta = param(b.name + ".beta");
              args.running_mean = &params_.at(b.name + ".running_mean");
              args.running_var = &params_.at(b.name + ".running_var");
              args.epsilon = b.epsilon;
              args.momentum = b.momentum;
              args.train = ctx_.mode == Mode::kTrain;
              if (args.train && ctx_.running_updates != nullptr) {
                BasicTensor<T> mean(Shape{b.channels});
                BasicTensor<T> var(Shape{b.channels});
                Var<T> y = ag::batchnorm(tape(), x, args, &mean, &var);
                (*ctx_.running_updates)[b.name + ".running_mean"] = std::move(mean);
                (*ctx_.running_updates)[b.name + ".running_var"] = std::move(var);
                return y;
              }
              return ag::batchnorm<T>(tape(), x, args, nullptr, nullptr);
            },
            [&](const Act& a) { return activate(a.kind, x); },
            [&](const MaxPool& m) { return ag::maxpool2d(tape(), x, m.window, m.stride); },
            [&](const GlobalAvgPool&) { return ag::global_avgpool(tape(), x); },
            [&](const Flatten&) {
              const std::size_t n = x.value.dim(0);
              return ag::reshape(tape(), x, Shape{n, x.value.size() / n});
            },
            [&](const Linear& l) {
              const ag::Param<T> w = param(l.name + ".weight");
              const ag::Param<T> b = l.bias ? param(l.name + ".bias") : ag::Param<T>{};
              return ag::linear(tape(), x, w, l.bias ? &b : nullptr);
            },
            [&](const Sequential& s) { return observed(s.name, x, run(s.layers, x)); },
            [&](const Residual& r) {
              Var<T> body = run(r.body, x);
              if (r.scale != 1.0) body = ag::scale(tape(), body, r.scale);
              Var<T> shortcut = r.shortcut.empty() ? x : run(r.shortcut, x);
              return observed(r.name, x, activate(r.post, ag::add(tape(), shortcut, body)));
            },
            [&](const Concat& c) {
              std::vector<Var<T>> parts;
              for (const auto& b : c.branches) parts.push_back(run(b, x));
              return observed(c.name, x, ag::concat_channels(tape(), parts));
            },
        },
        layer.op);
  }

 private:
  GradTape<T>* tape() const { return ctx_.tape; }

  ag::Param<T> param(const std::string& name) const {
    const auto& e = params_.entry(name);
    return ag::Param<T>{&e.value, name, e.trainable};
  }

  Var<T> activate(Activation kind, const Var<T>& x) const {
    switch (kind) {
      case Activation::kRelu: return ag::relu(tape(), x);
      case Activation::kRelu6: return ag::relu6(tape(), x);
      case Activation::kIdentity: break;
    }
    return x;
  }

  Var<T> observed(const std::string& name, const Var<T>& in, Var<T> out) const {
    if (ctx_.observer) ctx_.observer(name, in.value, out.value);
    return out;
  }

  const ParameterSet<T>& params_;
  ForwardContext<T>& ctx_;
};

template <typename T>
void zero_learnables(const std::vector<Layer>& layers, ParameterSet<T>& params);

template <typename T>
void zero_learnables(const Layer& layer, ParameterSet<T>& params) {
  auto zero = [&](const std::string& name) {
    if (params.contains(name)) {
      for (auto& v : params.at(name).data()) v = T{0};
    }
  };
  std::visit(Overloaded{
                 [&](const Conv& c) {
                   zero(c.name + ".weight");
                   zero(c.name + ".bias");
                 },
                 [&](const BatchNorm& b) {
                   zero(b.name + ".gamma");
                   zero(b.name + ".beta");
                 },
                 [&](const Linear& l) {
                   zero(l.name + ".weight");
                   zero(l.name + ".bias");
                 },
                 [&](const Sequential& s) { zero_learnables(s.layers, params); },
                 [&](const Residual& r) {
                   zero_learnables(r.body, params);
                   zero_learnables(r.shortcut, params);
                 },
                 [&](const Concat& c) {
                   for (const auto& b : c.branches) zero_learnables(b, params);
                 },
                 [](const auto&) {},
             },
             layer.op);
}

template <typename T>
void zero_learnables(const std::vector<Layer>& layers, ParameterSet<T>& params) {
  for (const auto& l : layers) zero_learnables(l, params);
}

template <typename T>
void zero_identity_residuals(const std::vector<Layer>& layers, ParameterSet<T>& params) {
  for (const auto& layer : layers) {
    if (const auto* s = std::get_if<Sequential>(&layer.op)) {
      zero_identity_residuals(s->layers, params);
    } else if (const auto* r = std::get_if<Residual>(&layer.op)) {
      if (r->shortcut.empty()) zero_learnables(r->body, params);
    }
  }
}

}  // namespace

Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Parameters params;
  for (const auto& p : parameter_shapes(spec)) {
    Tensor t(p.shape);
    if (ends_with(p.name, ".weight")) {
      // conv [O, C/g, kh, kw] or linear [D, M]
      const std::size_t fan_in = p.shape.size() == 4 ? p.shape[1] * p.shape[2] * p.shape[3] : p.shape[0];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : t.data()) v = static_cast<float>(dist(rng));
    } else if (ends_with(p.name, ".gamma") || ends_with(p.name, ".running_var")) {
      t = Tensor::filled(p.shape, 1.0f);
    }
    params.add(p.name, std::move(t), p.learnable);
  }
  return params;
}

void check_parameters(const NetworkSpec& spec, const Parameters& params) {
  const auto expected = parameter_shapes(spec);
  for (const auto& p : expected) {
    if (!params.contains(p.name)) throw std::invalid_argument("missing parameter '" + p.name + "'");
    if (params.at(p.name).shape() != p.shape) {
      throw ShapeError("parameter '" + p.name + "' has shape " + shape_to_string(params.at(p.name).shape()) +
                       ", spec expects " + shape_to_string(p.shape));
    }
  }
  if (params.size() != expected.size()) throw std::invalid_argument("parameter set holds tensors the spec does not use");
}

template <typename T>
Var<T> forward(const NetworkSpec& spec, const ParameterSet<T>& params, const Var<T>& input, ForwardContext<T>& ctx) {
  const Shape& s = input.value.shape();
  const Shape expected = spec.input_shape();
  if (s.size() != 4 || s[1] != expected[0] || s[2] != expected[1] || s[3] != expected[2]) {
    throw ShapeError("network expects input [N," + std::to_string(expected[0]) + "," + std::to_string(expected[1]) +
                     "," + std::to_string(expected[2]) + "], got " + shape_to_string(s));
  }
  Runner<T> runner(params, ctx);
  return runner.run(spec.layers, input);
}

template <typename T>
Var<T> forward_embed(const NetworkSpec& spec, const ParameterSet<T>& params, const Var<T>& input,
                     ForwardContext<T>& ctx) {
  return ag::l2_normalize(ctx.tape, forward(spec, params, input, ctx));
}

Tensor embed(const NetworkSpec& spec, const Parameters& params, const Tensor& images, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("embed: batch_size must be positive");
  const std::size_t n = images.dim(0);
  std::vector<Tensor> chunks;
  for (std::size_t start = 0; start < n; start += batch_size) {
    ForwardContext<float> ctx;
    const std::size_t end = std::min(n, start + batch_size);
    chunks.push_back(forward_embed(spec, params, Var<float>{images.slice_rows(start, end), {}}, ctx).value);
  }
  if (chunks.size() == 1) return std::move(chunks.front());
  std::vector<float> all;
  for (const auto& c : chunks) all.insert(all.end(), c.data().begin(), c.data().end());
  return Tensor(Shape{n, spec.embedding_dim}, std::move(all));
}

template <typename T>
void zero_residual_bodies(const NetworkSpec& spec, ParameterSet<T>& params) {
  zero_identity_residuals(spec.layers, params);
}

#define PLANTID_INSTANTIATE_NETWORK(T)                                                                              \
  template Var<T> forward(const NetworkSpec&, const ParameterSet<T>&, const Var<T>&, ForwardContext<T>&);         \
  template Var<T> forward_embed(const NetworkSpec&, const ParameterSet<T>&, const Var<T>&, ForwardContext<T>&);   \
  template void zero_residual_bodies(const NetworkSpec&, ParameterSet<T>&);

PLANTID_INSTANTIATE_NETWORK(float)
PLANTID_INSTANTIATE_NETWORK(double)

}  // namespace plantid::arch
