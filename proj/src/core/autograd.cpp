#include "plantid/autograd.hpp"

#include <utility>

namespace plantid::ag {

namespace {

template <typename T>
using Grads = typename GradTape<T>::ParamGrads;

// Backward body for an op with several inputs: gets the output gradient and a
// mask of which inputs need a gradient, returns one entry per input.
template <typename T>
using OpBackward = std::function<std::vector<BasicTensor<T>>(const BasicTensor<T>&, Grads<T>&, const std::vector<bool>&)>;

template <typename T>
Var<T> record(GradTape<T>* tape, BasicTensor<T> out, const std::vector<const Var<T>*>& inputs, bool has_trainable,
              OpBackward<T> fn) {
  if (tape == nullptr) return Var<T>{std::move(out), std::nullopt};
  std::vector<ValueId> ids;
  std::vector<bool> need(inputs.size(), false);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i]->id) {
      ids.push_back(*inputs[i]->id);
      need[i] = true;
    }
  }
  if (ids.empty() && !has_trainable) return Var<T>{std::move(out), std::nullopt};
  auto wrapped = [fn = std::move(fn), need](const BasicTensor<T>& gy, Grads<T>& pg) {
    std::vector<BasicTensor<T>> all = fn(gy, pg, need);
    std::vector<BasicTensor<T>> tracked;
    for (std::size_t i = 0; i < need.size(); ++i) {
      if (need[i]) tracked.push_back(std::move(all[i]));
    }
    return tracked;
  };
  const ValueId id = tape->record(std::move(ids), out.shape(), std::move(wrapped));
  return Var<T>{std::move(out), id};
}

template <typename T>
bool trainable(const Param<T>* p) {
  return p != nullptr && p->trainable;
}

}  // namespace

template <typename T>
Var<T> input(GradTape<T>* tape, BasicTensor<T> value) {
  if (tape == nullptr) return Var<T>{std::move(value), std::nullopt};
  const ValueId id = tape->leaf(value.shape());
  return Var<T>{std::move(value), id};
}

template <typename T>
Var<T> conv2d(GradTape<T>* tape, const Var<T>& x, const Param<T>& weight, const Param<T>* bias,
              const ops::ConvOptions& options) {
  const BasicTensor<T>* b = bias != nullptr ? bias->value : nullptr;
  BasicTensor<T> out = ops::conv2d(x.value, *weight.value, b, options);
  const bool w_train = weight.trainable;
  const bool b_train = trainable(bias);
  OpBackward<T> fn = [xin = x.value, w = *weight.value, options, has_bias = b != nullptr, w_train, b_train,
                      w_name = weight.name, b_name = bias != nullptr ? bias->name : std::string{}](
                         const BasicTensor<T>& gy, Grads<T>& pg, const std::vector<bool>&) {
    auto g = ops::conv2d_backward(xin, w, has_bias, options, gy);
    if (w_train) GradTape<T>::accumulate(pg, w_name, std::move(g.weight));
    if (b_train && g.bias) GradTape<T>::accumulate(pg, b_name, std::move(*g.bias));
    std::vector<BasicTensor<T>> r;
    r.push_back(std::move(g.input));
    return r;
  };
  return record<T>(tape, std::move(out), {&x}, w_train || b_train, std::move(fn));
}

template <typename T>
Var<T> relu(GradTape<T>* tape, const Var<T>& x) {
  OpBackward<T> fn = [xin = x.value](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::relu_backward(xin, gy)};
  };
  return record<T>(tape, ops::relu(x.value), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> relu6(GradTape<T>* tape, const Var<T>& x) {
  OpBackward<T> fn = [xin = x.value](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::relu6_backward(xin, gy)};
  };
  return record<T>(tape, ops::relu6(x.value), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> batchnorm(GradTape<T>* tape, const Var<T>& x, const BatchNormArgs<T>& args, BasicTensor<T>* new_mean,
                 BasicTensor<T>* new_var) {
  const bool g_train = args.gamma.trainable;
  const bool b_train = args.beta.trainable;
  if (args.train) {
    auto fwd = ops::batchnorm_train(x.value, *args.gamma.value, *args.beta.value, args.epsilon);
    if (new_mean != nullptr && new_var != nullptr) {
      *new_mean = *args.running_mean;
      *new_var = *args.running_var;
      const std::size_t reduction = x.value.size() / x.value.dim(1);
      ops::update_running_stats(*new_mean, *new_var, fwd, reduction, args.momentum);
    }
    BasicTensor<T> out = fwd.output;
    OpBackward<T> fn = [xin = x.value, gamma = *args.gamma.value, fwd = std::move(fwd), g_train, b_train,
                        g_name = args.gamma.name, b_name = args.beta.name](
                           const BasicTensor<T>& gy, Grads<T>& pg, const std::vector<bool>&) {
      auto g = ops::batchnorm_train_backward(xin, gamma, fwd, gy);
      if (g_train) GradTape<T>::accumulate(pg, g_name, std::move(g.gamma));
      if (b_train) GradTape<T>::accumulate(pg, b_name, std::move(g.beta));
      return std::vector<BasicTensor<T>>{std::move(g.input)};
    };
    return record<T>(tape, std::move(out), {&x}, g_train || b_train, std::move(fn));
  }
  BasicTensor<T> out = ops::batchnorm_infer(x.value, *args.gamma.value, *args.beta.value, *args.running_mean,
                                            *args.running_var, args.epsilon);
  OpBackward<T> fn = [xin = x.value, gamma = *args.gamma.value, rm = *args.running_mean, rv = *args.running_var,
                      eps = args.epsilon, g_train, b_train, g_name = args.gamma.name, b_name = args.beta.name](
                         const BasicTensor<T>& gy, Grads<T>& pg, const std::vector<bool>&) {
    auto g = ops::batchnorm_infer_backward(xin, gamma, rm, rv, eps, gy);
    if (g_train) GradTape<T>::accumulate(pg, g_name, std::move(g.gamma));
    if (b_train) GradTape<T>::accumulate(pg, b_name, std::move(g.beta));
    return std::vector<BasicTensor<T>>{std::move(g.input)};
  };
  return record<T>(tape, std::move(out), {&x}, g_train || b_train, std::move(fn));
}

template <typename T>
Var<T> maxpool2d(GradTape<T>* tape, const Var<T>& x, std::size_t window, std::size_t stride) {
  auto r = ops::maxpool2d(x.value, window, stride);
  OpBackward<T> fn = [shape = x.value.shape(), argmax = std::move(r.argmax)](const BasicTensor<T>& gy, Grads<T>&,
                                                                              const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::maxpool2d_backward(shape, argmax, gy)};
  };
  return record<T>(tape, std::move(r.output), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> global_avgpool(GradTape<T>* tape, const Var<T>& x) {
  OpBackward<T> fn = [shape = x.value.shape()](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::global_avgpool_backward(shape, gy)};
  };
  return record<T>(tape, ops::global_avgpool(x.value), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> reshape(GradTape<T>* tape, const Var<T>& x, Shape shape) {
  OpBackward<T> fn = [in_shape = x.value.shape()](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{gy.reshaped(in_shape)};
  };
  return record<T>(tape, x.value.reshaped(std::move(shape)), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> linear(GradTape<T>* tape, const Var<T>& x, const Param<T>& weight, const Param<T>* bias) {
  const BasicTensor<T>* b = bias != nullptr ? bias->value : nullptr;
  BasicTensor<T> out = ops::linear(x.value, *weight.value, b);
  const bool w_train = weight.trainable;
  const bool b_train = trainable(bias);
  OpBackward<T> fn = [xin = x.value, w = *weight.value, has_bias = b != nullptr, w_train, b_train,
                      w_name = weight.name, b_name = bias != nullptr ? bias->name : std::string{}](
                         const BasicTensor<T>& gy, Grads<T>& pg, const std::vector<bool>&) {
    auto g = ops::linear_backward(xin, w, has_bias, gy);
    if (w_train) GradTape<T>::accumulate(pg, w_name, std::move(g.weight));
    if (b_train && g.bias) GradTape<T>::accumulate(pg, b_name, std::move(*g.bias));
    return std::vector<BasicTensor<T>>{std::move(g.input)};
  };
  return record<T>(tape, std::move(out), {&x}, w_train || b_train, std::move(fn));
}

template <typename T>
Var<T> l2_normalize(GradTape<T>* tape, const Var<T>& x) {
  OpBackward<T> fn = [xin = x.value](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::l2_normalize_backward(xin, gy)};
  };
  return record<T>(tape, ops::l2_normalize(x.value), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> add(GradTape<T>* tape, const Var<T>& a, const Var<T>& b) {
  OpBackward<T> fn = [](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{gy, gy};
  };
  return record<T>(tape, ops::add(a.value, b.value), {&a, &b}, false, std::move(fn));
}

template <typename T>
Var<T> scale(GradTape<T>* tape, const Var<T>& x, double factor) {
  OpBackward<T> fn = [factor](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return std::vector<BasicTensor<T>>{ops::scale(gy, factor)};
  };
  return record<T>(tape, ops::scale(x.value, factor), {&x}, false, std::move(fn));
}

template <typename T>
Var<T> concat_channels(GradTape<T>* tape, const std::vector<Var<T>>& parts) {
  std::vector<BasicTensor<T>> values;
  std::vector<std::size_t> channels;
  std::vector<const Var<T>*> inputs;
  for (const auto& p : parts) {
    values.push_back(p.value);
    channels.push_back(p.value.dim(1));
    inputs.push_back(&p);
  }
  OpBackward<T> fn = [channels](const BasicTensor<T>& gy, Grads<T>&, const std::vector<bool>&) {
    return ops::split_channels(gy, channels);
  };
  return record<T>(tape, ops::concat_channels(values), inputs, false, std::move(fn));
}

#define PLANTID_INSTANTIATE_AG(T)                                                                              \
  template Var<T> input(GradTape<T>*, BasicTensor<T>);                                                         \
  template Var<T> conv2d(GradTape<T>*, const Var<T>&, const Param<T>&, const Param<T>*, const ops::ConvOptions&); \
  template Var<T> relu(GradTape<T>*, const Var<T>&);                                                           \
  template Var<T> relu6(GradTape<T>*, const Var<T>&);                                                          \
  template Var<T> batchnorm(GradTape<T>*, const Var<T>&, const BatchNormArgs<T>&, BasicTensor<T>*,             \
                            BasicTensor<T>*);                                                                  \
  template Var<T> maxpool2d(GradTape<T>*, const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> global_avgpool(GradTape<T>*, const Var<T>&);                                                 \
  template Var<T> reshape(GradTape<T>*, const Var<T>&, Shape);                                                 \
  template Var<T> linear(GradTape<T>*, const Var<T>&, const Param<T>&, const Param<T>*);                       \
  template Var<T> l2_normalize(GradTape<T>*, const Var<T>&);                                                   \
  template Var<T> add(GradTape<T>*, const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(GradTape<T>*, const Var<T>&, double);                                                  \
  template Var<T> concat_channels(GradTape<T>*, const std::vector<Var<T>>&);

PLANTID_INSTANTIATE_AG(float)
PLANTID_INSTANTIATE_AG(double)

#undef PLANTID_INSTANTIATE_AG

}  // namespace plantid::ag
