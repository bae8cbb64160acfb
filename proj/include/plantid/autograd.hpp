#pragma once

#include <string>
#include <vector>

#include "plantid/grad_tape.hpp"
#include "plantid/ops.hpp"

// Differentiable wrappers around the layer primitives. With a null tape they
// are plain forward calls; otherwise they record a backward node whenever an
// input is tracked or a trainable parameter is involved. Frozen parameters
// never receive a gradient entry.
namespace plantid::ag {

template <typename T>
struct Param {
  const BasicTensor<T>* value = nullptr;
  std::string name;
  bool trainable = true;
};

/// Wraps a tensor as a tracked leaf (when a tape is present) so its gradient can be read back.
template <typename T>
Var<T> input(GradTape<T>* tape, BasicTensor<T> value);

template <typename T>
Var<T> conv2d(GradTape<T>* tape, const Var<T>& x, const Param<T>& weight, const Param<T>* bias,
              const ops::ConvOptions& options);

template <typename T>
Var<T> relu(GradTape<T>* tape, const Var<T>& x);
template <typename T>
Var<T> relu6(GradTape<T>* tape, const Var<T>& x);

template <typename T>
struct BatchNormArgs {
  Param<T> gamma;
  Param<T> beta;
  const BasicTensor<T>* running_mean = nullptr;
  const BasicTensor<T>* running_var = nullptr;
  double epsilon = ops::kBatchNormEpsilon;
  double momentum = ops::kBatchNormMomentum;
  bool train = false;
};

/// In train mode the updated running statistics are written to `new_mean` / `new_var` when given.
template <typename T>
Var<T> batchnorm(GradTape<T>* tape, const Var<T>& x, const BatchNormArgs<T>& args, BasicTensor<T>* new_mean,
                 BasicTensor<T>* new_var);

template <typename T>
Var<T> maxpool2d(GradTape<T>* tape, const Var<T>& x, std::size_t window, std::size_t stride);
template <typename T>
Var<T> global_avgpool(GradTape<T>* tape, const Var<T>& x);
template <typename T>
Var<T> reshape(GradTape<T>* tape, const Var<T>& x, Shape shape);
template <typename T>
Var<T> linear(GradTape<T>* tape, const Var<T>& x, const Param<T>& weight, const Param<T>* bias);
template <typename T>
Var<T> l2_normalize(GradTape<T>* tape, const Var<T>& x);
template <typename T>
Var<T> add(GradTape<T>* tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(GradTape<T>* tape, const Var<T>& x, double factor);
template <typename T>
Var<T> concat_channels(GradTape<T>* tape, const std::vector<Var<T>>& parts);

}  // namespace plantid::ag
