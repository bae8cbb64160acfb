#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plantid/tensor.hpp"

namespace plantid {

struct ValueId {
  std::size_t index = 0;
  friend bool operator==(ValueId, ValueId) = default;
};

/// A tensor flowing through a recorded computation. `id` is set when the value lives on a tape.
template <typename T>
struct Var {
  BasicTensor<T> value;
  std::optional<ValueId> id;
};

/// Ordered record of executed operations. Each node caches what its backward
/// pass needs; replaying the nodes in reverse yields exact gradients.
template <typename T>
class GradTape {
 public:
  using TensorT = BasicTensor<T>;
  using ParamGrads = std::map<std::string, TensorT>;
  /// Receives the gradient of the node's output; returns one gradient per node input
  /// (in input order) and adds parameter gradients into `param_grads`.
  using BackwardFn = std::function<std::vector<TensorT>(const TensorT& grad_output, ParamGrads& param_grads)>;

  struct Gradients {
    ParamGrads params;
    std::vector<std::optional<TensorT>> values;

    const TensorT* value(ValueId id) const {
      if (id.index >= values.size() || !values[id.index]) return nullptr;
      return &*values[id.index];
    }
  };

  ValueId leaf(const Shape& shape) {
    shapes_.push_back(shape);
    return ValueId{shapes_.size() - 1};
  }

  ValueId record(std::vector<ValueId> inputs, const Shape& output_shape, BackwardFn fn) {
    for (const auto& in : inputs) {
      if (in.index >= shapes_.size()) throw std::logic_error("tape input refers to an unknown value");
    }
    const ValueId out = leaf(output_shape);
    nodes_.push_back(Node{std::move(inputs), out, std::move(fn)});
    return out;
  }

  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    shapes_.clear();
  }

  /// Reverse sweep from `output`. Does not modify the tape, so repeated calls agree exactly.
  Gradients backward(ValueId output, const TensorT& output_grad) const {
    if (nodes_.empty()) throw std::invalid_argument("backward called on an empty tape (run a forward pass first)");
    if (output.index >= shapes_.size()) throw std::invalid_argument("backward: output is not on this tape");
    if (output_grad.shape() != shapes_[output.index]) {
      throw ShapeError("backward: gradient shape " + shape_to_string(output_grad.shape()) + " does not match output " +
                       shape_to_string(shapes_[output.index]));
    }
    Gradients g;
    g.values.resize(shapes_.size());
    g.values[output.index] = output_grad;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& slot = g.values[it->output.index];
      if (!slot) continue;
      std::vector<TensorT> input_grads = it->backward(*slot, g.params);
      if (input_grads.size() != it->inputs.size()) throw std::logic_error("backward returned wrong gradient count");
      for (std::size_t i = 0; i < input_grads.size(); ++i) {
        accumulate(g.values[it->inputs[i].index], std::move(input_grads[i]));
      }
    }
    return g;
  }

  static void accumulate(ParamGrads& grads, const std::string& name, TensorT grad) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, std::move(grad));
      return;
    }
    auto dst = it->second.data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

 private:
  struct Node {
    std::vector<ValueId> inputs;
    ValueId output;
    BackwardFn backward;
  };

  static void accumulate(std::optional<TensorT>& slot, TensorT grad) {
    if (!slot) {
      slot = std::move(grad);
      return;
    }
    if (slot->shape() != grad.shape()) throw std::logic_error("gradient shape mismatch during accumulation");
    auto dst = slot->data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  std::vector<Shape> shapes_;
  std::vector<Node> nodes_;
};

}  // namespace plantid
