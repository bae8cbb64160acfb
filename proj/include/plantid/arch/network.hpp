#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "plantid/arch/network_spec.hpp"
#include "plantid/grad_tape.hpp"

namespace plantid::arch {

/// Named parameter tensors of one network, kept in spec traversal order.
/// Batchnorm running statistics are stored here too but are not learnable.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    BasicTensor<T> value;
    bool learnable = true;
    bool trainable = true;  // learnable and not frozen
  };

  void add(const std::string& name, BasicTensor<T> value, bool learnable) {
    if (entries_.count(name) != 0) throw std::invalid_argument("duplicate parameter '" + name + "'");
    order_.push_back(name);
    entries_.emplace(name, Entry{std::move(value), learnable, learnable});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }

  const BasicTensor<T>& at(const std::string& name) const { return entry(name).value; }
  BasicTensor<T>& at(const std::string& name) { return entry(name).value; }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  bool learnable(const std::string& name) const { return entry(name).learnable; }
  bool trainable(const std::string& name) const { return entry(name).trainable; }

  void set_trainable(const std::string& name, bool trainable) {
    Entry& e = entry(name);
    e.trainable = trainable && e.learnable;
  }

  /// Freezes every learnable parameter whose name does not start with one of `prefixes`.
  void freeze_except(const std::vector<std::string>& prefixes) {
    for (const auto& name : order_) {
      bool keep = false;
      for (const auto& p : prefixes) keep = keep || name.rfind(p, 0) == 0;
      set_trainable(name, keep);
    }
  }

  std::uint64_t learnable_count() const {
    std::uint64_t n = 0;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      if (e.learnable) n += e.value.size();
    }
    return n;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      out.add(name, e.value.template cast<U>(), e.learnable);
      out.set_trainable(name, e.trainable);
    }
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

using Parameters = ParameterSet<float>;

/// He-normal conv/linear weights (variance 2 / fan_in), zero biases, identity batchnorm.
Parameters init_parameters(const NetworkSpec& spec, std::uint64_t seed);

/// Throws if `params` lacks a tensor the spec needs or holds one of the wrong shape.
void check_parameters(const NetworkSpec& spec, const Parameters& params);

enum class Mode { kInference, kTrain };

template <typename T>
struct ForwardContext {
  Mode mode = Mode::kInference;
  GradTape<T>* tape = nullptr;
  /// Train mode only: updated batchnorm running statistics, keyed by parameter name.
  std::map<std::string, BasicTensor<T>>* running_updates = nullptr;
  /// Called after every Sequential, Residual and Concat block with its input and output.
  std::function<void(const std::string& block, const BasicTensor<T>& input, const BasicTensor<T>& output)> observer;
};

/// Raw head output [N, embedding_dim] for a batch [N,C,H,W].
template <typename T>
Var<T> forward(const NetworkSpec& spec, const ParameterSet<T>& params, const Var<T>& input, ForwardContext<T>& ctx);

/// Unit-norm embeddings.
template <typename T>
Var<T> forward_embed(const NetworkSpec& spec, const ParameterSet<T>& params, const Var<T>& input,
                     ForwardContext<T>& ctx);

/// Inference-mode embeddings of a batch, processed in chunks of `batch_size`.
Tensor embed(const NetworkSpec& spec, const Parameters& params, const Tensor& images, std::size_t batch_size = 32);

/// Zeroes every learnable tensor inside identity-shortcut residual bodies, turning those units into x -> post(x).
template <typename T>
void zero_residual_bodies(const NetworkSpec& spec, ParameterSet<T>& params);

}  // namespace plantid::arch
