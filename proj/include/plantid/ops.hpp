#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "plantid/tensor.hpp"

// Layer primitives with exact backward passes. Every kernel accumulates in
// double with a fixed loop order, so results are bit-reproducible.
namespace plantid::ops {

/// Stride, per-axis zero padding and channel groups of a convolution.
/// groups == input channels gives a depthwise convolution.
struct ConvOptions {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t groups = 1;
};

/// Output shape of conv2d for input [N,C,H,W] and weight [O,C/groups,kh,kw]. Throws ShapeError.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvOptions& options);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias,
                      const ConvOptions& options);

/// One kernel per channel: weight [C,1,kh,kw], groups forced to C.
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>* bias, std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool has_bias,
                             const ConvOptions& options, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);
template <typename T>
BasicTensor<T> relu6_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormTrainResult {
  BasicTensor<T> output;
  std::vector<double> mean;      // batch mean per channel
  std::vector<double> variance;  // biased batch variance per channel
  std::vector<double> inv_std;
};

/// Batch statistics over N*H*W per channel. Rejects N*H*W < 2.
template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                        const BasicTensor<T>& beta, double epsilon);

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                               double epsilon);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                           const BatchNormTrainResult<T>& forward,
                                           const BasicTensor<T>& grad_output);

template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                           const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                                           double epsilon, const BasicTensor<T>& grad_output);

/// Exponential moving average of running statistics; the variance update uses the unbiased estimate.
template <typename T>
void update_running_stats(BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                          const BatchNormTrainResult<T>& forward, std::size_t reduction_size, double momentum);

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Windowed max. The window must tile the extent exactly; odd leftovers are rejected rather than padded.
template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& input, std::size_t window = 2, std::size_t stride = 2);
template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> global_avgpool_backward(const Shape& input_shape, const BasicTensor<T>& grad_output);

/// input [N,D] x weight [D,M] + bias [M].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias);

template <typename T>
struct LinearGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool has_bias,
                               const BasicTensor<T>& grad_output);

/// Row-wise unit normalisation of [N,D]. A zero row is a degenerate embedding and is rejected.
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

/// Concatenate [N,Ci,H,W] tensors along channels.
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, const std::vector<std::size_t>& channels);

}  // namespace plantid::ops
