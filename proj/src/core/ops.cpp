#include "plantid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace plantid::ops {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_to_string(shape));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
}

void require_vector(const Shape& shape, std::size_t length, const char* what) {
  if (shape.size() != 1 || shape[0] != length) {
    throw ShapeError(std::string(what) + " expects [" + std::to_string(length) + "], got " + shape_to_string(shape));
  }
}

struct ConvDims {
  std::size_t n, c, h, w;      // input
  std::size_t o, cg, kh, kw;   // weight
  std::size_t ho, wo;          // output
  std::size_t groups, og;
  std::size_t k() const { return cg * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

ConvDims conv_dims(const Shape& input, const Shape& weight, const ConvOptions& options) {
  const Shape out = conv2d_output_shape(input, weight, options);
  ConvDims d{};
  d.n = input[0];
  d.c = input[1];
  d.h = input[2];
  d.w = input[3];
  d.o = weight[0];
  d.cg = weight[1];
  d.kh = weight[2];
  d.kw = weight[3];
  d.ho = out[2];
  d.wo = out[3];
  d.groups = options.groups;
  d.og = d.o / d.groups;
  return d;
}

bool is_pointwise(const ConvDims& d, const ConvOptions& options) {
  return d.kh == 1 && d.kw == 1 && options.stride == 1 && options.pad_h == 0 && options.pad_w == 0;
}

// Unfold the channels of one group of one sample into col[k][p], k = (c, i, j).
template <typename T>
void im2col(const BasicTensor<T>& input, const ConvDims& d, const ConvOptions& options, std::size_t n,
            std::size_t group, std::vector<T>& col) {
  const std::size_t P = d.p();
  col.assign(d.k() * P, T{0});
  const auto s = static_cast<std::ptrdiff_t>(options.stride);
  const auto ph = static_cast<std::ptrdiff_t>(options.pad_h);
  const auto pw = static_cast<std::ptrdiff_t>(options.pad_w);
  const auto H = static_cast<std::ptrdiff_t>(d.h);
  const auto W = static_cast<std::ptrdiff_t>(d.w);
  for (std::size_t c = 0; c < d.cg; ++c) {
    const T* plane = &input.data()[((n * d.c) + group * d.cg + c) * d.h * d.w];
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        T* row = &col[((c * d.kh + i) * d.kw + j) * P];
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s - ph + static_cast<std::ptrdiff_t>(i);
          if (iy < 0 || iy >= H) continue;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * s - pw + static_cast<std::ptrdiff_t>(j);
            if (ix < 0 || ix >= W) continue;
            row[oy * d.wo + ox] = plane[iy * W + ix];
          }
        }
      }
    }
  }
}

template <typename T>
const T* group_columns(const BasicTensor<T>& input, const ConvDims& d, const ConvOptions& options, std::size_t n,
                       std::size_t group, std::vector<T>& scratch) {
  if (is_pointwise(d, options)) return &input.data()[((n * d.c) + group * d.cg) * d.h * d.w];
  im2col(input, d, options, n, group, scratch);
  return scratch.data();
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvOptions& options) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (options.stride == 0) throw ShapeError("conv2d stride must be >= 1");
  if (options.groups == 0) throw ShapeError("conv2d groups must be >= 1");
  const std::size_t c = input[1];
  const std::size_t o = weight[0];
  if (c % options.groups != 0 || o % options.groups != 0 || weight[1] * options.groups != c) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input) + ", weight " +
                     shape_to_string(weight) + ", groups " + std::to_string(options.groups));
  }
  const std::size_t kh = weight[2];
  const std::size_t kw = weight[3];
  const std::size_t ph = input[2] + 2 * options.pad_h;
  const std::size_t pw = input[3] + 2 * options.pad_w;
  if (ph < kh || pw < kw) {
    throw ShapeError("conv2d output would be empty: input " + shape_to_string(input) + ", kernel " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  return {input[0], o, (ph - kh) / options.stride + 1, (pw - kw) / options.stride + 1};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias,
                      const ConvOptions& options) {
  const ConvDims d = conv_dims(input.shape(), weight.shape(), options);
  if (bias != nullptr) require_vector(bias->shape(), d.o, "conv2d bias");
  BasicTensor<T> out(Shape{d.n, d.o, d.ho, d.wo});
  const std::size_t K = d.k();
  const std::size_t P = d.p();
  std::vector<T> scratch;
  std::vector<double> acc(P);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t g = 0; g < d.groups; ++g) {
      const T* col = group_columns(input, d, options, n, g, scratch);
      for (std::size_t og = 0; og < d.og; ++og) {
        const std::size_t o = g * d.og + og;
        const T* wrow = &weight.data()[o * K];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) {
          const double wv = static_cast<double>(wrow[k]);
          const T* crow = col + k * P;
          for (std::size_t p = 0; p < P; ++p) acc[p] += wv * static_cast<double>(crow[p]);
        }
        const double b = bias != nullptr ? static_cast<double>((*bias)[o]) : 0.0;
        T* dst = &out.data()[(n * d.o + o) * P];
        for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<T>(acc[p] + b);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>* bias, std::size_t stride, std::size_t pad) {
  require_rank(input.shape(), 4, "depthwise_conv2d input");
  require_rank(weight.shape(), 4, "depthwise_conv2d weight");
  if (weight.dim(1) != 1 || weight.dim(0) != input.dim(1)) {
    throw ShapeError("depthwise_conv2d needs one kernel per channel: input " + shape_to_string(input.shape()) +
                     ", weight " + shape_to_string(weight.shape()));
  }
  ConvOptions options;
  options.stride = stride;
  options.pad_h = pad;
  options.pad_w = pad;
  options.groups = input.dim(1);
  return conv2d(input, weight, bias, options);
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool has_bias,
                             const ConvOptions& options, const BasicTensor<T>& grad_output) {
  const ConvDims d = conv_dims(input.shape(), weight.shape(), options);
  require_same_shape(grad_output.shape(), Shape{d.n, d.o, d.ho, d.wo}, "conv2d_backward grad_output");
  const std::size_t K = d.k();
  const std::size_t P = d.p();
  std::vector<double> gw(d.o * K, 0.0);
  std::vector<double> gb(d.o, 0.0);
  BasicTensor<T> gx(input.shape());
  std::vector<T> scratch;
  std::vector<double> gcol(K * P);
  std::vector<double> gx_sample(d.c * d.h * d.w);
  const bool pointwise = is_pointwise(d, options);
  const auto s = static_cast<std::ptrdiff_t>(options.stride);
  const auto ph = static_cast<std::ptrdiff_t>(options.pad_h);
  const auto pw = static_cast<std::ptrdiff_t>(options.pad_w);
  const auto H = static_cast<std::ptrdiff_t>(d.h);
  const auto W = static_cast<std::ptrdiff_t>(d.w);

  for (std::size_t n = 0; n < d.n; ++n) {
    std::fill(gx_sample.begin(), gx_sample.end(), 0.0);
    for (std::size_t g = 0; g < d.groups; ++g) {
      const T* col = group_columns(input, d, options, n, g, scratch);
      std::fill(gcol.begin(), gcol.end(), 0.0);
      for (std::size_t og = 0; og < d.og; ++og) {
        const std::size_t o = g * d.og + og;
        const T* gy = &grad_output.data()[(n * d.o + o) * P];
        const T* wrow = &weight.data()[o * K];
        double bsum = 0.0;
        for (std::size_t p = 0; p < P; ++p) bsum += static_cast<double>(gy[p]);
        gb[o] += bsum;
        for (std::size_t k = 0; k < K; ++k) {
          const T* crow = col + k * P;
          double dot = 0.0;
          for (std::size_t p = 0; p < P; ++p) dot += static_cast<double>(gy[p]) * static_cast<double>(crow[p]);
          gw[o * K + k] += dot;
          const double wv = static_cast<double>(wrow[k]);
          double* grow = &gcol[k * P];
          for (std::size_t p = 0; p < P; ++p) grow[p] += wv * static_cast<double>(gy[p]);
        }
      }
      // col2im into the sample's input gradient
      if (pointwise) {
        double* dst = &gx_sample[g * d.cg * d.h * d.w];
        for (std::size_t i = 0; i < K * P; ++i) dst[i] += gcol[i];
        continue;
      }
      for (std::size_t c = 0; c < d.cg; ++c) {
        double* plane = &gx_sample[(g * d.cg + c) * d.h * d.w];
        for (std::size_t i = 0; i < d.kh; ++i) {
          for (std::size_t j = 0; j < d.kw; ++j) {
            const double* grow = &gcol[((c * d.kh + i) * d.kw + j) * P];
            for (std::size_t oy = 0; oy < d.ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s - ph + static_cast<std::ptrdiff_t>(i);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t ox = 0; ox < d.wo; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * s - pw + static_cast<std::ptrdiff_t>(j);
                if (ix < 0 || ix >= W) continue;
                plane[iy * W + ix] += grow[oy * d.wo + ox];
              }
            }
          }
        }
      }
    }
    T* dst = &gx.data()[n * d.c * d.h * d.w];
    for (std::size_t i = 0; i < gx_sample.size(); ++i) dst[i] = static_cast<T>(gx_sample[i]);
  }

  ConvGrads<T> grads{std::move(gx), BasicTensor<T>(weight.shape()), std::nullopt};
  for (std::size_t i = 0; i < gw.size(); ++i) grads.weight[i] = static_cast<T>(gw[i]);
  if (has_bias) {
    BasicTensor<T> b(Shape{d.o});
    for (std::size_t o = 0; o < d.o; ++o) b[o] = static_cast<T>(gb[o]);
    grads.bias = std::move(b);
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = std::min(std::max(v, T{0}), T{6});
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_shape(input.shape(), grad_output.shape(), "relu_backward");
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? grad_output[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu6_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_shape(input.shape(), grad_output.shape(), "relu6_backward");
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = (input[i] > T{0} && input[i] < T{6}) ? grad_output[i] : T{0};
  }
  return out;
}

namespace {

struct ChannelLayout {
  std::size_t n, c, spatial;
};

ChannelLayout channel_layout(const Shape& shape, const char* what) {
  if (shape.size() == 4) return {shape[0], shape[1], shape[2] * shape[3]};
  if (shape.size() == 2) return {shape[0], shape[1], 1};
  throw ShapeError(std::string(what) + " expects [N,C,H,W] or [N,C], got " + shape_to_string(shape));
}

}  // namespace

template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                        const BasicTensor<T>& beta, double epsilon) {
  const auto L = channel_layout(input.shape(), "batchnorm");
  require_vector(gamma.shape(), L.c, "batchnorm gamma");
  require_vector(beta.shape(), L.c, "batchnorm beta");
  const std::size_t M = L.n * L.spatial;
  if (M < 2) {
    throw std::invalid_argument("batchnorm in train mode needs at least 2 values per channel, got " +
                                std::to_string(M) + " (variance undefined)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("batchnorm epsilon must be positive");
  BatchNormTrainResult<T> r{BasicTensor<T>(input.shape()), std::vector<double>(L.c), std::vector<double>(L.c),
                            std::vector<double>(L.c)};
  for (std::size_t c = 0; c < L.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* src = &input.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) sum += static_cast<double>(src[i]);
    }
    const double mean = sum / static_cast<double>(M);
    double sq = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* src = &input.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        const double dv = static_cast<double>(src[i]) - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / static_cast<double>(M);
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    r.mean[c] = mean;
    r.variance[c] = var;
    r.inv_std[c] = inv_std;
    const double g = static_cast<double>(gamma[c]);
    const double b = static_cast<double>(beta[c]);
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* src = &input.data()[(n * L.c + c) * L.spatial];
      T* dst = &r.output.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * inv_std * g + b);
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                               double epsilon) {
  const auto L = channel_layout(input.shape(), "batchnorm");
  require_vector(gamma.shape(), L.c, "batchnorm gamma");
  require_vector(beta.shape(), L.c, "batchnorm beta");
  require_vector(running_mean.shape(), L.c, "batchnorm running_mean");
  require_vector(running_var.shape(), L.c, "batchnorm running_var");
  BasicTensor<T> out(input.shape());
  for (std::size_t c = 0; c < L.c; ++c) {
    const double mean = static_cast<double>(running_mean[c]);
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
    const double g = static_cast<double>(gamma[c]);
    const double b = static_cast<double>(beta[c]);
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* src = &input.data()[(n * L.c + c) * L.spatial];
      T* dst = &out.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * inv_std * g + b);
      }
    }
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                           const BatchNormTrainResult<T>& forward,
                                           const BasicTensor<T>& grad_output) {
  const auto L = channel_layout(input.shape(), "batchnorm_backward");
  require_same_shape(input.shape(), grad_output.shape(), "batchnorm_backward");
  const double M = static_cast<double>(L.n * L.spatial);
  BatchNormGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(Shape{L.c}), BasicTensor<T>(Shape{L.c})};
  for (std::size_t c = 0; c < L.c; ++c) {
    const double mean = forward.mean[c];
    const double inv_std = forward.inv_std[c];
    double sum_gy = 0.0;
    double sum_gy_xhat = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* x = &input.data()[(n * L.c + c) * L.spatial];
      const T* gy = &grad_output.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mean) * inv_std;
        sum_gy += static_cast<double>(gy[i]);
        sum_gy_xhat += static_cast<double>(gy[i]) * xhat;
      }
    }
    g.gamma[c] = static_cast<T>(sum_gy_xhat);
    g.beta[c] = static_cast<T>(sum_gy);
    const double k = static_cast<double>(gamma[c]) * inv_std / M;
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* x = &input.data()[(n * L.c + c) * L.spatial];
      const T* gy = &grad_output.data()[(n * L.c + c) * L.spatial];
      T* gx = &g.input.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mean) * inv_std;
        gx[i] = static_cast<T>(k * (M * static_cast<double>(gy[i]) - sum_gy - xhat * sum_gy_xhat));
      }
    }
  }
  return g;
}

template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                           const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                                           double epsilon, const BasicTensor<T>& grad_output) {
  const auto L = channel_layout(input.shape(), "batchnorm_backward");
  require_same_shape(input.shape(), grad_output.shape(), "batchnorm_backward");
  BatchNormGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(Shape{L.c}), BasicTensor<T>(Shape{L.c})};
  for (std::size_t c = 0; c < L.c; ++c) {
    const double mean = static_cast<double>(running_mean[c]);
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
    const double scale_c = static_cast<double>(gamma[c]) * inv_std;
    double sum_gy = 0.0;
    double sum_gy_xhat = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const T* x = &input.data()[(n * L.c + c) * L.spatial];
      const T* gy = &grad_output.data()[(n * L.c + c) * L.spatial];
      T* gx = &g.input.data()[(n * L.c + c) * L.spatial];
      for (std::size_t i = 0; i < L.spatial; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mean) * inv_std;
        sum_gy += static_cast<double>(gy[i]);
        sum_gy_xhat += static_cast<double>(gy[i]) * xhat;
        gx[i] = static_cast<T>(static_cast<double>(gy[i]) * scale_c);
      }
    }
    g.gamma[c] = static_cast<T>(sum_gy_xhat);
    g.beta[c] = static_cast<T>(sum_gy);
  }
  return g;
}

template <typename T>
void update_running_stats(BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                          const BatchNormTrainResult<T>& forward, std::size_t reduction_size, double momentum) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw std::invalid_argument("batchnorm momentum must lie in (0,1)");
  const double unbias = static_cast<double>(reduction_size) / static_cast<double>(reduction_size - 1);
  for (std::size_t c = 0; c < forward.mean.size(); ++c) {
    running_mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[c]) + momentum * forward.mean[c]);
    running_var[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[c]) +
                                    momentum * forward.variance[c] * unbias);
  }
}

template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride) {
  require_rank(input.shape(), 4, "maxpool2d input");
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d window and stride must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H < window || W < window || (H - window) % stride != 0 || (W - window) % stride != 0) {
    throw ShapeError("maxpool2d window " + std::to_string(window) + "/stride " + std::to_string(stride) +
                     " does not tile input " + shape_to_string(input.shape()));
  }
  const std::size_t Ho = (H - window) / stride + 1;
  const std::size_t Wo = (W - window) / stride + 1;
  MaxPoolResult<T> r{BasicTensor<T>(Shape{N, C, Ho, Wo}), std::vector<std::size_t>(N * C * Ho * Wo)};
  std::size_t out_index = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = base + (oy * stride) * W + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * W + ox * stride + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[out_index] = input[best];
        r.argmax[out_index] = best;
        ++out_index;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_output) {
  if (argmax.size() != grad_output.size()) throw ShapeError("maxpool2d_backward: argmax/grad size mismatch");
  std::vector<double> acc(shape_numel(input_shape), 0.0);
  for (std::size_t i = 0; i < argmax.size(); ++i) acc[argmax[i]] += static_cast<double>(grad_output[i]);
  BasicTensor<T> gx(input_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) gx[i] = static_cast<T>(acc[i]);
  return gx;
}

template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& input) {
  require_rank(input.shape(), 4, "global_avgpool input");
  const std::size_t N = input.dim(0), C = input.dim(1), S = input.dim(2) * input.dim(3);
  BasicTensor<T> out(Shape{N, C, 1, 1});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double sum = 0.0;
    for (std::size_t i = 0; i < S; ++i) sum += static_cast<double>(input[nc * S + i]);
    out[nc] = static_cast<T>(sum / static_cast<double>(S));
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avgpool_backward(const Shape& input_shape, const BasicTensor<T>& grad_output) {
  require_rank(input_shape, 4, "global_avgpool_backward");
  const std::size_t NC = input_shape[0] * input_shape[1];
  const std::size_t S = input_shape[2] * input_shape[3];
  if (grad_output.size() != NC) throw ShapeError("global_avgpool_backward: gradient size mismatch");
  BasicTensor<T> gx(input_shape);
  for (std::size_t nc = 0; nc < NC; ++nc) {
    const T v = static_cast<T>(static_cast<double>(grad_output[nc]) / static_cast<double>(S));
    for (std::size_t i = 0; i < S; ++i) gx[nc * S + i] = v;
  }
  return gx;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
  if (weight.dim(0) != D) {
    throw ShapeError("linear inner dimension mismatch: input " + shape_to_string(input.shape()) + ", weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias != nullptr) require_vector(bias->shape(), M, "linear bias");
  BasicTensor<T> out(Shape{N, M});
  std::vector<double> acc(M);
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const double xv = static_cast<double>(input[n * D + d]);
      const T* wrow = &weight.data()[d * M];
      for (std::size_t m = 0; m < M; ++m) acc[m] += xv * static_cast<double>(wrow[m]);
    }
    for (std::size_t m = 0; m < M; ++m) {
      out[n * M + m] = static_cast<T>(acc[m] + (bias != nullptr ? static_cast<double>((*bias)[m]) : 0.0));
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool has_bias,
                               const BasicTensor<T>& grad_output) {
  const std::size_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
  require_same_shape(grad_output.shape(), Shape{N, M}, "linear_backward grad_output");
  std::vector<double> gw(D * M, 0.0);
  std::vector<double> gb(M, 0.0);
  BasicTensor<T> gx(input.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* gy = &grad_output.data()[n * M];
    for (std::size_t m = 0; m < M; ++m) gb[m] += static_cast<double>(gy[m]);
    for (std::size_t d = 0; d < D; ++d) {
      const double xv = static_cast<double>(input[n * D + d]);
      const T* wrow = &weight.data()[d * M];
      double* gwrow = &gw[d * M];
      double dot = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        gwrow[m] += xv * static_cast<double>(gy[m]);
        dot += static_cast<double>(wrow[m]) * static_cast<double>(gy[m]);
      }
      gx[n * D + d] = static_cast<T>(dot);
    }
  }
  LinearGrads<T> g{std::move(gx), BasicTensor<T>(weight.shape()), std::nullopt};
  for (std::size_t i = 0; i < gw.size(); ++i) g.weight[i] = static_cast<T>(gw[i]);
  if (has_bias) {
    BasicTensor<T> b(Shape{M});
    for (std::size_t m = 0; m < M; ++m) b[m] = static_cast<T>(gb[m]);
    g.bias = std::move(b);
  }
  return g;
}

namespace {

template <typename T>
double row_norm(const T* row, std::size_t d) {
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) sq += static_cast<double>(row[i]) * static_cast<double>(row[i]);
  return std::sqrt(sq);
}

}  // namespace

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& input) {
  require_rank(input.shape(), 2, "l2_normalize input");
  const std::size_t N = input.dim(0), D = input.dim(1);
  BasicTensor<T> out(input.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double norm = row_norm(&input.data()[n * D], D);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw std::domain_error("degenerate embedding: row " + std::to_string(n) + " has norm " + std::to_string(norm));
    }
    for (std::size_t i = 0; i < D; ++i) out[n * D + i] = static_cast<T>(static_cast<double>(input[n * D + i]) / norm);
  }
  return out;
}

template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_shape(input.shape(), grad_output.shape(), "l2_normalize_backward");
  const std::size_t N = input.dim(0), D = input.dim(1);
  BasicTensor<T> gx(input.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* x = &input.data()[n * D];
    const T* gy = &grad_output.data()[n * D];
    const double norm = row_norm(x, D);
    double dot = 0.0;
    for (std::size_t i = 0; i < D; ++i) dot += static_cast<double>(x[i]) / norm * static_cast<double>(gy[i]);
    for (std::size_t i = 0; i < D; ++i) {
      const double y = static_cast<double>(x[i]) / norm;
      gx[n * D + i] = static_cast<T>((static_cast<double>(gy[i]) - y * dot) / norm);
    }
  }
  return gx;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  BasicTensor<T> out = a;
  for (auto& v : out.data()) v = static_cast<T>(static_cast<double>(v) * factor);
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  require_rank(first, 4, "concat_channels");
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 4, "concat_channels");
    if (p.dim(0) != first[0] || p.dim(2) != first[2] || p.dim(3) != first[3]) {
      throw ShapeError("concat_channels extent mismatch: " + shape_to_string(first) + " vs " + shape_to_string(p.shape()));
    }
    total_c += p.dim(1);
  }
  const std::size_t N = first[0], S = first[2] * first[3];
  BasicTensor<T> out(Shape{N, total_c, first[2], first[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t block = p.dim(1) * S;
      std::copy_n(&p.data()[n * block], block, &out.data()[(n * total_c) * S + offset * S]);
      offset += p.dim(1);
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, const std::vector<std::size_t>& channels) {
  require_rank(grad.shape(), 4, "split_channels");
  const std::size_t N = grad.dim(0), C = grad.dim(1), S = grad.dim(2) * grad.dim(3);
  std::size_t total = 0;
  for (auto c : channels) total += c;
  if (total != C) throw ShapeError("split_channels: channel counts do not sum to " + std::to_string(C));
  std::vector<BasicTensor<T>> out;
  std::size_t offset = 0;
  for (auto c : channels) {
    BasicTensor<T> part(Shape{N, c, grad.dim(2), grad.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(&grad.data()[(n * C + offset) * S], c * S, &part.data()[n * c * S]);
    }
    out.push_back(std::move(part));
    offset += c;
  }
  return out;
}

#define PLANTID_INSTANTIATE_OPS(T)                                                                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,            \
                                 const ConvOptions&);                                                            \
  template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,  \
                                           std::size_t, std::size_t);                                            \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, bool, const ConvOptions&,  \
                                        const BasicTensor<T>&);                                                  \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> relu6(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> relu6_backward(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                                   const BasicTensor<T>&, double);                               \
  template BasicTensor<T> batchnorm_infer(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                          const BasicTensor<T>&, const BasicTensor<T>&, double);                 \
  template BatchNormGrads<T> batchnorm_train_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                      const BatchNormTrainResult<T>&, const BasicTensor<T>&);    \
  template BatchNormGrads<T> batchnorm_infer_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                      const BasicTensor<T>&, const BasicTensor<T>&, double,      \
                                                      const BasicTensor<T>&);                                    \
  template void update_running_stats(BasicTensor<T>&, BasicTensor<T>&, const BatchNormTrainResult<T>&,           \
                                     std::size_t, double);                                                       \
  template MaxPoolResult<T> maxpool2d(const BasicTensor<T>&, std::size_t, std::size_t);                          \
  template BasicTensor<T> maxpool2d_backward(const Shape&, const std::vector<std::size_t>&, const BasicTensor<T>&); \
  template BasicTensor<T> global_avgpool(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> global_avgpool_backward(const Shape&, const BasicTensor<T>&);                          \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*);           \
  template LinearGrads<T> linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, bool,                    \
                                          const BasicTensor<T>&);                                                \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> l2_normalize_backward(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                                  \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                                   \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, const std::vector<std::size_t>&);

PLANTID_INSTANTIATE_OPS(float)
PLANTID_INSTANTIATE_OPS(double)

#undef PLANTID_INSTANTIATE_OPS

}  // namespace plantid::ops
