#pragma once

// Independent reference implementations used only by the tests. Nothing here
// calls into the library kernels it is meant to check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "plantid/tensor.hpp"

namespace oracle {

using plantid::BasicTensor;
using plantid::Shape;

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("plantid_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

/// Values drawn away from zero, so relu kinks stay out of reach of a finite-difference step.
template <typename T>
BasicTensor<T> random_away_from_zero(const Shape& shape, std::mt19937_64& rng, double min_abs = 0.05) {
  std::uniform_real_distribution<double> mag(min_abs, 1.5);
  std::bernoulli_distribution sign(0.5);
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(sign(rng) ? mag(rng) : -mag(rng));
  return t;
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Direct grouped convolution: out[n,o,y,x] = b[o] + sum_{c,i,j} in[n, g*Cg + c, y*s - ph + i, x*s - pw + j] * w[o,c,i,j].
template <typename T>
BasicTensor<T> conv_loops(const BasicTensor<T>& in, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                          std::size_t stride, std::size_t pad_h, std::size_t pad_w, std::size_t groups) {
  const std::size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t O = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t Ho = (H + 2 * pad_h - KH) / stride + 1;
  const std::size_t Wo = (W + 2 * pad_w - KW) / stride + 1;
  const std::size_t Og = O / groups;
  (void)C;
  BasicTensor<T> out(Shape{N, O, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
          double acc = bias != nullptr ? static_cast<double>((*bias)[o]) : 0.0;
          const std::size_t g = o / Og;
          for (std::size_t c = 0; c < Cg; ++c)
            for (std::size_t i = 0; i < KH; ++i)
              for (std::size_t j = 0; j < KW; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad_h);
                const long ix = static_cast<long>(x * stride + j) - static_cast<long>(pad_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += static_cast<double>(in.at(n, g * Cg + c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))) *
                       static_cast<double>(w.at(o, c, i, j));
              }
          out.at(n, o, y, x) = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
BasicTensor<T> maxpool_loops(const BasicTensor<T>& in, std::size_t window, std::size_t stride) {
  const std::size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  BasicTensor<T> out(Shape{N, C, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
          T m = -std::numeric_limits<T>::infinity();
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) m = std::max(m, in.at(n, c, y * stride + i, x * stride + j));
          out.at(n, c, y, x) = m;
        }
  return out;
}

template <typename T>
BasicTensor<T> matmul_loops(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>* bias) {
  const std::size_t N = a.dim(0), D = a.dim(1), M = b.dim(1);
  BasicTensor<T> out(Shape{N, M});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m) {
      double acc = bias != nullptr ? static_cast<double>((*bias)[m]) : 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += static_cast<double>(a[n * D + d]) * static_cast<double>(b[d * M + m]);
      out[n * M + m] = static_cast<T>(acc);
    }
  return out;
}

/// Central difference of a scalar function of one tensor coordinate.
template <typename T>
double central_difference(BasicTensor<T>& t, std::size_t index, double step, const std::function<double()>& f) {
  const T saved = t[index];
  t[index] = static_cast<T>(static_cast<double>(saved) + step);
  const double up = f();
  t[index] = static_cast<T>(static_cast<double>(saved) - step);
  const double down = f();
  t[index] = saved;
  return (up - down) / (2.0 * step);
}

/// Distinct coordinates of a tensor of `size` elements (all of them when fewer than `count`).
inline std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, size));
  return idx;
}

// ---- SVM dual ----------------------------------------------------------------

struct QpSolution {
  std::vector<double> alpha;
  double objective = 0.0;
  double b = 0.0;
};

inline double dual_value(const std::vector<double>& Q, const std::vector<double>& a) {
  const std::size_t n = a.size();
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lin += a[i];
    for (std::size_t j = 0; j < n; ++j) quad += a[i] * a[j] * Q[i * n + j];
  }
  return lin - 0.5 * quad;
}

/// Euclidean projection onto {0 <= a <= C, y.a = 0}: a_i = clip(v_i - lambda y_i), lambda by bisection.
inline std::vector<double> project(const std::vector<double>& v, const std::vector<int>& y, double C) {
  const std::size_t n = v.size();
  auto residual = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += y[i] * std::clamp(v[i] - lambda * y[i], 0.0, C);
    return s;
  };
  double lo = -1.0, hi = 1.0;
  while (residual(lo) < 0.0) lo *= 2.0;
  while (residual(hi) > 0.0) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (residual(mid) > 0.0 ? lo : hi) = mid;
  }
  const double lambda = 0.5 * (lo + hi);
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = std::clamp(v[i] - lambda * y[i], 0.0, C);
  return a;
}

/// Bias from KKT: mean of y_i - sum_j a_j y_j K_ij over free points, else the midpoint of the feasible interval.
inline double bias_from_alpha(const std::vector<double>& K, const std::vector<int>& y, const std::vector<double>& a,
                              double C) {
  const std::size_t n = a.size();
  const double eps = 1e-8 * C;
  double sum = 0.0;
  std::size_t free = 0;
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double f = 0.0;
    for (std::size_t j = 0; j < n; ++j) f += a[j] * y[j] * K[i * n + j];
    const double r = y[i] - f;
    if (a[i] > eps && a[i] < C - eps) {
      sum += r;
      ++free;
    } else if ((a[i] <= eps && y[i] > 0) || (a[i] >= C - eps && y[i] < 0)) {
      lo = std::max(lo, r);  // need y_i (f + b) >= 1 or <= 1 accordingly
    } else {
      hi = std::min(hi, r);
    }
  }
  if (free > 0) return sum / static_cast<double>(free);
  if (std::isinf(lo)) return hi;
  if (std::isinf(hi)) return lo;
  return 0.5 * (lo + hi);
}

/// Maximises the SVM dual by FISTA with adaptive restart, then polishes the free block with an exact KKT solve.
inline QpSolution solve_qp(const std::vector<double>& K, const std::vector<int>& y, double C,
                           std::size_t iterations = 200000) {
  const std::size_t n = y.size();
  std::vector<double> Q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) Q[i * n + j] = y[i] * y[j] * K[i * n + j];
  Eigen::MatrixXd Qm(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) Qm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = Q[i * n + j];
  const double L = std::max(1e-12, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Qm).eigenvalues().maxCoeff());

  auto grad = [&](const std::vector<double>& a) {  // gradient of the minimised form 1/2 a'Qa - 1'a
    std::vector<double> g(n, -1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i] += Q[i * n + j] * a[j];
    return g;
  };
  std::vector<double> x(n, 0.0), z = x, prev = x;
  double t = 1.0;
  double best = dual_value(Q, x);
  std::vector<double> best_x = x;
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto g = grad(z);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = z[i] - g[i] / L;
    prev = x;
    x = project(v, y, C);
    const double val = dual_value(Q, x);
    if (val > best) {
      best = val;
      best_x = x;
    }
    // Restart momentum when the step opposes the gradient direction.
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += g[i] * (x[i] - prev[i]);
    if (dot > 0.0) {
      t = 1.0;
      z = x;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + ((t - 1.0) / t_next) * (x[i] - prev[i]);
    t = t_next;
    double step = 0.0;
    for (std::size_t i = 0; i < n; ++i) step = std::max(step, std::abs(x[i] - prev[i]));
    if (step < 1e-15 * std::max(1.0, C) && it > 1000) break;
  }

  // Exact solve on the free block with bounded variables held fixed.
  QpSolution sol{best_x, best, 0.0};
  const double eps = 1e-7 * C;
  std::vector<std::size_t> F;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_x[i] > eps && best_x[i] < C - eps) F.push_back(i);
  }
  if (!F.empty()) {
    const auto m = static_cast<Eigen::Index>(F.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + 1, m + 1);
    Eigen::VectorXd rhs(m + 1);
    double fixed_y = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      const std::size_t i = F[static_cast<std::size_t>(r)];
      double rr = 1.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (std::find(F.begin(), F.end(), j) == F.end()) rr -= Q[i * n + j] * (best_x[j] > eps ? C : 0.0);
      }
      for (Eigen::Index c = 0; c < m; ++c) A(r, c) = Q[i * n + F[static_cast<std::size_t>(c)]];
      A(r, m) = y[i];
      A(m, r) = y[i];
      rhs(r) = rr;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (std::find(F.begin(), F.end(), j) == F.end() && best_x[j] > eps) fixed_y += y[j] * C;
    }
    rhs(m) = -fixed_y;
    const Eigen::VectorXd s = A.completeOrthogonalDecomposition().solve(rhs);
    std::vector<double> polished(n);
    bool feasible = true;
    for (std::size_t j = 0; j < n; ++j) polished[j] = best_x[j] > eps ? C : 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      const double v = s(r);
      if (v < -1e-12 || v > C + 1e-12) feasible = false;
      polished[F[static_cast<std::size_t>(r)]] = std::clamp(v, 0.0, C);
    }
    const double pv = dual_value(Q, polished);
    if (feasible && pv >= best) {
      sol.alpha = polished;
      sol.objective = pv;
    }
  } else {
    // Only bounded variables: clean them to the exact bounds.
    std::vector<double> snapped(n);
    for (std::size_t j = 0; j < n; ++j) snapped[j] = best_x[j] > eps ? C : 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += y[j] * snapped[j];
    if (std::abs(s) < 1e-12 && dual_value(Q, snapped) >= best) {
      sol.alpha = snapped;
      sol.objective = dual_value(Q, snapped);
    }
  }
  sol.b = bias_from_alpha(K, y, sol.alpha, C);
  return sol;
}

inline double decision(const std::vector<std::vector<double>>& X, const std::vector<int>& y, const QpSolution& s,
                       const std::function<double(const std::vector<double>&, const std::vector<double>&)>& k,
                       const std::vector<double>& z) {
  double f = s.b;
  for (std::size_t i = 0; i < X.size(); ++i) f += s.alpha[i] * y[i] * k(X[i], z);
  return f;
}

}  // namespace oracle
