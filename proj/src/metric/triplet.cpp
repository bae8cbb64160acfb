#include "plantid/metric/triplet.hpp"

#include <limits>
#include <set>
#include <stdexcept>

namespace plantid::metric {

std::string to_string(MiningStrategy strategy) {
  switch (strategy) {
    case MiningStrategy::kRandom: return "random";
    case MiningStrategy::kSemiHard: return "semi-hard";
    case MiningStrategy::kHard: return "hard";
  }
  return "unknown";
}

MiningStrategy mining_strategy_from_string(const std::string& name) {
  if (name == "random") return MiningStrategy::kRandom;
  if (name == "semi-hard" || name == "semihard") return MiningStrategy::kSemiHard;
  if (name == "hard") return MiningStrategy::kHard;
  throw std::invalid_argument("unknown mining strategy '" + name + "' (expected random, semi-hard or hard)");
}

TripletLossResult triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                               double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw std::invalid_argument("triplet_loss: dimension mismatch");
  double d_ap = 0.0;
  double d_an = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d_ap += (a[i] - p[i]) * (a[i] - p[i]);
    d_an += (a[i] - n[i]) * (a[i] - n[i]);
  }
  TripletLossResult r;
  r.grad_anchor.assign(a.size(), 0.0);
  r.grad_positive.assign(a.size(), 0.0);
  r.grad_negative.assign(a.size(), 0.0);
  const double z = d_ap - d_an + margin;
  if (z <= 0.0) return r;
  r.loss = z;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.grad_anchor[i] = 2.0 * (n[i] - p[i]);
    r.grad_positive[i] = -2.0 * (a[i] - p[i]);
    r.grad_negative[i] = 2.0 * (a[i] - n[i]);
  }
  return r;
}

double squared_distance(const Tensor& rows, std::size_t i, std::size_t j) {
  const std::size_t d = rows.dim(1);
  const float* x = &rows.data()[i * d];
  const float* y = &rows.data()[j * d];
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = static_cast<double>(x[k]) - static_cast<double>(y[k]);
    s += diff * diff;
  }
  return s;
}

std::vector<Triplet> mine_triplets(const Tensor& embeddings, std::span<const std::int32_t> labels,
                                   MiningStrategy strategy, double margin, std::mt19937_64& rng) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ShapeError("mine_triplets: embeddings " + shape_to_string(embeddings.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (std::set<std::int32_t>(labels.begin(), labels.end()).size() < 2) {
    throw std::invalid_argument("mine_triplets: need at least two classes");
  }
  const std::size_t n = labels.size();
  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = squared_distance(embeddings, i, j);
  }

  std::vector<Triplet> out;
  std::vector<std::size_t> negatives;
  for (std::size_t a = 0; a < n; ++a) {
    negatives.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[j] != labels[a]) negatives.push_back(j);
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double d_ap = dist[a * n + p];
      std::size_t chosen = negatives.front();
      if (strategy == MiningStrategy::kRandom) {
        chosen = negatives[std::uniform_int_distribution<std::size_t>(0, negatives.size() - 1)(rng)];
      } else {
        std::size_t hardest = negatives.front();
        std::size_t band = n;
        for (std::size_t j : negatives) {
          const double d_an = dist[a * n + j];
          if (d_an < dist[a * n + hardest]) hardest = j;
          if (d_an > d_ap && d_an < d_ap + margin && (band == n || d_an < dist[a * n + band])) band = j;
        }
        chosen = (strategy == MiningStrategy::kSemiHard && band != n) ? band : hardest;
      }
      out.push_back(Triplet{a, p, chosen});
    }
  }
  return out;
}

}  // namespace plantid::metric
