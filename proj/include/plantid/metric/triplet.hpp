#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plantid/tensor.hpp"

namespace plantid::metric {

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class MiningStrategy { kRandom, kSemiHard, kHard };

std::string to_string(MiningStrategy strategy);
MiningStrategy mining_strategy_from_string(const std::string& name);

struct TripletLossResult {
  double loss = 0.0;
  std::vector<double> grad_anchor;
  std::vector<double> grad_positive;
  std::vector<double> grad_negative;
};

/// max(|a-p|^2 - |a-n|^2 + margin, 0) with its subgradient (zero when inactive).
TripletLossResult triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                               std::span<const double> negative, double margin);

/// Squared Euclidean distance between rows i and j of [N,D].
double squared_distance(const Tensor& rows, std::size_t i, std::size_t j);

/// One triplet per ordered (anchor, positive) pair of equal labels; the negative is picked per `strategy`.
/// semi-hard: smallest d(a,n) with d(a,p) < d(a,n) < d(a,p) + margin, else the hardest negative.
/// hard: smallest d(a,n). Ties go to the lowest index. Rejects inputs with fewer than two classes.
std::vector<Triplet> mine_triplets(const Tensor& embeddings, std::span<const std::int32_t> labels,
                                   MiningStrategy strategy, double margin, std::mt19937_64& rng);

}  // namespace plantid::metric
