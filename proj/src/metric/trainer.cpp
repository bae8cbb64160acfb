#include "plantid/metric/trainer.hpp"

#include "plantid/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/core.h>

namespace plantid::metric {

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("train: margin must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be finite and non-negative");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("train: lr_decay must lie in (0, 1]");
  if (classes_per_batch < 2) throw std::invalid_argument("train: need at least 2 classes per batch");
  if (images_per_class < 2) throw std::invalid_argument("train: need at least 2 images per class");
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"margin", c.margin},
                     {"learning_rate", c.learning_rate},
                     {"lr_decay", c.lr_decay},
                     {"classes_per_batch", c.classes_per_batch},
                     {"images_per_class", c.images_per_class},
                     {"epochs", c.epochs},
                     {"mining", to_string(c.mining)},
                     {"seed", c.seed},
                     {"trainable_prefixes", c.trainable_prefixes}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.margin = j.value("margin", d.margin);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.classes_per_batch = j.value("classes_per_batch", d.classes_per_batch);
  c.images_per_class = j.value("images_per_class", d.images_per_class);
  c.epochs = j.value("epochs", d.epochs);
  c.mining = mining_strategy_from_string(j.value("mining", to_string(d.mining)));
  c.seed = j.value("seed", d.seed);
  c.trainable_prefixes = j.value("trainable_prefixes", d.trainable_prefixes);
}

namespace {

Tensor gather(const Tensor& images, const std::vector<std::size_t>& rows) {
  const std::size_t per = images.size() / images.dim(0);
  Shape shape = images.shape();
  shape[0] = rows.size();
  std::vector<float> data;
  data.reserve(rows.size() * per);
  for (auto r : rows) {
    const float* src = &images.data()[r * per];
    data.insert(data.end(), src, src + per);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

TrainResult train_embedding(const arch::NetworkSpec& spec, arch::Parameters params, const Tensor& images,
                            const std::vector<std::int32_t>& labels, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  arch::check_parameters(spec, params);
  if (images.rank() == 0 || images.empty() || images.dim(0) == 0) throw std::invalid_argument("train: empty train partition");
  if (images.dim(0) != labels.size()) throw std::invalid_argument("train: image and label counts differ");
  if (!config.trainable_prefixes.empty()) params.freeze_except(config.trainable_prefixes);

  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::int32_t> usable;
  for (const auto& [label, rows] : by_class) {
    if (rows.size() >= 2) usable.push_back(label);
  }
  if (usable.size() < 2) throw std::invalid_argument("train: need at least two classes with two or more images");

  std::mt19937_64 rng(config.seed);
  const std::size_t steps = (labels.size() + config.batch_size() - 1) / config.batch_size();
  TrainResult result;
  double lr = config.learning_rate;
  std::size_t iteration = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step, ++iteration) {
      std::vector<std::int32_t> classes = usable;
      std::shuffle(classes.begin(), classes.end(), rng);
      classes.resize(std::min(classes.size(), config.classes_per_batch));
      std::vector<std::size_t> rows;
      std::vector<std::int32_t> batch_labels;
      for (auto c : classes) {
        std::vector<std::size_t> members = by_class[c];
        std::shuffle(members.begin(), members.end(), rng);
        members.resize(std::min(members.size(), config.images_per_class));
        for (auto r : members) {
          rows.push_back(r);
          batch_labels.push_back(c);
        }
      }

      GradTape<float> tape;
      std::map<std::string, Tensor> running;
      arch::ForwardContext<float> ctx;
      ctx.mode = arch::Mode::kTrain;
      ctx.tape = &tape;
      ctx.running_updates = &running;
      Var<float> x{gather(images, rows), {}};
      Var<float> out = arch::forward(spec, params, x, ctx);
      for (std::size_t i = 0; i < out.value.size(); ++i) {
        if (!std::isfinite(out.value[i])) {
          throw NonFiniteLoss(fmt::format("non-finite embedding at epoch {} iteration {} (image {})", epoch + 1,
                                          iteration, rows[i / out.value.dim(1)]));
        }
      }
      Var<float> emb;
      try {
        emb = ag::l2_normalize(ctx.tape, out);
      } catch (const std::domain_error& e) {
        throw NonFiniteLoss(fmt::format("undefined loss at epoch {} iteration {}: {}", epoch + 1, iteration, e.what()));
      }

      const auto triplets = mine_triplets(emb.value, batch_labels, config.mining, config.margin, rng);
      const std::size_t d = emb.value.dim(1);
      std::vector<double> grad(emb.value.size(), 0.0);
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(triplets.size());
      auto row = [&](std::size_t i) {
        std::vector<double> v(d);
        for (std::size_t k = 0; k < d; ++k) v[k] = emb.value.data()[i * d + k];
        return v;
      };
      for (const auto& t : triplets) {
        const auto a = row(t.anchor);
        const auto p = row(t.positive);
        const auto n = row(t.negative);
        const auto r = triplet_loss(a, p, n, config.margin);
        if (!std::isfinite(r.loss)) {
          throw NonFiniteLoss(fmt::format("non-finite triplet loss at epoch {} iteration {} (anchor {}, positive {}, negative {})",
                                          epoch + 1, iteration, rows[t.anchor], rows[t.positive], rows[t.negative]));
        }
        loss += r.loss * inv;
        for (std::size_t k = 0; k < d; ++k) {
          grad[t.anchor * d + k] += r.grad_anchor[k] * inv;
          grad[t.positive * d + k] += r.grad_positive[k] * inv;
          grad[t.negative * d + k] += r.grad_negative[k] * inv;
        }
      }
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss(fmt::format("non-finite batch loss at epoch {} iteration {}", epoch + 1, iteration));
      }
      epoch_loss += loss;

      if (emb.id && lr > 0.0) {
        Tensor g(emb.value.shape());
        for (std::size_t i = 0; i < grad.size(); ++i) g[i] = static_cast<float>(grad[i]);
        const auto grads = tape.backward(*emb.id, g);
        for (const auto& [name, pg] : grads.params) {
          auto& value = params.at(name);
          for (std::size_t i = 0; i < value.size(); ++i) {
            value[i] = static_cast<float>(static_cast<double>(value[i]) - lr * static_cast<double>(pg[i]));
          }
        }
      }
      for (auto& [name, t] : running) params.at(name) = std::move(t);
    }
    epoch_loss /= static_cast<double>(steps);
    result.loss_curve.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    lr *= config.lr_decay;
  }
  result.params = std::move(params);
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& loss_curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < loss_curve.size(); ++i) os << fmt::format("{},{:.9g}\n", i + 1, loss_curve[i]);
}

}  // namespace plantid::metric
