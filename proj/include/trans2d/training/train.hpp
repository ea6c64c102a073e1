#pragma once

// Snapshot BCE objective, Adam and the epoch loop.

#include <cmath>
#include <functional>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trans2d/data/preprocess.hpp"
#include "trans2d/errors.hpp"
#include "trans2d/evaluation/evaluate.hpp"
#include "trans2d/model/model.hpp"
#include "trans2d/parallel.hpp"
#include "trans2d/rng.hpp"
#include "trans2d/tensor.hpp"

namespace trans2d::train {

using ad::Tensor;

/// Sum over the snapshot's candidates of the binary cross-entropy.
inline Tensor bce_snapshot_loss(const Tensor& scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("loss: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                         " labels");
  }
  return ad::binary_cross_entropy(scores, labels, 1e-12);
}

/// lr0 / factor^(epoch - 1), epochs counted from 1.
inline double lr_schedule(std::size_t epoch, double lr0, double factor) {
  if (epoch < 1) throw std::invalid_argument("epochs are counted from 1");
  return lr0 / std::pow(factor, static_cast<double>(epoch - 1));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // added to the gradient as wd * theta
};

/// Adam with bias correction over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, std::vector<std::string> names, AdamConfig cfg)
      : params_(std::move(params)), names_(std::move(names)), cfg_(cfg) {
    if (names_.size() != params_.size()) throw std::invalid_argument("one name per parameter");
    if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    cfg_.lr = lr;
  }
  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

  /// One update from gradients laid out like the parameter list.
  void step(std::span<const std::vector<double>> grads) {
    if (grads.size() != params_.size()) throw DimensionError("gradient count does not match parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (grads[i].size() != params_[i].size()) throw DimensionError("gradient shape mismatch for " + names_[i]);
      for (std::size_t k = 0; k < grads[i].size(); ++k) {
        if (!std::isfinite(grads[i][k])) {
          throw NumericError("non-finite gradient in parameter '" + names_[i] + "' at element " + std::to_string(k));
        }
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto theta = params_[i].mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double g = grads[i][k] + cfg_.weight_decay * theta[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        theta[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double decay_factor = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-5;
  std::uint64_t seed = 1;   // model init, shuffling and dropout derive from it
  std::size_t threads = 1;  // workers per batch; results do not depend on it

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean snapshot loss over the epoch (dropout on)
  double val_ndcg5 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t steps = 0;
};

inline std::string log_csv_header() { return "epoch,lr,train_loss,val_ndcg5"; }

inline std::string log_csv_row(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10f,%.6f", e.epoch, e.lr, e.train_loss, e.val_ndcg5);
  return buf;
}

/// Trainable parameters in model order.
inline std::pair<std::vector<Tensor>, std::vector<std::string>> trainable(model::Trans2DModel& m) {
  std::pair<std::vector<Tensor>, std::vector<std::string>> out;
  for (auto& p : m.parameters()) {
    if (p.trainable) {
      out.first.push_back(p.value);
      out.second.push_back(p.name);
    }
  }
  return out;
}

/// Loss and parameter gradients of one snapshot.
inline double snapshot_gradient(const model::Trans2DModel& m, const data::EncodedSnapshot& snap,
                                const std::vector<Tensor>& params, const model::ForwardOptions& opt,
                                std::vector<std::vector<double>>& grads) {
  ad::Tape tape;
  Tensor loss;
  {
    ad::TapeScope scope(tape);
    loss = bce_snapshot_loss(m.score_snapshot(snap, opt), snap.labels);
  }
  const auto g = ad::backward(loss, tape);
  grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (const auto* gi = g.find(params[i])) {
      grads[i].assign(gi->begin(), gi->end());
    } else {
      grads[i].assign(params[i].size(), 0.0);
    }
  }
  return loss.item();
}

using EpochCallback = std::function<void(const EpochLog&, const model::Trans2DModel&)>;

/// Mini-batch training for cfg.epochs epochs. Batch gradients are the mean of
/// per-snapshot gradients, reduced in batch order. Returns the final model
/// state in `m` and the per-epoch log.
inline TrainResult train(model::Trans2DModel& m, std::span<const data::EncodedSnapshot> train_set,
                         std::span<const data::EncodedSnapshot> val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  auto [params, names] = trainable(m);
  Adam opt(params, names, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const std::size_t threads = resolve_threads(cfg.threads);

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::vector<std::vector<double>>> per_snapshot(cfg.batch_size);
  std::vector<double> losses(cfg.batch_size);
  std::vector<std::vector<double>> batch_grad(params.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_lr(lr_schedule(epoch, cfg.lr, cfg.decay_factor));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, "shuffle", epoch));
    for (std::size_t i = order.size(); i-- > 1;) {
      std::swap(order[i], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      parallel_for(n, threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        Rng dropout(derive_seed(cfg.seed, "dropout", (epoch - 1) * order.size() + idx));
        losses[b] = snapshot_gradient(m, train_set[idx], params, {true, &dropout}, per_snapshot[b]);
      });
      for (std::size_t i = 0; i < params.size(); ++i) {
        batch_grad[i].assign(params[i].size(), 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          const auto& g = per_snapshot[b][i];
          for (std::size_t k = 0; k < g.size(); ++k) batch_grad[i][k] += g[k];
        }
        for (auto& x : batch_grad[i]) x /= static_cast<double>(n);
      }
      for (std::size_t b = 0; b < n; ++b) epoch_loss += losses[b];
      opt.step(batch_grad);
      ++result.steps;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = opt.lr();
    entry.train_loss = epoch_loss / static_cast<double>(order.size());
    if (!val_set.empty()) entry.val_ndcg5 = eval::evaluate(m, val_set, threads).ndcg5();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry, m);
  }
  return result;
}

}  // namespace trans2d::train
