#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trans2d/data/schema.hpp"
#include "trans2d/model/model.hpp"
#include "trans2d/rng.hpp"
#include "trans2d/tensor.hpp"
#include "trans2d/training/train.hpp"

namespace trans2d::train {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Snapshot loss of a small model (N=6, C=3, d=4, h=2, L=1, no dropout)
/// against central differences over every trainable coordinate.
/// Sizes are fixed; `cfg` only selects the variant (terms, linear mode, heads).
/// `wrap_loss`, when set, is applied to the loss before differentiation.
inline GradCheckResult run_grad_check(std::uint64_t seed = 1, double h = 1e-5,
                                      const std::function<ad::Tensor(const ad::Tensor&)>& wrap_loss = {},
                                      model::Trans2DConfig cfg = {}) {
  cfg.N = 6;
  cfg.d = 4;
  cfg.h = 2;
  cfg.L = 1;
  cfg.dropout_p = 0.0;

  auto names = data::AttributeSchema::default_schema().names();
  names.resize(3);
  auto schema = data::AttributeSchema::from_names(names);
  for (std::size_t j = 0; j < schema.size(); ++j) schema.set_vocab_size(j, 6 + j);
  model::Trans2DModel m(cfg, schema, seed);

  // Five history rows and three candidates, one clicked.
  Rng rng(derive_seed(seed, "grad-check"));
  data::EncodedSnapshot snap;
  snap.channels = schema.size();
  snap.n_history = cfg.N - 1;
  snap.n_candidates = 3;
  auto draw = [&](std::vector<std::uint32_t>& out, std::size_t rows) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < schema.size(); ++j) {
        out.push_back(static_cast<std::uint32_t>(rng.uniform_int(1, static_cast<std::int64_t>(schema[j].vocab_size) - 1)));
      }
    }
  };
  draw(snap.history_ids, snap.n_history);
  draw(snap.candidate_ids, snap.n_candidates);
  snap.labels = {0.0, 1.0, 0.0};

  // Weights drawn at training-init scale are tiny; widen them so every path
  // carries signal.
  auto [params, pnames] = trainable(m);
  for (auto& p : params) {
    for (auto& v : p.mutable_data()) v += rng.normal(0.0, 0.3);
  }

  auto f = [&] {
    auto loss = bce_snapshot_loss(m.score_snapshot(snap), snap.labels);
    return wrap_loss ? wrap_loss(loss) : loss;
  };
  const auto rep = ad::finite_diff_check(f, params, h);
  GradCheckResult out;
  out.max_rel_error = rep.max_rel_error;
  out.worst_parameter = params.empty() ? "" : pnames[rep.worst_param];
  out.worst_coordinate = rep.worst_coord;
  out.coordinates = rep.coordinates;
  out.passed = rep.max_rel_error < kGradCheckTolerance;
  return out;
}

}  // namespace trans2d::train
