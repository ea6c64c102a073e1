#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trans2d/data/preprocess.hpp"
#include "trans2d/evaluation/metrics.hpp"
#include "trans2d/model/model.hpp"
#include "trans2d/parallel.hpp"

namespace trans2d::eval {

/// Orderings that need no training.
enum class StaticBaseline { rsp, price_desc, price_asc };

inline std::string_view to_string(StaticBaseline b) {
  switch (b) {
    case StaticBaseline::rsp: return "rsp";
    case StaticBaseline::price_desc: return "price-desc";
    case StaticBaseline::price_asc: return "price-asc";
  }
  return "?";
}

inline std::optional<StaticBaseline> static_baseline_from(std::string_view name) {
  for (auto b : {StaticBaseline::rsp, StaticBaseline::price_desc, StaticBaseline::price_asc}) {
    if (to_string(b) == name) return b;
  }
  return std::nullopt;
}

/// Scores decreasing in the sort key: newest watchlist position first, or by
/// price.
inline std::vector<double> static_scores(const data::WatchlistSample& s, StaticBaseline b) {
  std::vector<double> out;
  for (const auto& c : s.candidates) {
    switch (b) {
      case StaticBaseline::rsp: out.push_back(-static_cast<double>(c.rsp)); break;
      case StaticBaseline::price_desc: out.push_back(c.item.price); break;
      case StaticBaseline::price_asc: out.push_back(-c.item.price); break;
    }
  }
  return out;
}

inline std::vector<double> labels_of(const data::WatchlistSample& s) {
  std::vector<double> y;
  for (const auto& c : s.candidates) y.push_back(static_cast<double>(c.label));
  return y;
}

inline std::vector<RankedSnapshot> rank_with_baseline(std::span<const data::WatchlistSample> samples,
                                                      StaticBaseline b) {
  std::vector<RankedSnapshot> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({static_scores(s, b), labels_of(s)});
  return out;
}

/// Scores every snapshot with dropout off.
inline std::vector<RankedSnapshot> rank_with_model(const model::Trans2DModel& m,
                                                   std::span<const data::EncodedSnapshot> snaps,
                                                   std::size_t threads = 1) {
  std::vector<RankedSnapshot> out(snaps.size());
  parallel_for(snaps.size(), threads, [&](std::size_t i) {
    ad::NoGradScope no_grad;
    const auto scores = m.score_snapshot(snaps[i]);
    out[i] = {{scores.data().begin(), scores.data().end()}, snaps[i].labels};
  });
  return out;
}

inline MetricReport evaluate(const model::Trans2DModel& m, std::span<const data::EncodedSnapshot> snaps,
                             std::size_t threads = 1) {
  if (snaps.empty()) throw ConfigError("cannot evaluate an empty split");
  return summarize(rank_with_model(m, snaps, threads));
}

inline MetricReport evaluate(std::span<const data::WatchlistSample> samples, StaticBaseline b) {
  if (samples.empty()) throw ConfigError("cannot evaluate an empty split");
  return summarize(rank_with_baseline(samples, b));
}

}  // namespace trans2d::eval
