#pragma once

// Ranking metrics over watchlist snapshots. Candidates are ranked by
// descending score; equal scores keep candidate order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trans2d/errors.hpp"

namespace trans2d::eval {

struct RankedSnapshot {
  std::vector<double> scores;
  std::vector<double> labels;

  // Candidate indices, best first.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
  }
};

namespace detail {

inline void check(const RankedSnapshot& r, std::size_t k) {
  if (k == 0) throw std::invalid_argument("cutoff k must be at least 1");
  if (r.scores.size() != r.labels.size()) throw DimensionError("scores and labels differ in length");
}

// Relevance of the ranked positions 1..min(k, m).
inline std::vector<double> top_relevance(const RankedSnapshot& r, std::size_t k) {
  check(r, k);
  const auto order = r.ranking();
  std::vector<double> rel;
  for (std::size_t p = 0; p < std::min(k, order.size()); ++p) rel.push_back(r.labels[order[p]] > 0 ? 1.0 : 0.0);
  return rel;
}

}  // namespace detail

/// Relevant items in the top k over k (k stays the denominator when m < k).
inline double precision_at_k(const RankedSnapshot& r, std::size_t k) {
  const auto rel = detail::top_relevance(r, k);
  return std::accumulate(rel.begin(), rel.end(), 0.0) / static_cast<double>(k);
}

inline double hit_at_k(const RankedSnapshot& r, std::size_t k) {
  const auto rel = detail::top_relevance(r, k);
  return std::any_of(rel.begin(), rel.end(), [](double x) { return x > 0; }) ? 1.0 : 0.0;
}

inline double ndcg_at_k(const RankedSnapshot& r, std::size_t k) {
  const auto rel = detail::top_relevance(r, k);
  double dcg = 0.0;
  for (std::size_t p = 0; p < rel.size(); ++p) dcg += rel[p] / std::log2(static_cast<double>(p) + 2.0);
  const auto relevant = static_cast<std::size_t>(std::count_if(r.labels.begin(), r.labels.end(), [](double y) { return y > 0; }));
  double ideal = 0.0;
  for (std::size_t p = 0; p < std::min(k, relevant); ++p) ideal += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

enum class Metric { precision, hit, ndcg };
inline constexpr std::array<std::size_t, 3> kCutoffs{1, 2, 5};

/// Mean of every metric at k = 1, 2, 5 over a set of snapshots.
struct MetricReport {
  std::array<std::array<double, 3>, 3> mean{};  // [metric][cutoff index]
  std::size_t snapshots = 0;

  double get(Metric m, std::size_t k) const {
    for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
      if (kCutoffs[c] == k) return mean[static_cast<std::size_t>(m)][c];
    }
    throw std::invalid_argument("cutoff " + std::to_string(k) + " is not reported");
  }
  double ndcg5() const { return get(Metric::ndcg, 5); }

  bool operator==(const MetricReport&) const = default;

  // Table column layout.
  static std::vector<std::string> columns() { return {"P@1", "P@2", "P@5", "HIT@2", "HIT@5", "NDCG@2", "NDCG@5"}; }
  std::vector<double> row() const {
    return {get(Metric::precision, 1), get(Metric::precision, 2), get(Metric::precision, 5), get(Metric::hit, 2),
            get(Metric::hit, 5),       get(Metric::ndcg, 2),      get(Metric::ndcg, 5)};
  }
};

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_row(const MetricReport& r) {
  std::string out;
  for (double v : r.row()) {
    if (!out.empty()) out += ',';
    out += format_metric(v);
  }
  return out;
}

inline std::string csv_header() {
  std::string out;
  for (const auto& c : MetricReport::columns()) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

/// Averages in snapshot order.
inline MetricReport summarize(std::span<const RankedSnapshot> snapshots) {
  if (snapshots.empty()) throw ConfigError("cannot evaluate an empty split");
  MetricReport rep;
  for (const auto& s : snapshots) {
    for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
      rep.mean[0][c] += precision_at_k(s, kCutoffs[c]);
      rep.mean[1][c] += hit_at_k(s, kCutoffs[c]);
      rep.mean[2][c] += ndcg_at_k(s, kCutoffs[c]);
    }
  }
  rep.snapshots = snapshots.size();
  for (auto& m : rep.mean) {
    for (auto& v : m) v /= static_cast<double>(snapshots.size());
  }
  return rep;
}

}  // namespace trans2d::eval
