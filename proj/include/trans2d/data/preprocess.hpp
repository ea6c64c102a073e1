#pragma once

// Binning, per-sequence hashing, vocabulary encoding, sequence assembly and
// the time-based split.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trans2d/data/schema.hpp"
#include "trans2d/errors.hpp"

namespace trans2d::data {

// ---------------------------------------------------------------------------
// Histogram-equalized binning

struct BinEdges {
  std::vector<double> edges;  // strictly increasing upper bounds of bins 0..size-1
  std::size_t requested_bins = 1;
  bool collapsed = false;  // duplicate quantiles were merged

  std::size_t bin_count() const { return edges.size() + 1; }

  // Number of edges strictly below v, so a value equal to an edge goes low.
  std::size_t bin_of(double v) const {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
  }
};

/// Edges at the empirical k/n_bins quantiles of `values`.
inline BinEdges fit_bins(std::span<const double> values, std::size_t n_bins) {
  if (n_bins == 0) throw ConfigError("binning needs at least one bin");
  if (values.empty()) throw ConfigError("binning needs at least one value");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  BinEdges out;
  out.requested_bins = n_bins;
  for (std::size_t k = 1; k < n_bins; ++k) {
    const std::size_t pos = (k * n + n_bins - 1) / n_bins;  // ceil(k n / b)
    const double edge = sorted[pos == 0 ? 0 : pos - 1];
    if (!out.edges.empty() && out.edges.back() >= edge) {
      out.collapsed = true;
      continue;
    }
    out.edges.push_back(edge);
  }
  // The top edge equal to the maximum would leave the last bin empty.
  while (!out.edges.empty() && out.edges.back() >= sorted.back()) {
    out.edges.pop_back();
    out.collapsed = true;
  }
  return out;
}

struct BinningResult {
  std::vector<std::size_t> assignments;
  BinEdges edges;
};

inline BinningResult histogram_equalize_bin(std::span<const double> values, std::size_t n_bins) {
  BinningResult r;
  r.edges = fit_bins(values, n_bins);
  r.assignments.reserve(values.size());
  for (double v : values) r.assignments.push_back(r.edges.bin_of(v));
  return r;
}

// ---------------------------------------------------------------------------
// Per-sequence hashing

/// Maps distinct ids to 1..k by descending count, ties by first appearance.
template <typename Id>
std::unordered_map<Id, std::size_t> fit_sequence_hash(std::span<const Id> ids) {
  std::unordered_map<Id, std::pair<std::size_t, std::size_t>> stats;  // id -> (count, first)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto [it, inserted] = stats.try_emplace(ids[i], 0, i);
    ++it->second.first;
  }
  std::vector<std::pair<Id, std::pair<std::size_t, std::size_t>>> order(stats.begin(), stats.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::unordered_map<Id, std::size_t> mapping;
  for (std::size_t r = 0; r < order.size(); ++r) mapping[order[r].first] = r + 1;
  return mapping;
}

template <typename Id>
std::vector<std::size_t> hash_ids_per_sequence(std::span<const Id> ids) {
  const auto mapping = fit_sequence_hash(ids);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(mapping.at(id));
  return out;
}

// ---------------------------------------------------------------------------
// Calendar

// Timestamps count seconds from this instant (2020-02-02 00:00 UTC).
inline constexpr std::int64_t kLogEpoch = 1580601600;

struct CalendarFields {
  std::int64_t hour, day, weekday;
};

inline CalendarFields calendar(std::int64_t timestamp) {
  using namespace std::chrono;
  const sys_seconds t{seconds{kLogEpoch + timestamp}};
  const auto days_point = floor<days>(t);
  const year_month_day ymd{days_point};
  const weekday wd{days_point};
  const auto secs = (t - days_point).count();
  return {secs / 3600, static_cast<std::int64_t>(static_cast<unsigned>(ymd.day())),
          static_cast<std::int64_t>(wd.c_encoding())};
}

// ---------------------------------------------------------------------------
// Encoder

inline constexpr std::size_t kMaxSnapshotSize = 15;
inline constexpr std::int64_t kClickCode = 1;
inline constexpr std::int64_t kViewCode = 2;

/// Vocabulary lookups fit on the training split. Index 0 of every channel is
/// reserved for unknown or padding.
///
/// Categorical attributes map their sorted distinct raw values to 1..k. Price
/// maps to its histogram-equalized bin + 1. Sequence-relative attributes
/// (positions, hashed ids, snapshot distance, RSP) are already small positive
/// integers and are used directly, with fixed vocabularies sized by the
/// maximum sequence length.
class Encoder {
 public:
  Encoder() = default;

  static Encoder fit(std::span<const WatchlistSample> train, std::size_t max_len, std::size_t price_bins = 100) {
    if (max_len < 2) throw ConfigError("maximum sequence length must be at least 2");
    Encoder enc;
    enc.max_len_ = max_len;
    std::map<Attribute, std::vector<std::int64_t>> raw;
    std::vector<double> prices;
    auto note_item = [&](const ItemAttributes& it) {
      raw[Attribute::condition].push_back(it.condition);
      raw[Attribute::level1_category].push_back(it.level1_category);
      raw[Attribute::leaf_category].push_back(it.leaf_category);
      raw[Attribute::sale_type].push_back(it.sale_type);
      raw[Attribute::site_id].push_back(it.site_id);
      prices.push_back(it.price);
    };
    auto note_time = [&](std::int64_t ts) {
      const auto cal = calendar(ts);
      raw[Attribute::hour].push_back(cal.hour);
      raw[Attribute::day].push_back(cal.day);
      raw[Attribute::weekday].push_back(cal.weekday);
    };
    for (const auto& s : train) {
      raw[Attribute::user_id].push_back(s.user_id);
      note_time(s.timestamp);
      raw[Attribute::interaction_type].push_back(kClickCode);
      for (const auto& c : s.candidates) note_item(c.item);
      for (const auto& e : s.history) {
        note_item(e.item);
        note_time(e.timestamp);
        raw[Attribute::interaction_type].push_back(e.kind == EventKind::watchlist_click ? kClickCode : kViewCode);
      }
    }
    if (prices.empty()) throw ConfigError("cannot fit encoder on an empty training split");
    for (auto& [attr, values] : raw) {
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      enc.vocab_[static_cast<std::size_t>(attr)] = std::move(values);
    }
    enc.price_ = fit_bins(prices, price_bins);
    return enc;
  }

  std::size_t max_len() const { return max_len_; }
  const BinEdges& price_edges() const { return price_; }
  const std::vector<std::int64_t>& vocabulary(Attribute a) const { return vocab_[static_cast<std::size_t>(a)]; }

  static bool is_categorical(Attribute a) {
    switch (a) {
      case Attribute::user_id:
      case Attribute::condition:
      case Attribute::level1_category:
      case Attribute::leaf_category:
      case Attribute::sale_type:
      case Attribute::site_id:
      case Attribute::interaction_type:
      case Attribute::hour:
      case Attribute::day:
      case Attribute::weekday:
        return true;
      default:
        return false;
    }
  }

  std::size_t vocab_size(Attribute a) const {
    if (is_categorical(a)) return vocabulary(a).size() + 1;
    switch (a) {
      case Attribute::price: return price_.bin_count() + 1;
      case Attribute::relative_snapshot_position: return kMaxSnapshotSize + 1;
      default: return max_len_ + 1;
    }
  }

  // Categorical raw value -> 1..k, unseen -> 0.
  std::uint32_t encode(Attribute a, std::int64_t raw) const {
    const auto& v = vocabulary(a);
    auto it = std::lower_bound(v.begin(), v.end(), raw);
    if (it == v.end() || *it != raw) return 0;
    return static_cast<std::uint32_t>(it - v.begin() + 1);
  }

  std::uint32_t encode_price(double price) const { return static_cast<std::uint32_t>(price_.bin_of(price) + 1); }

  // Sequence-relative value clamped into its fixed vocabulary.
  std::uint32_t encode_relative(Attribute a, std::int64_t value) const {
    const auto cap = static_cast<std::int64_t>(vocab_size(a) - 1);
    return static_cast<std::uint32_t>(std::clamp<std::int64_t>(value, 0, cap));
  }

  /// Schema with vocabulary sizes filled in.
  AttributeSchema schema_for(const AttributeSchema& channels) const {
    AttributeSchema out = channels;
    for (std::size_t j = 0; j < out.size(); ++j) out.set_vocab_size(j, vocab_size(out[j].attribute));
    return out;
  }

  // Raw pieces used by serialization.
  static Encoder from_parts(std::size_t max_len, BinEdges price,
                            std::array<std::vector<std::int64_t>, kAttributeCount> vocab) {
    Encoder e;
    e.max_len_ = max_len;
    e.price_ = std::move(price);
    e.vocab_ = std::move(vocab);
    return e;
  }

  bool operator==(const Encoder& o) const {
    return max_len_ == o.max_len_ && price_.edges == o.price_.edges && vocab_ == o.vocab_;
  }

 private:
  std::size_t max_len_ = 50;
  BinEdges price_;
  std::array<std::vector<std::int64_t>, kAttributeCount> vocab_{};
};

// ---------------------------------------------------------------------------
// Sequence assembly

struct AssemblyOptions {
  std::size_t max_len = 50;    // N, including the appended candidate row
  bool drop_page_views = false;
  bool drop_clicks = false;
  bool drop_history = false;
  std::int64_t max_days = 0;   // keep history younger than this many days; 0 keeps all
};

/// Encoded N_used x C id array; rows 0..n_history-1 are history (oldest first),
/// the last row is the candidate.
struct EventSequence {
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::size_t n_history = 0;
  std::vector<std::uint32_t> ids;

  std::size_t candidate_row() const { return rows - 1; }
  std::uint32_t id(std::size_t i, std::size_t j) const { return ids[i * channels + j]; }
};

/// Every candidate of one snapshot sharing a single encoded history. The
/// history encoding does not depend on which candidate is appended.
struct EncodedSnapshot {
  std::size_t channels = 0;
  std::size_t n_history = 0;
  std::size_t n_candidates = 0;
  std::vector<std::uint32_t> history_ids;    // n_history x C
  std::vector<std::uint32_t> candidate_ids;  // n_candidates x C
  std::vector<double> labels;

  EventSequence sequence(std::size_t candidate) const {
    if (candidate >= n_candidates) throw std::out_of_range("candidate index out of range");
    EventSequence s;
    s.rows = n_history + 1;
    s.channels = channels;
    s.n_history = n_history;
    s.ids = history_ids;
    s.ids.insert(s.ids.end(), candidate_ids.begin() + static_cast<std::ptrdiff_t>(candidate * channels),
                 candidate_ids.begin() + static_cast<std::ptrdiff_t>((candidate + 1) * channels));
    return s;
  }
};

/// History rows that survive the ablation filters, truncated to the newest
/// max_len - 1.
inline std::vector<const Event*> select_history(const WatchlistSample& sample, const AssemblyOptions& opt) {
  std::vector<const Event*> kept;
  if (opt.drop_history) return kept;
  const std::int64_t cutoff = opt.max_days > 0 ? sample.timestamp - opt.max_days * 86400 : INT64_MIN;
  for (const auto& e : sample.history) {
    if (opt.drop_page_views && e.kind == EventKind::page_view) continue;
    if (opt.drop_clicks && e.kind == EventKind::watchlist_click) continue;
    if (e.timestamp < cutoff) continue;
    kept.push_back(&e);
  }
  const std::size_t limit = opt.max_len - 1;
  if (kept.size() > limit) kept.erase(kept.begin(), kept.end() - static_cast<std::ptrdiff_t>(limit));
  return kept;
}

inline EncodedSnapshot assemble_snapshot(const WatchlistSample& sample, const Encoder& enc,
                                         const AttributeSchema& schema, const AssemblyOptions& opt) {
  if (opt.max_len < 2) throw ConfigError("maximum sequence length must be at least 2");
  if (opt.max_len > enc.max_len()) {
    throw ConfigError("sequence length " + std::to_string(opt.max_len) + " exceeds encoder capacity " +
                      std::to_string(enc.max_len()));
  }
  if (sample.candidates.empty()) throw SchemaError("snapshot has no candidates");
  const auto history = select_history(sample, opt);
  const std::size_t nh = history.size();
  const std::size_t n_used = nh + 1;
  const std::size_t C = schema.size();

  // Hashes are fit on history only, scanning newest first, so the history
  // encoding is shared by every candidate.
  std::vector<std::int64_t> item_ids, seller_ids;
  for (std::size_t k = nh; k-- > 0;) {
    item_ids.push_back(history[k]->item.item_id);
    seller_ids.push_back(history[k]->item.seller_id);
  }
  const auto item_hash = fit_sequence_hash<std::int64_t>(item_ids);
  const auto seller_hash = fit_sequence_hash<std::int64_t>(seller_ids);
  auto lookup = [](const std::unordered_map<std::int64_t, std::size_t>& m, std::int64_t id) {
    auto it = m.find(id);
    return static_cast<std::int64_t>(it == m.end() ? m.size() + 1 : it->second);
  };

  auto encode_row = [&](std::uint32_t* out, const ItemAttributes& item, std::int64_t ts, bool click,
                        std::int64_t position, std::int64_t snapshot, std::int64_t rsp) {
    const auto cal = calendar(ts);
    for (std::size_t j = 0; j < C; ++j) {
      const Attribute a = schema[j].attribute;
      std::uint32_t v = 0;
      switch (a) {
        case Attribute::hash_item_id: v = enc.encode_relative(a, lookup(item_hash, item.item_id)); break;
        case Attribute::hash_seller_id: v = enc.encode_relative(a, lookup(seller_hash, item.seller_id)); break;
        case Attribute::user_id: v = enc.encode(a, sample.user_id); break;
        case Attribute::price: v = enc.encode_price(item.price); break;
        case Attribute::condition: v = enc.encode(a, item.condition); break;
        case Attribute::level1_category: v = enc.encode(a, item.level1_category); break;
        case Attribute::leaf_category: v = enc.encode(a, item.leaf_category); break;
        case Attribute::sale_type: v = enc.encode(a, item.sale_type); break;
        case Attribute::site_id: v = enc.encode(a, item.site_id); break;
        case Attribute::position_id: v = enc.encode_relative(a, position); break;
        case Attribute::snapshot_id: v = enc.encode_relative(a, snapshot); break;
        case Attribute::interaction_type: v = enc.encode(a, click ? kClickCode : kViewCode); break;
        case Attribute::hour: v = enc.encode(a, cal.hour); break;
        case Attribute::day: v = enc.encode(a, cal.day); break;
        case Attribute::weekday: v = enc.encode(a, cal.weekday); break;
        case Attribute::relative_snapshot_position: v = enc.encode_relative(a, rsp); break;
      }
      out[j] = v;
    }
  };

  EncodedSnapshot s;
  s.channels = C;
  s.n_history = nh;
  s.n_candidates = sample.candidates.size();
  s.history_ids.resize(nh * C);
  s.candidate_ids.resize(s.n_candidates * C);
  for (std::size_t r = 0; r < nh; ++r) {
    const Event& e = *history[r];
    const bool click = e.kind == EventKind::watchlist_click;
    encode_row(s.history_ids.data() + r * C, e.item, e.timestamp, click, static_cast<std::int64_t>(n_used - r),
               std::max<std::int64_t>(1, sample.snapshot_id - e.snapshot_id + 1), click ? e.rsp : 0);
  }
  for (std::size_t k = 0; k < s.n_candidates; ++k) {
    const auto& c = sample.candidates[k];
    encode_row(s.candidate_ids.data() + k * C, c.item, sample.timestamp, true, 1, 1, c.rsp);
    s.labels.push_back(static_cast<double>(c.label));
  }
  return s;
}

inline EventSequence assemble_sequence(const WatchlistSample& sample, std::size_t candidate_index,
                                       const Encoder& enc, const AttributeSchema& schema,
                                       const AssemblyOptions& opt) {
  if (candidate_index >= sample.candidates.size()) {
    throw std::out_of_range("candidate index " + std::to_string(candidate_index) + " out of range for snapshot of " +
                            std::to_string(sample.candidates.size()));
  }
  return assemble_snapshot(sample, enc, schema, opt).sequence(candidate_index);
}

// ---------------------------------------------------------------------------
// Time-based split

struct SplitConfig {
  double train_frac = 10.0 / 14.0;
  double val_frac_of_train = 0.01;
  // Time axis [begin, end); derived from the samples when unset.
  std::optional<std::pair<std::int64_t, std::int64_t>> time_range;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Tags samples by timestamp: train earliest, validation the trailing slice of
/// the training range, test after it.
inline SplitCounts split_dataset(std::vector<WatchlistSample>& samples, const SplitConfig& cfg = {}) {
  if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
  if (!(cfg.val_frac_of_train > 0.0 && cfg.val_frac_of_train < 1.0)) {
    throw ConfigError("val_frac_of_train must lie in (0, 1)");
  }
  if (samples.empty()) throw ConfigError("cannot split an empty dataset");
  double begin, end;
  if (cfg.time_range) {
    begin = static_cast<double>(cfg.time_range->first);
    end = static_cast<double>(cfg.time_range->second);
  } else {
    auto [lo, hi] = std::minmax_element(samples.begin(), samples.end(),
                                        [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    begin = static_cast<double>(lo->timestamp);
    end = static_cast<double>(hi->timestamp);
  }
  if (!(end > begin)) throw ConfigError("samples span no time; cannot split by timestamp");
  const double train_end = begin + cfg.train_frac * (end - begin);
  const double val_begin = train_end - cfg.val_frac_of_train * (train_end - begin);
  SplitCounts counts;
  for (auto& s : samples) {
    const auto t = static_cast<double>(s.timestamp);
    if (t >= train_end) {
      s.split = Split::test;
      ++counts.test;
    } else if (t >= val_begin) {
      s.split = Split::val;
      ++counts.val;
    } else {
      s.split = Split::train;
      ++counts.train;
    }
  }
  if (counts.train == 0 || counts.val == 0 || counts.test == 0) {
    throw ConfigError("time split leaves an empty partition (train " + std::to_string(counts.train) + ", val " +
                      std::to_string(counts.val) + ", test " + std::to_string(counts.test) + ")");
  }
  return counts;
}

inline std::vector<WatchlistSample> filter_split(const std::vector<WatchlistSample>& samples, Split split) {
  std::vector<WatchlistSample> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

}  // namespace trans2d::data
