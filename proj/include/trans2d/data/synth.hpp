#pragma once

// Synthetic watchlist logs. Users alternate between browsing sessions of item
// page views and clicks on an item of their watchlist. Clicks follow a
// Gumbel-max choice whose utility mixes recent-view recency, category
// affinity, watchlist recency (RSP) and price preference, so each of these
// signals is learnable from the history.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "trans2d/data/preprocess.hpp"
#include "trans2d/data/schema.hpp"
#include "trans2d/errors.hpp"
#include "trans2d/rng.hpp"

namespace trans2d::data {

struct CatalogConfig {
  std::size_t n_items = 20000;
  std::size_t n_sellers = 2000;
  std::size_t n_leaf_categories = 100;
  double leaf_zipf = 1.2;
  double seller_zipf = 1.1;
  std::size_t n_conditions = 3;
  std::size_t n_sale_types = 2;
  std::size_t n_sites = 5;
  double price_sigma = 0.5;
};

struct ClickModel {
  double recent_view_weight = 2.0;  // candidate's leaf category among the last views
  double affinity_weight = 1.0;
  double rsp_weight = 0.5;          // candidate is the newest watchlist item
  double price_weight = 0.3;        // per |bin - preferred bin| / 100
  std::size_t recent_views = 5;
};

struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t n_users = 2000;
  std::int64_t days = 14;
  CatalogConfig catalog;
  ClickModel click;
  double extra_clicks_mean = 4.0;     // clicks per user = 1 + Poisson(mean)
  double views_per_session = 8.5;     // Poisson mean of page views before a click
  std::int64_t session_seconds = 3 * 3600;
  std::int64_t min_click_gap = 4 * 3600;
  std::size_t favorite_categories = 4;
  double p_view_watchlist = 0.35;
  double p_view_favorite = 0.45;      // remainder: uniformly random catalog item
  double p_add_viewed = 0.25;         // a viewed item joins the watchlist
  std::size_t min_snapshot = 3;
  std::size_t max_snapshot = kMaxSnapshotSize;
};

struct Catalog {
  std::vector<ItemAttributes> items;
  std::vector<std::size_t> price_bin;  // generator-side price percentile bin, 0..99
  std::vector<std::vector<std::size_t>> items_by_leaf;
};

inline std::size_t draw_weighted(Rng& rng, const std::vector<double>& weights) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng.engine());
}

inline Catalog generate_catalog(std::uint64_t seed, const CatalogConfig& cfg) {
  if (cfg.n_items < 1) throw ConfigError("catalog needs at least one item");
  if (cfg.n_sellers < 1) throw ConfigError("catalog needs at least one seller");
  Rng rng(derive_seed(seed, "catalog"));
  std::vector<double> leaf_mu(cfg.n_leaf_categories);
  for (auto& mu : leaf_mu) mu = rng.uniform(2.0, 6.0);
  const auto leaf_w = zipf_weights(cfg.n_leaf_categories, cfg.leaf_zipf);
  std::discrete_distribution<std::size_t> leaf_dist(leaf_w.begin(), leaf_w.end());
  auto seller_w = zipf_weights(cfg.n_sellers, cfg.seller_zipf);
  std::discrete_distribution<std::size_t> seller_dist(seller_w.begin(), seller_w.end());

  Catalog cat;
  cat.items.resize(cfg.n_items);
  cat.items_by_leaf.resize(cfg.n_leaf_categories);
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    auto& it = cat.items[i];
    it.item_id = static_cast<std::int64_t>(i);
    const std::size_t leaf = leaf_dist(rng.engine());
    it.leaf_category = static_cast<std::int64_t>(leaf);
    it.level1_category = static_cast<std::int64_t>(leaf / 5);
    it.condition = rng.uniform_int(0, static_cast<std::int64_t>(cfg.n_conditions) - 1);
    it.sale_type = rng.uniform_int(0, static_cast<std::int64_t>(cfg.n_sale_types) - 1);
    it.site_id = rng.uniform_int(0, static_cast<std::int64_t>(cfg.n_sites) - 1);
    it.seller_id = static_cast<std::int64_t>(seller_dist(rng.engine()));
    it.price = std::round(std::exp(rng.normal(leaf_mu[leaf], cfg.price_sigma)) * 100.0) / 100.0;
    cat.items_by_leaf[leaf].push_back(i);
  }
  std::vector<double> prices;
  for (const auto& it : cat.items) prices.push_back(it.price);
  const auto bins = fit_bins(prices, 100);
  for (const auto& it : cat.items) cat.price_bin.push_back(bins.bin_of(it.price));
  return cat;
}

namespace detail {

struct UserProfile {
  std::vector<std::size_t> favorite_leaves;
  std::vector<double> favorite_affinity;
  std::size_t preferred_bin = 0;

  double affinity(std::int64_t leaf) const {
    for (std::size_t k = 0; k < favorite_leaves.size(); ++k) {
      if (static_cast<std::int64_t>(favorite_leaves[k]) == leaf) return favorite_affinity[k];
    }
    return 0.0;
  }
};

// Watchlist ordered by addition time, oldest first.
class Watchlist {
 public:
  void add(std::size_t item) {
    if (std::find(items_.begin(), items_.end(), item) == items_.end()) items_.push_back(item);
  }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::size_t at(std::size_t k) const { return items_[k]; }
  // Newest m items, newest first.
  std::vector<std::size_t> newest(std::size_t m) const {
    std::vector<std::size_t> out;
    for (std::size_t k = items_.size(); k-- > 0 && out.size() < m;) out.push_back(items_[k]);
    return out;
  }

 private:
  std::vector<std::size_t> items_;
};

}  // namespace detail

/// Samples for users [0, n_users); one per watchlist click, in chronological
/// order within each user.
inline std::vector<WatchlistSample> generate_user_history(std::uint64_t seed, const Catalog& catalog,
                                                          const GeneratorConfig& cfg) {
  if (cfg.n_users < 1) throw ConfigError("need at least one user");
  if (cfg.days < 1) throw ConfigError("need at least one day");
  if (cfg.min_snapshot < 1 || cfg.min_snapshot > cfg.max_snapshot || cfg.max_snapshot > kMaxSnapshotSize) {
    throw ConfigError("snapshot size bounds must satisfy 1 <= min <= max <= 15");
  }
  const std::int64_t horizon = cfg.days * 86400;
  const std::size_t n_leaves = catalog.items_by_leaf.size();
  const auto leaf_w = zipf_weights(n_leaves, cfg.catalog.leaf_zipf);
  std::vector<WatchlistSample> samples;

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    Rng rng(derive_seed(seed, "user", u));
    detail::UserProfile profile;
    {
      auto w = leaf_w;
      for (std::size_t k = 0; k < std::min(cfg.favorite_categories, n_leaves); ++k) {
        const std::size_t leaf = draw_weighted(rng, w);
        w[leaf] = 0.0;
        profile.favorite_leaves.push_back(leaf);
        profile.favorite_affinity.push_back(rng.uniform(0.5, 1.5));
      }
      profile.preferred_bin = rng.index(100);
    }
    auto random_item = [&] { return rng.index(catalog.items.size()); };
    auto favorite_item = [&] {
      const std::size_t leaf = profile.favorite_leaves[draw_weighted(rng, profile.favorite_affinity)];
      const auto& pool = catalog.items_by_leaf[leaf];
      return pool.empty() ? random_item() : pool[rng.index(pool.size())];
    };

    // Click times: sorted, separated by at least min_click_gap, each preceded
    // by a full browsing session inside the horizon.
    const auto n_clicks = static_cast<std::size_t>(1 + rng.poisson(cfg.extra_clicks_mean));
    std::vector<std::int64_t> raw_times;
    for (std::size_t k = 0; k < n_clicks; ++k) raw_times.push_back(rng.uniform_int(cfg.session_seconds, horizon - 2));
    std::sort(raw_times.begin(), raw_times.end());
    std::vector<std::int64_t> click_times;
    for (auto t : raw_times) {
      if (click_times.empty() || t - click_times.back() >= cfg.min_click_gap) click_times.push_back(t);
    }

    detail::Watchlist watchlist;
    for (std::size_t k = 0; k < cfg.max_snapshot; ++k) {
      watchlist.add(rng.bernoulli(cfg.p_view_favorite / (1.0 - cfg.p_view_watchlist)) ? favorite_item()
                                                                                       : random_item());
    }

    std::vector<Event> history;
    auto push_view = [&](std::size_t item, std::int64_t ts, std::int64_t snapshot) {
      Event e;
      e.kind = EventKind::page_view;
      e.timestamp = ts;
      e.snapshot_id = snapshot;
      e.item = catalog.items[item];
      history.push_back(e);
    };

    for (std::size_t l = 1; l <= click_times.size(); ++l) {
      const std::int64_t t = click_times[l - 1];
      const std::int64_t view_snapshot = 2 * static_cast<std::int64_t>(l - 1);
      const std::int64_t click_snapshot = 2 * static_cast<std::int64_t>(l) - 1;

      // Browsing session before the click.
      const auto n_views = static_cast<std::size_t>(rng.poisson(cfg.views_per_session));
      std::vector<std::int64_t> view_times;
      for (std::size_t k = 0; k < n_views; ++k) view_times.push_back(rng.uniform_int(t - cfg.session_seconds, t - 1));
      std::sort(view_times.begin(), view_times.end());
      for (auto vt : view_times) {
        const double r = rng.uniform();
        std::size_t item;
        if (r < cfg.p_view_watchlist && !watchlist.empty()) item = watchlist.at(rng.index(watchlist.size()));
        else if (r < cfg.p_view_watchlist + cfg.p_view_favorite) item = favorite_item();
        else item = random_item();
        push_view(item, vt, view_snapshot);
        if (rng.bernoulli(cfg.p_add_viewed)) watchlist.add(item);
      }

      // Watchlist snapshot and the click.
      const auto m = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(cfg.min_snapshot), static_cast<std::int64_t>(cfg.max_snapshot)));
      const auto snapshot_items = watchlist.newest(m);

      std::vector<std::int64_t> recent_leaves;
      for (std::size_t k = history.size(); k-- > 0 && recent_leaves.size() < cfg.click.recent_views;) {
        if (history[k].kind == EventKind::page_view) recent_leaves.push_back(history[k].item.leaf_category);
      }

      WatchlistSample sample;
      sample.user_id = static_cast<std::int64_t>(u);
      sample.timestamp = t;
      sample.snapshot_id = click_snapshot;
      sample.history = history;
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t k = 0; k < snapshot_items.size(); ++k) {
        const std::size_t item = snapshot_items[k];
        const auto& attrs = catalog.items[item];
        const bool recent = std::find(recent_leaves.begin(), recent_leaves.end(), attrs.leaf_category) !=
                            recent_leaves.end();
        const double bin_gap = std::abs(static_cast<double>(catalog.price_bin[item]) -
                                        static_cast<double>(profile.preferred_bin));
        const double score = cfg.click.recent_view_weight * (recent ? 1.0 : 0.0) +
                             cfg.click.affinity_weight * profile.affinity(attrs.leaf_category) +
                             cfg.click.rsp_weight * (k == 0 ? 1.0 : 0.0) -
                             cfg.click.price_weight * bin_gap / 100.0 + rng.gumbel();
        if (score > best_score) {
          best_score = score;
          best = k;
        }
        sample.candidates.push_back({attrs, static_cast<std::int64_t>(k + 1), 0});
      }
      sample.candidates[best].label = 1;
      samples.push_back(std::move(sample));

      Event click;
      click.kind = EventKind::watchlist_click;
      click.timestamp = t;
      click.snapshot_id = click_snapshot;
      click.rsp = static_cast<std::int64_t>(best + 1);
      click.item = catalog.items[snapshot_items[best]];
      history.push_back(click);
      push_view(snapshot_items[best], t + 1, 2 * static_cast<std::int64_t>(l));
    }
  }
  return samples;
}

struct DatasetSummary {
  std::size_t users = 0;
  std::size_t samples = 0;
  std::size_t events = 0;  // distinct events across users (the longest history per user)
  std::size_t clicks = 0;
  double mean_snapshot_size = 0.0;
  double mean_history_length = 0.0;
};

inline DatasetSummary summarize(const std::vector<WatchlistSample>& samples) {
  DatasetSummary s;
  s.samples = samples.size();
  std::map<std::int64_t, std::size_t> longest;
  double snap = 0.0, hist = 0.0;
  for (const auto& x : samples) {
    auto& l = longest[x.user_id];
    l = std::max(l, x.history.size() + 2);  // + the click and its follow-up view
    snap += static_cast<double>(x.candidates.size());
    hist += static_cast<double>(x.history.size());
  }
  s.users = longest.size();
  for (const auto& [u, n] : longest) s.events += n;
  s.clicks = samples.size();
  if (!samples.empty()) {
    s.mean_snapshot_size = snap / static_cast<double>(samples.size());
    s.mean_history_length = hist / static_cast<double>(samples.size());
  }
  return s;
}

}  // namespace trans2d::data
