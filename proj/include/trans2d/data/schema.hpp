#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trans2d/errors.hpp"

namespace trans2d::data {

enum class ChannelGroup { position, item, time, id };

// The sixteen attributes an event row can carry.
enum class Attribute : std::uint8_t {
  hash_item_id,
  user_id,
  price,
  hash_seller_id,
  condition,
  level1_category,
  leaf_category,
  sale_type,
  site_id,
  position_id,
  snapshot_id,
  interaction_type,
  hour,
  day,
  weekday,
  relative_snapshot_position,
};

inline constexpr std::size_t kAttributeCount = 16;

struct AttributeInfo {
  Attribute attribute;
  std::string_view name;
  ChannelGroup group;
};

inline constexpr std::array<AttributeInfo, kAttributeCount> kAttributes{{
    {Attribute::hash_item_id, "hash-item-ID", ChannelGroup::position},
    {Attribute::user_id, "user-ID", ChannelGroup::id},
    {Attribute::price, "price", ChannelGroup::item},
    {Attribute::hash_seller_id, "hash-seller-ID", ChannelGroup::position},
    {Attribute::condition, "condition", ChannelGroup::item},
    {Attribute::level1_category, "level1-category", ChannelGroup::item},
    {Attribute::leaf_category, "leaf-category", ChannelGroup::item},
    {Attribute::sale_type, "sale-type", ChannelGroup::item},
    {Attribute::site_id, "site-ID", ChannelGroup::id},
    {Attribute::position_id, "position-ID", ChannelGroup::position},
    {Attribute::snapshot_id, "snapshot-ID", ChannelGroup::position},
    {Attribute::interaction_type, "interaction-type", ChannelGroup::id},
    {Attribute::hour, "hour", ChannelGroup::time},
    {Attribute::day, "day", ChannelGroup::time},
    {Attribute::weekday, "weekday", ChannelGroup::time},
    {Attribute::relative_snapshot_position, "relative-snapshot-position", ChannelGroup::position},
}};

inline const AttributeInfo& info(Attribute a) { return kAttributes[static_cast<std::size_t>(a)]; }

inline Attribute attribute_from_name(std::string_view name) {
  for (const auto& a : kAttributes) {
    if (a.name == name) return a.attribute;
  }
  throw ConfigError("unknown attribute '" + std::string(name) + "'");
}

inline std::string_view group_name(ChannelGroup g) {
  switch (g) {
    case ChannelGroup::position: return "position";
    case ChannelGroup::item: return "item";
    case ChannelGroup::time: return "time";
    case ChannelGroup::id: return "id";
  }
  return "?";
}

inline ChannelGroup group_from_name(std::string_view name) {
  for (auto g : {ChannelGroup::position, ChannelGroup::item, ChannelGroup::time, ChannelGroup::id}) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown attribute group '" + std::string(name) + "'");
}

struct Channel {
  Attribute attribute;
  std::string name;
  std::size_t vocab_size = 0;  // 0 until an encoder has been fit
  ChannelGroup group;

  bool operator==(const Channel&) const = default;
};

/// Ordered attribute channels; the channel axis of every event row.
class AttributeSchema {
 public:
  AttributeSchema() = default;

  explicit AttributeSchema(std::vector<Channel> channels) : channels_(std::move(channels)) {
    if (channels_.empty()) throw ConfigError("schema needs at least one channel");
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      for (std::size_t j = i + 1; j < channels_.size(); ++j) {
        if (channels_[i].attribute == channels_[j].attribute) {
          throw ConfigError("duplicate channel '" + channels_[i].name + "'");
        }
      }
    }
  }

  static AttributeSchema from_attributes(const std::vector<Attribute>& attrs) {
    std::vector<Channel> ch;
    for (auto a : attrs) ch.push_back({a, std::string(info(a).name), 0, info(a).group});
    return AttributeSchema(std::move(ch));
  }

  static AttributeSchema from_names(const std::vector<std::string>& names) {
    std::vector<Attribute> attrs;
    for (const auto& n : names) attrs.push_back(attribute_from_name(n));
    return from_attributes(attrs);
  }

  // All sixteen attributes in canonical order.
  static AttributeSchema default_schema() {
    std::vector<Attribute> attrs;
    for (const auto& a : kAttributes) attrs.push_back(a.attribute);
    return from_attributes(attrs);
  }

  std::size_t size() const { return channels_.size(); }
  const Channel& operator[](std::size_t j) const { return channels_.at(j); }
  const std::vector<Channel>& channels() const { return channels_; }

  std::optional<std::size_t> index_of(Attribute a) const {
    for (std::size_t j = 0; j < channels_.size(); ++j) {
      if (channels_[j].attribute == a) return j;
    }
    return std::nullopt;
  }
  bool contains(Attribute a) const { return index_of(a).has_value(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : channels_) out.push_back(c.name);
    return out;
  }

  AttributeSchema without_group(ChannelGroup g) const {
    std::vector<Channel> kept;
    std::copy_if(channels_.begin(), channels_.end(), std::back_inserter(kept),
                 [g](const Channel& c) { return c.group != g; });
    return AttributeSchema(std::move(kept));
  }

  void set_vocab_size(std::size_t j, std::size_t v) { channels_.at(j).vocab_size = v; }

  bool operator==(const AttributeSchema&) const = default;

 private:
  std::vector<Channel> channels_;
};

// ---------------------------------------------------------------------------
// Raw interaction data

enum class EventKind : std::uint8_t { watchlist_click, page_view };

struct ItemAttributes {
  std::int64_t item_id = 0;
  std::int64_t seller_id = 0;
  std::int64_t condition = 0;
  std::int64_t level1_category = 0;
  std::int64_t leaf_category = 0;
  std::int64_t sale_type = 0;
  std::int64_t site_id = 0;
  double price = 0.0;

  bool operator==(const ItemAttributes&) const = default;
};

struct Event {
  EventKind kind = EventKind::page_view;
  std::int64_t timestamp = 0;  // seconds since the start of the log
  std::int64_t snapshot_id = 0;
  std::int64_t rsp = 0;  // position in the snapshot for clicks, 0 for page views
  ItemAttributes item;

  bool operator==(const Event&) const = default;
};

struct Candidate {
  ItemAttributes item;
  std::int64_t rsp = 0;  // 1 = most recently added to the watchlist
  int label = 0;

  bool operator==(const Candidate&) const = default;
};

enum class Split : std::uint8_t { unassigned, train, val, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(std::string_view name) {
  for (auto s : {Split::unassigned, Split::train, Split::val, Split::test}) {
    if (split_name(s) == name) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

/// One watchlist click task: the snapshot the user saw and everything they did
/// before it, oldest first.
struct WatchlistSample {
  std::int64_t user_id = 0;
  std::int64_t timestamp = 0;
  std::int64_t snapshot_id = 0;
  std::vector<Event> history;
  std::vector<Candidate> candidates;
  Split split = Split::unassigned;

  std::size_t clicked_index() const {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].label == 1) return i;
    }
    throw SchemaError("snapshot has no clicked candidate");
  }

  bool operator==(const WatchlistSample&) const = default;
};

}  // namespace trans2d::data
