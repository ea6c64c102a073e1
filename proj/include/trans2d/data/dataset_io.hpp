#pragma once

// JSONL datasets. Line 1 is a header naming the format and the attribute
// channels carried by the events; each further line is one WatchlistSample.
//
//   item   = [item_id, seller_id, condition, level1, leaf, sale_type, site_id, price]
//   event  = [kind (0 click, 1 view), timestamp, snapshot_id, rsp, item]
//   sample = {"user", "time", "snapshot", "split", "history": [event...],
//             "candidates": [[item, rsp, label]...]}

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trans2d/data/schema.hpp"
#include "trans2d/errors.hpp"

namespace trans2d::data {

inline constexpr const char* kDatasetFormat = "trans2d-watchlist";
inline constexpr int kDatasetVersion = 1;

struct Dataset {
  AttributeSchema schema = AttributeSchema::default_schema();
  // Nominal time axis of the log, used by the time split.
  std::optional<std::pair<std::int64_t, std::int64_t>> time_range;
  std::vector<WatchlistSample> samples;

  bool operator==(const Dataset&) const = default;
};

namespace io_detail {

using nlohmann::json;

inline json item_to_json(const ItemAttributes& it) {
  return json::array({it.item_id, it.seller_id, it.condition, it.level1_category, it.leaf_category, it.sale_type,
                      it.site_id, it.price});
}

inline ItemAttributes item_from_json(const json& j) {
  if (!j.is_array() || j.size() != 8) throw std::invalid_argument("item must be an 8-element array");
  ItemAttributes it;
  it.item_id = j[0].get<std::int64_t>();
  it.seller_id = j[1].get<std::int64_t>();
  it.condition = j[2].get<std::int64_t>();
  it.level1_category = j[3].get<std::int64_t>();
  it.leaf_category = j[4].get<std::int64_t>();
  it.sale_type = j[5].get<std::int64_t>();
  it.site_id = j[6].get<std::int64_t>();
  it.price = j[7].get<double>();
  return it;
}

inline json sample_to_json(const WatchlistSample& s) {
  json history = json::array();
  for (const auto& e : s.history) {
    history.push_back(json::array({e.kind == EventKind::watchlist_click ? 0 : 1, e.timestamp, e.snapshot_id, e.rsp,
                                   item_to_json(e.item)}));
  }
  json candidates = json::array();
  for (const auto& c : s.candidates) candidates.push_back(json::array({item_to_json(c.item), c.rsp, c.label}));
  json j;
  j["user"] = s.user_id;
  j["time"] = s.timestamp;
  j["snapshot"] = s.snapshot_id;
  j["split"] = split_name(s.split);
  j["history"] = std::move(history);
  j["candidates"] = std::move(candidates);
  return j;
}

inline WatchlistSample sample_from_json(const json& j) {
  WatchlistSample s;
  s.user_id = j.at("user").get<std::int64_t>();
  s.timestamp = j.at("time").get<std::int64_t>();
  s.snapshot_id = j.at("snapshot").get<std::int64_t>();
  s.split = split_from_name(j.at("split").get<std::string>());
  for (const auto& e : j.at("history")) {
    if (!e.is_array() || e.size() != 5) throw std::invalid_argument("event must be a 5-element array");
    Event ev;
    const int kind = e[0].get<int>();
    if (kind != 0 && kind != 1) throw std::invalid_argument("event kind must be 0 or 1");
    ev.kind = kind == 0 ? EventKind::watchlist_click : EventKind::page_view;
    ev.timestamp = e[1].get<std::int64_t>();
    ev.snapshot_id = e[2].get<std::int64_t>();
    ev.rsp = e[3].get<std::int64_t>();
    ev.item = item_from_json(e[4]);
    s.history.push_back(ev);
  }
  for (const auto& c : j.at("candidates")) {
    if (!c.is_array() || c.size() != 3) throw std::invalid_argument("candidate must be a 3-element array");
    s.candidates.push_back({item_from_json(c[0]), c[1].get<std::int64_t>(), c[2].get<int>()});
  }
  return s;
}

}  // namespace io_detail

/// Writes to `path` through a temporary sibling and a rename.
inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw std::filesystem::filesystem_error("output directory does not exist", parent,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::filesystem::filesystem_error("cannot open for writing", tmp,
                                              std::make_error_code(std::errc::permission_denied));
    }
    nlohmann::json header;
    header["format"] = kDatasetFormat;
    header["version"] = kDatasetVersion;
    header["attributes"] = ds.schema.names();
    if (ds.time_range) header["time_range"] = {ds.time_range->first, ds.time_range->second};
    out << header.dump() << '\n';
    for (const auto& s : ds.samples) out << io_detail::sample_to_json(s).dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Reads a dataset. When `expected` is given the header's attribute list must
/// match it exactly.
inline Dataset load_dataset(const std::filesystem::path& path, const AttributeSchema* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::filesystem::filesystem_error("cannot open dataset", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!have_header) {
      have_header = true;
      try {
        if (j.at("format").get<std::string>() != kDatasetFormat) throw SchemaError("not a watchlist dataset");
        if (j.at("version").get<int>() != kDatasetVersion) throw SchemaError("unsupported dataset version");
        ds.schema = AttributeSchema::from_names(j.at("attributes").get<std::vector<std::string>>());
        if (j.contains("time_range")) {
          ds.time_range = std::make_pair(j["time_range"][0].get<std::int64_t>(), j["time_range"][1].get<std::int64_t>());
        }
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad header: ") + e.what(), line_no);
      } catch (const ConfigError& e) {
        throw SchemaError(e.what());
      }
      if (expected != nullptr && ds.schema.names() != expected->names()) {
        throw SchemaError("dataset channels do not match the requested schema");
      }
      continue;
    }
    try {
      ds.samples.push_back(io_detail::sample_from_json(j));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return ds;
}

}  // namespace trans2d::data
