#pragma once

// Run configuration: one JSON document with data / model / train / eval /
// paths sections. Every field has a default, unknown keys are rejected, and
// `--set a.b=value` overrides address fields by dotted path.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trans2d/data/preprocess.hpp"
#include "trans2d/data/schema.hpp"
#include "trans2d/data/synth.hpp"
#include "trans2d/errors.hpp"
#include "trans2d/model/model.hpp"
#include "trans2d/training/train.hpp"

namespace trans2d {

using nlohmann::json;

struct DataOptions {
  std::uint64_t seed = 7;
  std::size_t n_users = 2000;
  std::size_t n_items = 20000;
  std::int64_t days = 14;
  std::vector<std::string> attributes = data::AttributeSchema::default_schema().names();
  std::size_t price_bins = 100;
  std::int64_t max_days = 0;  // history age filter, 0 keeps everything
  bool drop_page_views = false;
  bool drop_clicks = false;
  bool drop_history = false;

  data::GeneratorConfig generator() const {
    data::GeneratorConfig g;
    g.seed = seed;
    g.n_users = n_users;
    g.days = days;
    g.catalog.n_items = n_items;
    return g;
  }
  data::AssemblyOptions assembly(std::size_t N) const {
    data::AssemblyOptions a;
    a.max_len = N;
    a.drop_page_views = drop_page_views;
    a.drop_clicks = drop_clicks;
    a.drop_history = drop_history;
    a.max_days = max_days;
    return a;
  }
  data::AttributeSchema schema() const { return data::AttributeSchema::from_names(attributes); }
};

struct EvalOptions {
  std::vector<std::size_t> cutoffs{1, 2, 5};
  std::string split = "test";
  std::size_t attention_block = 0;
};

struct PathOptions {
  std::string dataset = "data/watchlist.jsonl";
  std::string checkpoints = "runs/checkpoints";
  std::string reports = "runs/reports";
};

struct RunConfig {
  DataOptions data;
  model::Trans2DConfig model;
  train::TrainConfig train;
  EvalOptions eval;
  PathOptions paths;

  void validate() const {
    if (data.n_users < 1) throw ConfigError("data.n_users must be at least 1");
    if (data.days < 1) throw ConfigError("data.days must be at least 1");
    if (data.max_days < 0) throw ConfigError("data.max_days must be non-negative");
    if (data.price_bins < 1) throw ConfigError("data.price_bins must be at least 1");
    if (data.attributes.empty()) throw ConfigError("data.attributes must name at least one channel");
    (void)data.schema();
    if (std::set<std::string>(data.attributes.begin(), data.attributes.end()).size() != data.attributes.size()) {
      throw ConfigError("data.attributes lists a channel twice");
    }
    model.validate();
    train.validate();
    if (eval.cutoffs != std::vector<std::size_t>{1, 2, 5}) throw ConfigError("eval.cutoffs must be [1, 2, 5]");
    (void)data::split_from_name(eval.split);
    if (eval.attention_block >= model.L) throw ConfigError("eval.attention_block must be below model.L");
  }
};

namespace config_detail {

// Reads known keys of one object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <typename E, typename Parse>
  void read_enum(const char* key, E& out, Parse parse) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw ConfigError("config key '" + name_ + "." + key + "' must be a string");
    out = parse(it->template get<std::string>());
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!known_.count(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

}  // namespace config_detail

inline json to_json(const model::Trans2DConfig& m) {
  return {{"L", m.L},
          {"h", m.h},
          {"d", m.d},
          {"N", m.N},
          {"head_mode", model::to_string(m.head_mode)},
          {"use_AF", m.use_AF},
          {"use_AI", m.use_AI},
          {"use_AC", m.use_AC},
          {"linear_mode", model::to_string(m.linear_mode)},
          {"dropout_p", m.dropout_p},
          {"alpha_per_head", m.alpha_per_head},
          {"ln_eps", m.ln_eps},
          {"architecture", model::to_string(m.architecture)}};
}

inline void read_model(const json& j, model::Trans2DConfig& m, const std::string& name = "model") {
  config_detail::Section s(j, name);
  s.read("L", m.L);
  s.read("h", m.h);
  s.read("d", m.d);
  s.read("N", m.N);
  s.read_enum("head_mode", m.head_mode, model::head_mode_from);
  s.read("use_AF", m.use_AF);
  s.read("use_AI", m.use_AI);
  s.read("use_AC", m.use_AC);
  s.read_enum("linear_mode", m.linear_mode, model::linear_mode_from);
  s.read("dropout_p", m.dropout_p);
  s.read("alpha_per_head", m.alpha_per_head);
  s.read("ln_eps", m.ln_eps);
  s.read_enum("architecture", m.architecture, model::architecture_from);
  s.finish();
}

inline json to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"seed", c.data.seed},
               {"n_users", c.data.n_users},
               {"n_items", c.data.n_items},
               {"days", c.data.days},
               {"attributes", c.data.attributes},
               {"price_bins", c.data.price_bins},
               {"max_days", c.data.max_days},
               {"drop_page_views", c.data.drop_page_views},
               {"drop_clicks", c.data.drop_clicks},
               {"drop_history", c.data.drop_history}};
  j["model"] = to_json(c.model);
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"decay_factor", c.train.decay_factor},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"weight_decay", c.train.weight_decay},
                {"seed", c.train.seed}};
  j["eval"] = {{"cutoffs", c.eval.cutoffs}, {"split", c.eval.split}, {"attention_block", c.eval.attention_block}};
  j["paths"] = {{"dataset", c.paths.dataset}, {"checkpoints", c.paths.checkpoints}, {"reports", c.paths.reports}};
  return j;
}

/// Parses a full or partial document over the defaults.
inline RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k != "data" && k != "model" && k != "train" && k != "eval" && k != "paths") {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  if (j.contains("data")) {
    config_detail::Section s(j["data"], "data");
    s.read("seed", c.data.seed);
    s.read("n_users", c.data.n_users);
    s.read("n_items", c.data.n_items);
    s.read("days", c.data.days);
    s.read("attributes", c.data.attributes);
    s.read("price_bins", c.data.price_bins);
    s.read("max_days", c.data.max_days);
    s.read("drop_page_views", c.data.drop_page_views);
    s.read("drop_clicks", c.data.drop_clicks);
    s.read("drop_history", c.data.drop_history);
    s.finish();
  }
  if (j.contains("model")) read_model(j["model"], c.model);
  if (j.contains("train")) {
    config_detail::Section s(j["train"], "train");
    s.read("epochs", c.train.epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("lr", c.train.lr);
    s.read("decay_factor", c.train.decay_factor);
    s.read("beta1", c.train.beta1);
    s.read("beta2", c.train.beta2);
    s.read("adam_eps", c.train.adam_eps);
    s.read("weight_decay", c.train.weight_decay);
    s.read("seed", c.train.seed);
    s.finish();
  }
  if (j.contains("eval")) {
    config_detail::Section s(j["eval"], "eval");
    s.read("cutoffs", c.eval.cutoffs);
    s.read("split", c.eval.split);
    s.read("attention_block", c.eval.attention_block);
    s.finish();
  }
  if (j.contains("paths")) {
    config_detail::Section s(j["paths"], "paths");
    s.read("dataset", c.paths.dataset);
    s.read("checkpoints", c.paths.checkpoints);
    s.read("reports", c.paths.reports);
    s.finish();
  }
  c.validate();
  return c;
}

/// Applies "a.b.c=value". The value is read as JSON when it parses, otherwise
/// as a bare string. Only existing keys can be overridden.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

/// Defaults, then the optional file, then the overrides in order.
inline RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  json doc = to_json(RunConfig{});
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file " + file.string() + " is not valid JSON");
    (void)run_config_from_json(user);  // reports unknown keys by their own path
    doc.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace trans2d
