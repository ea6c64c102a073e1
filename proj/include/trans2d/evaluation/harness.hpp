#pragma once

// Experiment plumbing: dataset generation and preparation, single training
// runs, the ablation table, sensitivity sweeps and attention-map export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trans2d/config.hpp"
#include "trans2d/data/dataset_io.hpp"
#include "trans2d/data/preprocess.hpp"
#include "trans2d/data/synth.hpp"
#include "trans2d/evaluation/evaluate.hpp"
#include "trans2d/evaluation/metrics.hpp"
#include "trans2d/model/model.hpp"
#include "trans2d/training/train.hpp"

namespace trans2d::eval {

/// Generated log tagged with train / val / test over its nominal time axis.
inline data::Dataset generate_dataset(const data::GeneratorConfig& g) {
  data::Dataset ds;
  ds.samples = data::generate_user_history(g.seed, data::generate_catalog(g.seed, g.catalog), g);
  ds.time_range = std::make_pair(std::int64_t{0}, g.days * 86400);
  data::SplitConfig split;
  split.time_range = ds.time_range;
  data::split_dataset(ds.samples, split);
  return ds;
}

/// Encoded splits for one channel subset and history filter. The encoder is
/// fit on the training split only.
struct PreparedData {
  data::AttributeSchema schema;
  data::Encoder encoder;
  data::AssemblyOptions assembly;
  std::vector<data::WatchlistSample> raw[3];  // train, val, test
  std::vector<data::EncodedSnapshot> encoded[3];

  static std::size_t slot(data::Split s) {
    switch (s) {
      case data::Split::train: return 0;
      case data::Split::val: return 1;
      case data::Split::test: return 2;
      default: throw ConfigError("samples must be tagged train, val or test");
    }
  }
  const std::vector<data::EncodedSnapshot>& split(data::Split s) const { return encoded[slot(s)]; }
  const std::vector<data::WatchlistSample>& raw_split(data::Split s) const { return raw[slot(s)]; }
};

inline std::vector<data::EncodedSnapshot> encode_all(std::span<const data::WatchlistSample> samples,
                                                     const data::Encoder& enc, const data::AttributeSchema& schema,
                                                     const data::AssemblyOptions& opt) {
  std::vector<data::EncodedSnapshot> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(data::assemble_snapshot(s, enc, schema, opt));
  return out;
}

inline PreparedData prepare(const data::Dataset& ds, const DataOptions& opt, std::size_t N) {
  PreparedData p;
  for (const auto& s : ds.samples) p.raw[PreparedData::slot(s.split)].push_back(s);
  if (p.raw[0].empty()) throw ConfigError("training split is empty");
  p.encoder = data::Encoder::fit(p.raw[0], N, opt.price_bins);
  p.schema = p.encoder.schema_for(opt.schema());
  p.assembly = opt.assembly(N);
  for (std::size_t k = 0; k < 3; ++k) p.encoded[k] = encode_all(p.raw[k], p.encoder, p.schema, p.assembly);
  return p;
}

struct Experiment {
  model::Trans2DModel model;
  train::TrainResult training;
  MetricReport report;  // on cfg.eval.split
};

/// Trains cfg.model on the prepared splits and evaluates the result.
inline Experiment run_experiment(const RunConfig& cfg, const PreparedData& data, std::size_t threads,
                                 const train::EpochCallback& on_epoch = {}) {
  model::Trans2DModel m(cfg.model, data.schema, cfg.train.seed);
  auto tc = cfg.train;
  tc.threads = threads;
  auto log = train::train(m, data.split(data::Split::train), data.split(data::Split::val), tc, on_epoch);
  auto report = evaluate(m, data.split(data::split_from_name(cfg.eval.split)), resolve_threads(threads));
  return {std::move(m), std::move(log), report};
}

inline Experiment run_experiment(const RunConfig& cfg, const data::Dataset& ds, std::size_t threads,
                                 const train::EpochCallback& on_epoch = {}) {
  return run_experiment(cfg, prepare(ds, cfg.data, cfg.model.N), threads, on_epoch);
}

// ---------------------------------------------------------------------------
// Resumable CSV tables keyed by their first column(s).

class KeyedTable {
 public:
  KeyedTable(std::filesystem::path path, std::string header, std::size_t key_columns)
      : path_(std::move(path)), header_(std::move(header)), key_columns_(key_columns) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    if (!std::getline(in, line)) return;
    if (line != header_) throw SchemaError("existing table " + path_.string() + " has a different header");
    while (std::getline(in, line)) {
      if (!line.empty()) rows_[key_of(line)] = line;
    }
  }

  bool has(const std::string& key) const { return rows_.count(key) > 0; }
  const std::string& row(const std::string& key) const { return rows_.at(key); }

  /// Records a row and rewrites the file with rows in `order`.
  void put(const std::string& line, const std::vector<std::string>& order) {
    rows_[key_of(line)] = line;
    std::string out = header_ + "\n";
    for (const auto& k : order) {
      if (auto it = rows_.find(k); it != rows_.end()) out += it->second + "\n";
    }
    auto tmp = path_;
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) {
        throw std::filesystem::filesystem_error("cannot open for writing", tmp,
                                                std::make_error_code(std::errc::no_such_file_or_directory));
      }
      f << out;
    }
    std::filesystem::rename(tmp, path_);
  }

 private:
  std::string key_of(const std::string& line) const {
    std::size_t pos = 0;
    for (std::size_t c = 0; c < key_columns_; ++c) {
      pos = line.find(',', pos);
      if (pos == std::string::npos) return line;
      ++pos;
    }
    return line.substr(0, pos - 1);
  }

  std::filesystem::path path_;
  std::string header_;
  std::size_t key_columns_;
  std::map<std::string, std::string> rows_;
};

// ---------------------------------------------------------------------------
// Ablations

struct Ablation {
  std::string name;
  std::function<void(RunConfig&)> apply;
};

inline void drop_group(RunConfig& c, data::ChannelGroup g) {
  const auto kept = c.data.schema().without_group(g);
  if (kept.size() == 0) throw ConfigError("ablation removes every channel");
  c.data.attributes = kept.names();
}

/// Table rows in order. Each removes one component from the base config.
inline std::vector<Ablation> ablation_rows() {
  using data::ChannelGroup;
  return {
      {"full", [](RunConfig&) {}},
      {"-A^F", [](RunConfig& c) { c.model.use_AF = false; }},
      {"-A^C", [](RunConfig& c) { c.model.use_AC = false; }},
      {"-A^I", [](RunConfig& c) { c.model.use_AI = false; }},
      {"-Linear2D", [](RunConfig& c) { c.model.linear_mode = model::LinearMode::one_d; }},
      {"-RVI", [](RunConfig& c) { c.data.drop_page_views = true; }},
      {"-watchlist", [](RunConfig& c) { c.data.drop_clicks = true; }},
      {"-time", [](RunConfig& c) { drop_group(c, ChannelGroup::time); }},
      {"-item", [](RunConfig& c) { drop_group(c, ChannelGroup::item); }},
      {"-position", [](RunConfig& c) { drop_group(c, ChannelGroup::position); }},
      {"-history", [](RunConfig& c) { c.data.drop_history = true; }},
  };
}

inline std::string ablation_header() { return "ablation," + csv_header(); }

/// Runs every row not already present in `csv`. Returns the table rows.
inline std::vector<std::string> ablation_suite(const RunConfig& base, const data::Dataset& ds,
                                               const std::filesystem::path& csv, std::size_t threads,
                                               std::ostream* progress = nullptr) {
  const auto rows = ablation_rows();
  std::vector<std::string> order;
  for (const auto& r : rows) order.push_back(r.name);
  KeyedTable table(csv, ablation_header(), 1);
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (!table.has(r.name)) {
      RunConfig cfg = base;
      r.apply(cfg);
      cfg.validate();
      if (progress) *progress << "ablation " << r.name << "\n" << std::flush;
      const auto ex = run_experiment(cfg, ds, threads);
      table.put(r.name + "," + csv_row(ex.report), order);
    }
    out.push_back(table.row(r.name));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity

enum class SweepAxis { L, h, d, N, days };

inline SweepAxis sweep_axis_from(std::string_view s) {
  if (s == "L") return SweepAxis::L;
  if (s == "h") return SweepAxis::h;
  if (s == "d") return SweepAxis::d;
  if (s == "N") return SweepAxis::N;
  if (s == "days") return SweepAxis::days;
  throw ConfigError("sweep axis must be one of L, h, d, N, days; got '" + std::string(s) + "'");
}

inline void apply_axis(RunConfig& c, SweepAxis axis, std::int64_t value) {
  if (value < 1) throw ConfigError("sweep values must be positive");
  const auto v = static_cast<std::size_t>(value);
  switch (axis) {
    case SweepAxis::L: c.model.L = v; break;
    case SweepAxis::h: c.model.h = v; break;
    case SweepAxis::d: c.model.d = v; break;
    case SweepAxis::N: c.model.N = v; break;
    case SweepAxis::days: c.data.max_days = value; break;
  }
}

inline std::string sweep_header() { return "axis,value,model,ndcg5"; }

/// One NDCG@5 point per (value, architecture), resumable like the ablations.
inline std::vector<std::string> sensitivity_sweep(const RunConfig& base, const data::Dataset& ds,
                                                  std::string_view axis_name, const std::vector<std::int64_t>& values,
                                                  const std::vector<model::Architecture>& models,
                                                  const std::filesystem::path& csv, std::size_t threads,
                                                  std::ostream* progress = nullptr) {
  const auto axis = sweep_axis_from(axis_name);
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (models.empty()) throw ConfigError("sweep needs at least one model");
  auto key = [&](std::int64_t v, model::Architecture a) {
    return std::string(axis_name) + "," + std::to_string(v) + "," + std::string(model::to_string(a));
  };
  std::vector<std::string> order;
  for (auto v : values) {
    for (auto a : models) order.push_back(key(v, a));
  }
  KeyedTable table(csv, sweep_header(), 3);
  std::vector<std::string> out;
  for (auto v : values) {
    for (auto a : models) {
      const auto k = key(v, a);
      if (!table.has(k)) {
        RunConfig cfg = base;
        cfg.model.architecture = a;
        apply_axis(cfg, axis, v);
        cfg.eval.attention_block = 0;
        cfg.validate();
        if (progress) *progress << "sweep " << k << "\n" << std::flush;
        const auto ex = run_experiment(cfg, ds, threads);
        table.put(k + "," + format_metric(ex.report.ndcg5()), order);
      }
      out.push_back(table.row(k));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention maps

struct AttentionExport {
  std::vector<std::string> columns;  // target channels
  std::size_t rows = 0;              // history rows plus the candidate row
  std::vector<double> values;        // rows x columns, row-major
  double score = 0.0;
  double label = 0.0;
  std::size_t candidate = 0;
  std::size_t block = 0;

  double sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

/// Head- and query-channel-averaged attention of the candidate row over
/// every (row, channel) target.
inline AttentionExport extract_attention_map(const model::Trans2DModel& m, const data::EventSequence& seq,
                                             std::size_t block = 0) {
  AttentionExport ex;
  const auto map = m.candidate_attention_map(seq, block);
  ex.rows = map.dim(0);
  if (m.block_channels() == 1 && m.config().is_baseline()) {
    ex.columns = {"item"};
  } else {
    ex.columns = m.schema().names();
  }
  ex.values.assign(map.data().begin(), map.data().end());
  ad::NoGradScope no_grad;
  ex.score = m.predict_sequence(seq).item();
  ex.block = block;
  return ex;
}

/// Map for one candidate of one snapshot (the clicked candidate by default).
inline AttentionExport extract_attention_map(const model::Trans2DModel& m, const data::EncodedSnapshot& snap,
                                             std::optional<std::size_t> candidate, std::size_t block = 0) {
  std::size_t c = 0;
  if (candidate) {
    c = *candidate;
  } else {
    while (c < snap.labels.size() && snap.labels[c] <= 0.0) ++c;
    if (c == snap.labels.size()) c = 0;
  }
  auto ex = extract_attention_map(m, snap.sequence(c), block);
  ex.candidate = c;
  ex.label = snap.labels[c];
  return ex;
}

inline std::string attention_csv(const AttentionExport& ex) {
  std::string out = "row";
  for (const auto& c : ex.columns) out += "," + c;
  out += "\n";
  char buf[40];
  for (std::size_t i = 0; i < ex.rows; ++i) {
    out += i + 1 == ex.rows ? std::string("candidate") : "h" + std::to_string(i);
    for (std::size_t j = 0; j < ex.columns.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", ex.values[i * ex.columns.size() + j]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline nlohmann::json attention_sidecar(const AttentionExport& ex, std::size_t sample) {
  return {{"sample", sample},   {"candidate", ex.candidate}, {"block", ex.block}, {"score", ex.score},
          {"label", ex.label},  {"rows", ex.rows},           {"columns", ex.columns}};
}

}  // namespace trans2d::eval
