// trans2d: data generation, training, evaluation, ablations, sweeps,
// gradient checks and attention export from one config file.
//
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trans2d/checkpoint.hpp"
#include "trans2d/config.hpp"
#include "trans2d/data/dataset_io.hpp"
#include "trans2d/data/synth.hpp"
#include "trans2d/evaluation/evaluate.hpp"
#include "trans2d/evaluation/harness.hpp"
#include "trans2d/parallel.hpp"
#include "trans2d/training/gradcheck.hpp"
#include "trans2d/training/train.hpp"

namespace fs = std::filesystem;
using namespace trans2d;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t threads = 0;

  RunConfig load() const {
    (void)workers();  // reject a bad TRANS2D_THREADS before any work
    return load_run_config(config, overrides);
  }
  std::size_t workers() const { return resolve_threads(threads); }
};

void write_text(const fs::path& path, const std::string& text) {
  const auto parent = path.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw fs::filesystem_error("cannot open for writing", tmp, std::make_error_code(std::errc::io_error));
    out << text;
  }
  fs::rename(tmp, path);
}

std::string or_default(const std::string& given, const std::string& fallback) {
  return given.empty() ? fallback : given;
}

nlohmann::json report_json(const eval::MetricReport& r, const std::string& model, const std::string& split) {
  nlohmann::json metrics = nlohmann::json::object();
  const auto cols = eval::MetricReport::columns();
  const auto row = r.row();
  for (std::size_t i = 0; i < cols.size(); ++i) metrics[cols[i]] = row[i];
  return {{"model", model}, {"split", split}, {"snapshots", r.snapshots}, {"metrics", metrics}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Globals& g, const std::string& out_arg) {
  const auto cfg = g.load();
  const fs::path out = or_default(out_arg, cfg.paths.dataset);
  const auto ds = eval::generate_dataset(cfg.data.generator());
  data::save_dataset(out, ds);
  const auto s = data::summarize(ds.samples);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& x : ds.samples) ++counts[eval::PreparedData::slot(x.split)];
  std::printf("dataset %s\n", out.string().c_str());
  std::printf("users %zu\nsamples %zu\nevents %zu\nclicks %zu\n", s.users, s.samples, s.events, s.clicks);
  std::printf("mean_snapshot_size %.4f\nmean_history_length %.4f\n", s.mean_snapshot_size, s.mean_history_length);
  std::printf("train %zu\nval %zu\ntest %zu\n", counts[0], counts[1], counts[2]);
  return 0;
}

int cmd_train(const Globals& g, const std::string& dataset_arg, const std::string& out_arg) {
  const auto cfg = g.load();
  const fs::path dir = or_default(out_arg, cfg.paths.checkpoints);
  const auto ds = data::load_dataset(or_default(dataset_arg, cfg.paths.dataset));
  fs::create_directories(dir);
  const auto prepared = eval::prepare(ds, cfg.data, cfg.model.N);
  std::printf("train %zu val %zu snapshots, %zu channels\n", prepared.split(data::Split::train).size(),
              prepared.split(data::Split::val).size(), prepared.schema.size());

  model::Trans2DModel m(cfg.model, prepared.schema, cfg.train.seed);
  auto tc = cfg.train;
  tc.threads = g.workers();
  std::string log = train::log_csv_header() + "\n";
  const auto result =
      train::train(m, prepared.split(data::Split::train), prepared.split(data::Split::val), tc,
                   [&](const train::EpochLog& e, const model::Trans2DModel& state) {
                     save_checkpoint(dir / ("epoch_" + std::to_string(e.epoch) + ".json"), state, prepared.encoder,
                                     cfg.data, e.epoch);
                     log += train::log_csv_row(e) + "\n";
                     write_text(dir / "train_log.csv", log);
                     std::printf("epoch %zu lr %g train_loss %.6f val_ndcg5 %.6f\n", e.epoch, e.lr, e.train_loss,
                                 e.val_ndcg5);
                     std::fflush(stdout);
                   });
  save_checkpoint(dir / "final.json", m, prepared.encoder, cfg.data, cfg.train.epochs);
  std::printf("steps %zu\ncheckpoint %s\n", result.steps, (dir / "final.json").string().c_str());
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& baseline,
             const std::string& dataset_arg, const std::string& split_arg, const std::string& out_arg) {
  auto cfg = g.load();
  if (checkpoint.empty() == baseline.empty()) {
    throw ConfigError("eval needs exactly one of --checkpoint or --baseline");
  }
  const std::string split_name = or_default(split_arg, cfg.eval.split);
  const auto split = data::split_from_name(split_name);
  const auto ds = data::load_dataset(or_default(dataset_arg, cfg.paths.dataset));

  eval::MetricReport report;
  std::string tag;
  if (!checkpoint.empty()) {
    const auto ck = load_checkpoint(checkpoint);
    std::vector<data::WatchlistSample> samples = data::filter_split(ds.samples, split);
    const auto encoded = eval::encode_all(samples, ck.encoder, ck.model.schema(),
                                          ck.data.assembly(ck.model.config().N));
    report = eval::evaluate(ck.model, encoded, g.workers());
    tag = fs::path(checkpoint).stem().string();
  } else if (auto sb = eval::static_baseline_from(baseline)) {
    const auto samples = data::filter_split(ds.samples, split);
    report = eval::evaluate(samples, *sb);
    tag = baseline;
  } else if (baseline == "trans1d-avg" || baseline == "trans1d-concat") {
    cfg.model.architecture = model::architecture_from(baseline);
    cfg.eval.split = split_name;
    report = eval::run_experiment(cfg, ds, g.workers()).report;
    tag = baseline;
  } else {
    throw ConfigError("unknown baseline '" + baseline +
                      "'; valid names: rsp, price-desc, price-asc, trans1d-avg, trans1d-concat");
  }

  const fs::path out = or_default(out_arg, (fs::path(cfg.paths.reports) / ("eval_" + tag + "_" + split_name + ".csv")).string());
  const std::string csv = eval::csv_header() + "\n" + eval::csv_row(report) + "\n";
  write_text(out, csv);
  auto json_path = out;
  json_path.replace_extension(".json");
  write_text(json_path, report_json(report, tag, split_name).dump(2) + "\n");
  std::printf("%s", csv.c_str());
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& dataset_arg, const std::string& out_arg) {
  const auto cfg = g.load();
  const auto ds = data::load_dataset(or_default(dataset_arg, cfg.paths.dataset));
  const fs::path out = or_default(out_arg, (fs::path(cfg.paths.reports) / "ablation.csv").string());
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  const auto rows = eval::ablation_suite(cfg, ds, out, g.workers(), &std::cerr);
  std::printf("%s\n", eval::ablation_header().c_str());
  for (const auto& r : rows) std::printf("%s\n", r.c_str());
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& dataset_arg, const std::string& axis,
              const std::vector<std::int64_t>& values, const std::vector<std::string>& model_names,
              const std::string& out_arg) {
  const auto cfg = g.load();
  (void)eval::sweep_axis_from(axis);
  std::vector<model::Architecture> models;
  for (const auto& n : model_names) models.push_back(model::architecture_from(n));
  const auto ds = data::load_dataset(or_default(dataset_arg, cfg.paths.dataset));
  const fs::path out = or_default(out_arg, (fs::path(cfg.paths.reports) / ("sweep_" + axis + ".csv")).string());
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  const auto rows = eval::sensitivity_sweep(cfg, ds, axis, values, models, out, g.workers(), &std::cerr);
  std::printf("%s\n", eval::sweep_header().c_str());
  for (const auto& r : rows) std::printf("%s\n", r.c_str());
  return 0;
}

int cmd_grad_check(const Globals& g, std::uint64_t seed, double h) {
  const auto cfg = g.load();
  const auto r = train::run_grad_check(seed, h, {}, cfg.model);
  std::printf("coordinates %zu\nmax_rel_error %.3e\nworst %s[%zu]\n%s\n", r.coordinates, r.max_rel_error,
              r.worst_parameter.c_str(), r.worst_coordinate, r.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : 1;
}

int cmd_attn_export(const Globals& g, const std::string& checkpoint, const std::string& dataset_arg,
                    const std::string& split_arg, std::size_t sample, std::optional<std::size_t> candidate,
                    std::size_t block, const std::string& out_arg) {
  const auto cfg = g.load();
  const std::string split_name = or_default(split_arg, cfg.eval.split);
  const auto ck = load_checkpoint(checkpoint);
  const auto ds = data::load_dataset(or_default(dataset_arg, cfg.paths.dataset));
  const auto samples = data::filter_split(ds.samples, data::split_from_name(split_name));
  if (sample >= samples.size()) {
    throw std::out_of_range("sample index " + std::to_string(sample) + " out of range; split '" + split_name +
                            "' has " + std::to_string(samples.size()) + " samples");
  }
  const auto snap = data::assemble_snapshot(samples[sample], ck.encoder, ck.model.schema(),
                                            ck.data.assembly(ck.model.config().N));
  if (candidate && *candidate >= snap.n_candidates) {
    throw std::out_of_range("candidate index " + std::to_string(*candidate) + " out of range; snapshot has " +
                            std::to_string(snap.n_candidates) + " candidates");
  }
  const auto ex = eval::extract_attention_map(ck.model, snap, candidate, block);
  const fs::path out = or_default(
      out_arg, (fs::path(cfg.paths.reports) / ("attention_" + split_name + "_" + std::to_string(sample) + ".csv")).string());
  write_text(out, eval::attention_csv(ex));
  auto side = out;
  side.replace_extension(".json");
  auto meta = eval::attention_sidecar(ex, sample);
  meta["split"] = split_name;
  write_text(side, meta.dump(2) + "\n");
  std::printf("map %zu x %zu, sum %.12f, score %.6f, label %g\n%s\n", ex.rows, ex.columns.size(), ex.sum(), ex.score,
              ex.label, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-aware watchlist recommender: data, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config, "Run config JSON (defaults apply when omitted)");
  app.add_option("--set", g.overrides, "Override a config value, e.g. --set train.epochs=2")->take_all();
  app.add_option("--threads", g.threads, "Worker threads (TRANS2D_THREADS when unset)");

  std::string out, dataset, checkpoint, baseline, split, axis;
  std::vector<std::int64_t> values;
  std::vector<std::string> models{"trans2d"};
  std::uint64_t seed = 1;
  double step = 1e-5;
  std::size_t sample = 0, block = 0;
  std::optional<std::size_t> candidate;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic watchlist dataset");
  gen->add_option("-o,--out", out, "Dataset path (paths.dataset)");

  auto* tr = app.add_subcommand("train", "Train and write per-epoch checkpoints and a log");
  tr->add_option("-d,--dataset", dataset, "Dataset path (paths.dataset)");
  tr->add_option("-o,--out", out, "Checkpoint directory (paths.checkpoints)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)");
  ev->add_option("--baseline", baseline, "rsp, price-desc, price-asc, trans1d-avg or trans1d-concat");
  ev->add_option("-d,--dataset", dataset, "Dataset path (paths.dataset)");
  ev->add_option("--split", split, "train, val or test (eval.split)");
  ev->add_option("-o,--out", out, "Report CSV; a JSON copy is written next to it");

  auto* ab = app.add_subcommand("ablate", "Run the ablation table (resumable)");
  ab->add_option("-d,--dataset", dataset, "Dataset path (paths.dataset)");
  ab->add_option("-o,--out", out, "Table CSV");

  auto* sw = app.add_subcommand("sweep", "Sensitivity sweep over one hyperparameter (resumable)");
  sw->add_option("-d,--dataset", dataset, "Dataset path (paths.dataset)");
  sw->add_option("--axis", axis, "L, h, d, N or days")->required();
  sw->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sw->add_option("--models", models, "Architectures to compare")->delimiter(',');
  sw->add_option("-o,--out", out, "Table CSV");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check on a toy model");
  gc->add_option("--seed", seed, "Model and input seed");
  gc->add_option("--step", step, "Central difference step");

  auto* at = app.add_subcommand("attn-export", "Export a candidate attention map as CSV");
  at->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)")->required();
  at->add_option("-d,--dataset", dataset, "Dataset path (paths.dataset)");
  at->add_option("--split", split, "train, val or test (eval.split)");
  at->add_option("--sample", sample, "Sample index within the split")->required();
  at->add_option("--candidate", candidate, "Candidate index (default: the clicked one)");
  at->add_option("--block", block, "Attention block");
  at->add_option("-o,--out", out, "Map CSV; the sidecar JSON goes next to it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(g, out);
    if (*tr) return cmd_train(g, dataset, out);
    if (*ev) return cmd_eval(g, checkpoint, baseline, dataset, split, out);
    if (*ab) return cmd_ablate(g, dataset, out);
    if (*sw) return cmd_sweep(g, dataset, axis, values, models, out);
    if (*gc) return cmd_grad_check(g, seed, step);
    if (*at) return cmd_attn_export(g, checkpoint, dataset, split, sample, candidate, block, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const EncodingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "index error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
