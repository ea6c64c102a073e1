#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "toy.hpp"
#include "trans2d/evaluation/evaluate.hpp"
#include "trans2d/evaluation/harness.hpp"
#include "trans2d/evaluation/metrics.hpp"

using namespace trans2d;
using eval::Metric;
using eval::RankedSnapshot;
namespace fs = std::filesystem;

namespace {

// Position of every candidate by counting who beats it: a higher score, or
// an equal score at a lower index.
std::vector<std::size_t> brute_positions(const RankedSnapshot& r) {
  std::vector<std::size_t> pos(r.scores.size(), 0);
  for (std::size_t a = 0; a < r.scores.size(); ++a) {
    for (std::size_t b = 0; b < r.scores.size(); ++b) {
      if (r.scores[b] > r.scores[a] || (r.scores[b] == r.scores[a] && b < a)) ++pos[a];
    }
  }
  return pos;
}

struct BruteMetrics {
  double precision, hit, ndcg;
};

BruteMetrics brute(const RankedSnapshot& r, std::size_t k) {
  const auto pos = brute_positions(r);
  // Relevance by position, then the same left-to-right sums as a textbook
  // DCG so that float results agree exactly.
  std::vector<double> rel_at(r.scores.size(), 0.0);
  std::size_t relevant = 0;
  for (std::size_t a = 0; a < pos.size(); ++a) {
    if (r.labels[a] > 0) {
      rel_at[pos[a]] = 1.0;
      ++relevant;
    }
  }
  double hits = 0.0, dcg = 0.0, idcg = 0.0;
  for (std::size_t p = 0; p < std::min(k, rel_at.size()); ++p) {
    hits += rel_at[p];
    dcg += rel_at[p] / std::log2(static_cast<double>(p) + 2.0);
  }
  for (std::size_t p = 0; p < std::min(k, relevant); ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return {hits / static_cast<double>(k), hits > 0 ? 1.0 : 0.0, idcg > 0 ? dcg / idcg : 0.0};
}

RankedSnapshot random_snapshot(Rng& rng, bool ties) {
  RankedSnapshot r;
  const std::size_t m = 1 + rng.index(15);
  for (std::size_t i = 0; i < m; ++i) r.scores.push_back(ties ? static_cast<double>(rng.index(4)) : rng.uniform());
  r.labels.assign(m, 0.0);
  r.labels[rng.index(m)] = 1.0;
  return r;
}

RankedSnapshot clicked_at(std::size_t rank, std::size_t m) {
  RankedSnapshot r;
  for (std::size_t i = 0; i < m; ++i) r.scores.push_back(static_cast<double>(m - i));
  r.labels.assign(m, 0.0);
  r.labels[rank - 1] = 1.0;
  return r;
}

data::Dataset tiny_dataset() {
  data::GeneratorConfig g;
  g.n_users = 120;
  g.catalog.n_items = 1000;
  return eval::generate_dataset(g);
}

RunConfig tiny_config() {
  RunConfig c;
  c.model.L = 1;
  c.model.h = 2;
  c.model.d = 4;
  c.model.N = 10;
  c.train.epochs = 1;
  return c;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("trans2d_eval_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Precision, Examples) {
  EXPECT_DOUBLE_EQ(eval::precision_at_k(clicked_at(1, 10), 5), 0.2);
  EXPECT_DOUBLE_EQ(eval::precision_at_k(clicked_at(6, 10), 5), 0.0);
  EXPECT_DOUBLE_EQ(eval::precision_at_k(clicked_at(1, 10), 1), 1.0);
}

TEST(Precision, DenominatorStaysKForShortSnapshots) {
  EXPECT_DOUBLE_EQ(eval::precision_at_k(clicked_at(1, 3), 5), 0.2);
}

TEST(Hit, Examples) {
  EXPECT_EQ(eval::hit_at_k(clicked_at(2, 10), 2), 1.0);
  EXPECT_EQ(eval::hit_at_k(clicked_at(3, 10), 2), 0.0);
  for (std::size_t k : {1, 2, 5}) EXPECT_EQ(eval::hit_at_k(clicked_at(1, 1), k), 1.0);
}

TEST(Ndcg, Examples) {
  EXPECT_DOUBLE_EQ(eval::ndcg_at_k(clicked_at(1, 10), 5), 1.0);
  EXPECT_NEAR(eval::ndcg_at_k(clicked_at(2, 10), 2), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(eval::ndcg_at_k(clicked_at(2, 10), 2), 0.6309, 1e-4);
  EXPECT_EQ(eval::ndcg_at_k(clicked_at(3, 10), 2), 0.0);
}

TEST(Metrics, TiesBreakByCandidateIndex) {
  RankedSnapshot r{{0.5, 0.5, 0.5}, {0, 1, 0}};
  EXPECT_EQ(r.ranking(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(eval::hit_at_k(r, 1), 0.0);
  EXPECT_EQ(eval::hit_at_k(r, 2), 1.0);
}

TEST(Metrics, BadInputs) {
  RankedSnapshot r{{0.1, 0.2}, {1.0}};
  EXPECT_THROW(eval::precision_at_k(r, 1), DimensionError);
  EXPECT_THROW(eval::ndcg_at_k(clicked_at(1, 3), 0), std::invalid_argument);
}

TEST(Metrics, MatchBruteForceExactly) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto r = random_snapshot(rng, t % 2 == 0);
    for (std::size_t k : {1, 2, 5}) {
      const auto b = brute(r, k);
      EXPECT_EQ(eval::precision_at_k(r, k), b.precision);
      EXPECT_EQ(eval::hit_at_k(r, k), b.hit);
      EXPECT_EQ(eval::ndcg_at_k(r, k), b.ndcg);
    }
  }
}

TEST(Metrics, AllThreeAgreeAtOne) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const auto r = random_snapshot(rng, t % 3 == 0);
    const double p = eval::precision_at_k(r, 1);
    EXPECT_EQ(p, eval::hit_at_k(r, 1));
    EXPECT_EQ(p, eval::ndcg_at_k(r, 1));
  }
}

TEST(Metrics, InvariantUnderMonotoneTransforms) {
  Rng rng(8);
  for (int t = 0; t < 300; ++t) {
    auto r = random_snapshot(rng, t % 2 == 0);
    auto s = r;
    for (auto& x : s.scores) x = std::exp(3.0 * x) - 7.0;
    for (std::size_t k : {1, 2, 5}) {
      EXPECT_EQ(eval::precision_at_k(r, k), eval::precision_at_k(s, k));
      EXPECT_EQ(eval::ndcg_at_k(r, k), eval::ndcg_at_k(s, k));
      EXPECT_EQ(eval::hit_at_k(r, k), eval::hit_at_k(s, k));
    }
  }
}

TEST(Metrics, MonotoneInK) {
  Rng rng(9);
  for (int t = 0; t < 300; ++t) {
    const auto r = random_snapshot(rng, false);
    for (std::size_t k = 1; k < 16; ++k) {
      EXPECT_LE(eval::hit_at_k(r, k), eval::hit_at_k(r, k + 1));
      EXPECT_LE(eval::ndcg_at_k(r, k), eval::ndcg_at_k(r, k + 1));
      EXPECT_LE(eval::precision_at_k(r, k) * k, eval::precision_at_k(r, k + 1) * (k + 1) + 1e-12);
    }
  }
}

TEST(Summary, MeansOverSnapshotsAndColumnLayout) {
  std::vector<RankedSnapshot> rs{clicked_at(1, 5), clicked_at(2, 5), clicked_at(6, 8)};
  const auto rep = eval::summarize(rs);
  EXPECT_EQ(rep.snapshots, 3u);
  EXPECT_DOUBLE_EQ(rep.get(Metric::hit, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.get(Metric::precision, 1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.ndcg5(), (1.0 + 1.0 / std::log2(3.0)) / 3.0);
  EXPECT_EQ(eval::csv_header(), "P@1,P@2,P@5,HIT@2,HIT@5,NDCG@2,NDCG@5");
  EXPECT_EQ(rep.row().size(), 7u);
  EXPECT_THROW(rep.get(Metric::ndcg, 3), std::invalid_argument);
  for (double v : rep.row()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Summary, EmptySplitIsAnError) {
  EXPECT_THROW(eval::summarize(std::vector<RankedSnapshot>{}), ConfigError);
}

TEST(Summary, PerfectScorer) {
  Rng rng(3);
  std::vector<RankedSnapshot> rs;
  for (int t = 0; t < 100; ++t) {
    auto r = random_snapshot(rng, false);
    r.scores = r.labels;
    rs.push_back(r);
  }
  EXPECT_EQ(eval::summarize(rs).ndcg5(), 1.0);
}

TEST(Summary, UniformRandomScorerPrecisionAtOne) {
  Rng rng(77);
  std::vector<RankedSnapshot> rs;
  for (int t = 0; t < 20000; ++t) {
    RankedSnapshot r;
    for (int i = 0; i < 10; ++i) r.scores.push_back(rng.uniform());
    r.labels.assign(10, 0.0);
    r.labels[rng.index(10)] = 1.0;
    rs.push_back(r);
  }
  // Binomial(20000, 0.1): sd of the mean is 0.0021.
  EXPECT_NEAR(eval::summarize(rs).get(Metric::precision, 1), 0.1, 4 * 0.0021);
}

TEST(Summary, FormatsSixDecimals) {
  EXPECT_EQ(eval::format_metric(0.25), "0.250000");
  EXPECT_EQ(eval::format_metric(1.0 / 3.0), "0.333333");
}

// ---------------------------------------------------------------------------
// Static baselines

TEST(StaticBaselines, ScoresFollowTheSortKey) {
  data::WatchlistSample s;
  for (int i = 0; i < 3; ++i) {
    data::Candidate c;
    c.rsp = 3 - i;
    c.item.price = 10.0 * (i + 1);
    s.candidates.push_back(c);
  }
  s.candidates[0].label = 1;
  using eval::StaticBaseline;
  RankedSnapshot rsp{eval::static_scores(s, StaticBaseline::rsp), eval::labels_of(s)};
  EXPECT_EQ(rsp.ranking(), (std::vector<std::size_t>{2, 1, 0}));
  RankedSnapshot desc{eval::static_scores(s, StaticBaseline::price_desc), eval::labels_of(s)};
  EXPECT_EQ(desc.ranking(), (std::vector<std::size_t>{2, 1, 0}));
  RankedSnapshot asc{eval::static_scores(s, StaticBaseline::price_asc), eval::labels_of(s)};
  EXPECT_EQ(asc.ranking(), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(StaticBaselines, NamesRoundTrip) {
  for (auto b : {eval::StaticBaseline::rsp, eval::StaticBaseline::price_desc, eval::StaticBaseline::price_asc}) {
    EXPECT_EQ(eval::static_baseline_from(eval::to_string(b)), b);
  }
  EXPECT_FALSE(eval::static_baseline_from("gru").has_value());
}

TEST(StaticBaselines, RspBeatsRandomOnGeneratedData) {
  data::GeneratorConfig g;
  g.n_users = 600;
  g.catalog.n_items = 3000;
  const auto ds = eval::generate_dataset(g);
  const auto test = data::filter_split(ds.samples, data::Split::test);
  const double rsp = eval::evaluate(test, eval::StaticBaseline::rsp).ndcg5();
  Rng rng(1);
  std::vector<RankedSnapshot> random;
  for (const auto& s : test) {
    RankedSnapshot r{{}, eval::labels_of(s)};
    for (std::size_t i = 0; i < s.candidates.size(); ++i) r.scores.push_back(rng.uniform());
    random.push_back(r);
  }
  EXPECT_GT(rsp, eval::summarize(random).ndcg5() + 0.02);
}

TEST(StaticBaselines, EmptySplit) {
  EXPECT_THROW(eval::evaluate(std::vector<data::WatchlistSample>{}, eval::StaticBaseline::rsp), ConfigError);
}

// ---------------------------------------------------------------------------
// Model evaluation

TEST(ModelEvaluation, MatchesPerSnapshotScoring) {
  const auto s = toy::schema(3);
  model::Trans2DConfig cfg;
  cfg.h = 2;
  cfg.d = 4;
  cfg.N = 8;
  model::Trans2DModel m(cfg, s, 3);
  Rng rng(4);
  std::vector<data::EncodedSnapshot> snaps;
  for (int i = 0; i < 30; ++i) snaps.push_back(toy::snapshot(rng, s, rng.index(7), 1 + rng.index(6)));
  const auto ranked = eval::rank_with_model(m, snaps, 1);
  std::vector<RankedSnapshot> manual;
  for (const auto& sn : snaps) {
    const auto sc = m.score_snapshot(sn);
    manual.push_back({{sc.data().begin(), sc.data().end()}, sn.labels});
  }
  EXPECT_EQ(eval::summarize(ranked), eval::summarize(manual));
  EXPECT_EQ(eval::evaluate(m, snaps, 1), eval::evaluate(m, snaps, 4));
  EXPECT_THROW(eval::evaluate(m, std::vector<data::EncodedSnapshot>{}), ConfigError);
}

// ---------------------------------------------------------------------------
// Data preparation

TEST(Prepare, EncoderSeesTrainingSplitOnly) {
  const auto ds = tiny_dataset();
  const auto p = eval::prepare(ds, DataOptions{}, 10);
  const auto train = data::filter_split(ds.samples, data::Split::train);
  EXPECT_EQ(p.encoder, data::Encoder::fit(train, 10, 100));
  EXPECT_EQ(p.split(data::Split::train).size(), train.size());
  EXPECT_EQ(p.split(data::Split::test).size(), data::filter_split(ds.samples, data::Split::test).size());
  EXPECT_EQ(p.schema.size(), 16u);
}

TEST(Prepare, HistoryAblationLeavesOnlyTheCandidate) {
  DataOptions opt;
  opt.drop_history = true;
  const auto p = eval::prepare(tiny_dataset(), opt, 10);
  for (const auto& s : p.split(data::Split::train)) EXPECT_EQ(s.n_history, 0u);
}

// ---------------------------------------------------------------------------
// Ablations

TEST(Ablation, ElevenRowsInTableOrder) {
  std::vector<std::string> names;
  for (const auto& r : eval::ablation_rows()) names.push_back(r.name);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "-A^F", "-A^C", "-A^I", "-Linear2D", "-RVI", "-watchlist", "-time",
                                             "-item", "-position", "-history"}));
}

TEST(Ablation, PositionRowRemovesExactlyThePositionalChannels) {
  RunConfig c;
  for (const auto& r : eval::ablation_rows()) {
    if (r.name == "-position") r.apply(c);
  }
  std::set<std::string> removed;
  for (const auto& n : data::AttributeSchema::default_schema().names()) {
    if (std::find(c.data.attributes.begin(), c.data.attributes.end(), n) == c.data.attributes.end()) removed.insert(n);
  }
  EXPECT_EQ(removed, (std::set<std::string>{"position-ID", "relative-snapshot-position", "snapshot-ID", "hash-item-ID",
                                            "hash-seller-ID"}));
}

TEST(Ablation, RowsChangeOnlyTheirComponent) {
  const RunConfig base;
  for (const auto& r : eval::ablation_rows()) {
    RunConfig c = base;
    r.apply(c);
    c.validate();
    const bool model_changed = to_json(c)["model"] != to_json(base)["model"];
    const bool data_changed = to_json(c)["data"] != to_json(base)["data"];
    if (r.name == "full") {
      EXPECT_FALSE(model_changed || data_changed);
    } else {
      EXPECT_TRUE(model_changed != data_changed) << r.name;
    }
    EXPECT_EQ(to_json(c)["train"], to_json(base)["train"]);
  }
}

TEST(Ablation, SuiteWritesElevenRowsAndResumes) {
  TempDir dir;
  const auto ds = tiny_dataset();
  const auto cfg = tiny_config();
  const auto csv = dir.path / "ablation.csv";
  std::ostringstream log1;
  const auto rows = eval::ablation_suite(cfg, ds, csv, 1, &log1);
  ASSERT_EQ(rows.size(), 11u);
  const auto first = slurp(csv);
  EXPECT_EQ(first.substr(0, first.find('\n')), eval::ablation_header());

  // The full row is a plain training run.
  EXPECT_EQ(rows[0], "full," + eval::csv_row(eval::run_experiment(cfg, ds, 1).report));

  std::ostringstream log2;
  eval::ablation_suite(cfg, ds, csv, 1, &log2);
  EXPECT_TRUE(log2.str().empty());
  EXPECT_EQ(slurp(csv), first);

  // Drop the last two rows; only they are recomputed.
  std::string truncated = first;
  for (int i = 0; i < 2; ++i) truncated.erase(truncated.rfind('\n', truncated.size() - 2) + 1);
  {
    std::ofstream out(csv, std::ios::binary | std::ios::trunc);
    out << truncated;
  }
  std::ostringstream log3;
  eval::ablation_suite(cfg, ds, csv, 1, &log3);
  EXPECT_EQ(log3.str(), "ablation -position\nablation -history\n");
  EXPECT_EQ(slurp(csv), first);
}

TEST(Ablation, ForeignHeaderIsRejected) {
  TempDir dir;
  const auto csv = dir.path / "t.csv";
  {
    std::ofstream out(csv);
    out << "something,else\n";
  }
  EXPECT_THROW(eval::ablation_suite(tiny_config(), tiny_dataset(), csv, 1), SchemaError);
}

// ---------------------------------------------------------------------------
// Sweeps

TEST(Sweep, OnePointPerValueAndDeterministic) {
  TempDir dir;
  const auto ds = tiny_dataset();
  const auto rows = eval::sensitivity_sweep(tiny_config(), ds, "L", {1, 2}, {model::Architecture::trans2d},
                                            dir.path / "a.csv", 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("L,1,trans2d,", 0), 0u);
  EXPECT_EQ(rows[1].rfind("L,2,trans2d,", 0), 0u);
  eval::sensitivity_sweep(tiny_config(), ds, "L", {1, 2}, {model::Architecture::trans2d}, dir.path / "b.csv", 1);
  EXPECT_EQ(slurp(dir.path / "a.csv"), slurp(dir.path / "b.csv"));
}

TEST(Sweep, ComparisonModelsGetTheirOwnRows) {
  TempDir dir;
  const auto rows = eval::sensitivity_sweep(tiny_config(), tiny_dataset(), "h", {1},
                                            {model::Architecture::trans2d, model::Architecture::trans1d_avg},
                                            dir.path / "s.csv", 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[1].find("trans1d-avg"), std::string::npos);
}

TEST(Sweep, DaysAxisFiltersHistoryByAge) {
  RunConfig c;
  eval::apply_axis(c, eval::SweepAxis::days, 1);
  EXPECT_EQ(c.data.max_days, 1);
  const auto ds = tiny_dataset();
  const auto p = eval::prepare(ds, c.data, 50);
  const auto& raw = p.raw_split(data::Split::train);
  const auto& enc = p.split(data::Split::train);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::size_t recent = 0;
    for (const auto& e : raw[i].history) recent += raw[i].timestamp - e.timestamp < 86400 ? 1 : 0;
    EXPECT_EQ(enc[i].n_history, std::min<std::size_t>(recent, 49));
  }
}

TEST(Sweep, BadArguments) {
  TempDir dir;
  EXPECT_THROW(eval::sweep_axis_from("lr"), ConfigError);
  EXPECT_THROW(eval::sensitivity_sweep(tiny_config(), tiny_dataset(), "L", {}, {model::Architecture::trans2d},
                                       dir.path / "x.csv", 1),
               ConfigError);
  EXPECT_THROW(eval::sensitivity_sweep(tiny_config(), tiny_dataset(), "L", {0}, {model::Architecture::trans2d},
                                       dir.path / "x.csv", 1),
               ConfigError);
}

// ---------------------------------------------------------------------------
// Attention maps

TEST(AttentionExport, SumsToOneWithHistoryRowsAndChannelHeaders) {
  const auto s = toy::schema(4);
  model::Trans2DConfig cfg;
  cfg.h = 2;
  cfg.d = 4;
  cfg.N = 10;
  cfg.L = 2;
  model::Trans2DModel m(cfg, s, 5);
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const auto snap = toy::snapshot(rng, s, rng.index(9), 1 + rng.index(5));
    for (std::size_t block : {0u, 1u}) {
      const auto ex = eval::extract_attention_map(m, snap, std::nullopt, block);
      EXPECT_EQ(ex.rows, snap.n_history + 1);
      EXPECT_EQ(ex.columns, s.names());
      EXPECT_NEAR(ex.sum(), 1.0, 1e-8);
      EXPECT_EQ(ex.label, 1.0);
      EXPECT_GT(ex.score, 0.0);
      EXPECT_LT(ex.score, 1.0);
      for (double v : ex.values) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(AttentionExport, SingleRowSingleChannelIsOne) {
  const auto s = toy::schema(3);
  model::Trans2DConfig cfg;
  cfg.h = 2;
  cfg.d = 4;
  cfg.architecture = model::Architecture::trans1d_avg;
  model::Trans2DModel m(cfg, s, 1);
  Rng rng(2);
  const auto snap = toy::snapshot(rng, s, 0, 3);
  const auto ex = eval::extract_attention_map(m, snap, 2, 0);
  ASSERT_EQ(ex.values.size(), 1u);
  EXPECT_NEAR(ex.values[0], 1.0, 1e-12);
  EXPECT_EQ(ex.columns, std::vector<std::string>{"item"});
  EXPECT_EQ(ex.candidate, 2u);
}

TEST(AttentionExport, FutureCellsAreExactlyZero) {
  const auto s = toy::schema(3);
  model::Trans2DConfig cfg;
  cfg.h = 2;
  cfg.d = 4;
  model::Trans2DModel m(cfg, s, 1);
  Rng rng(3);
  const auto seq = toy::snapshot(rng, s, 5, 1).sequence(0);
  const auto trace = m.forward_sequence(seq);
  const auto& p = trace.probs[0];
  const std::size_t h = p.dim(0), n = p.dim(1), C = p.dim(2);
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t z = i + 1; z < n; ++z) {
          for (std::size_t e = 0; e < C; ++e) EXPECT_EQ(p.data()[(((a * n + i) * C + j) * n + z) * C + e], 0.0);
        }
      }
    }
  }
}

TEST(AttentionExport, CsvAndSidecarLayout) {
  eval::AttentionExport ex;
  ex.columns = {"price", "hour"};
  ex.rows = 2;
  ex.values = {0.25, 0.25, 0.125, 0.375};
  ex.score = 0.4;
  ex.label = 1.0;
  EXPECT_EQ(eval::attention_csv(ex), "row,price,hour\nh0,0.25,0.25\ncandidate,0.125,0.375\n");
  const auto j = eval::attention_sidecar(ex, 7);
  EXPECT_EQ(j["sample"], 7);
  EXPECT_EQ(j["score"], 0.4);
  EXPECT_EQ(j["label"], 1.0);
}

TEST(AttentionExport, BadIndices) {
  const auto s = toy::schema(2);
  model::Trans2DConfig cfg;
  cfg.h = 2;
  cfg.d = 4;
  model::Trans2DModel m(cfg, s, 1);
  Rng rng(3);
  const auto snap = toy::snapshot(rng, s, 2, 2);
  EXPECT_THROW(eval::extract_attention_map(m, snap, 5, 0), std::out_of_range);
  EXPECT_THROW(eval::extract_attention_map(m, snap, 0, 1), std::out_of_range);
}
