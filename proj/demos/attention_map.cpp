// Trains a small Trans2D model on a generated log and prints the attention
// of one test candidate over every (history row, channel) cell.
//
//   demo_attention [n_users] [epochs]

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "trans2d/config.hpp"
#include "trans2d/evaluation/harness.hpp"

using namespace trans2d;

int main(int argc, char** argv) {
  RunConfig cfg;
  cfg.data.n_users = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 200;
  cfg.data.n_items = 2000;
  cfg.train.epochs = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 2;
  cfg.model.d = 8;
  cfg.model.N = 20;
  try {
    cfg.validate();
    const auto ds = eval::generate_dataset(cfg.data.generator());
    const auto data = eval::prepare(ds, cfg.data, cfg.model.N);
    auto ex = eval::run_experiment(cfg, data, 0, [](const train::EpochLog& e, const model::Trans2DModel&) {
      std::fprintf(stderr, "epoch %zu loss %.4f\n", e.epoch, e.train_loss);
    });
    std::fprintf(stderr, "test NDCG@5 %.4f\n", ex.report.ndcg5());

    // First test snapshot with some history, scored on its clicked candidate.
    const auto& test = data.split(data::Split::test);
    std::size_t pick = 0;
    while (pick + 1 < test.size() && test[pick].n_history < 3) ++pick;
    const auto map = eval::extract_attention_map(ex.model, test[pick], std::nullopt);
    std::fprintf(stderr, "sample %zu candidate %zu score %.4f label %.0f mass %.12f\n", pick, map.candidate,
                 map.score, map.label, map.sum());
    std::cout << eval::attention_csv(map);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
