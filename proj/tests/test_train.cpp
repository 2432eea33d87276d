#include "doctest.h"

#include "seqsleep/gradient_suite.hpp"
#include "seqsleep/train.hpp"

#include <sstream>

using namespace seqsleep;
using namespace seqsleep::model;

namespace {

// Micro-sized recordings whose images carry a class-specific offset in one
// frequency band, so the stages are separable.
std::vector<eval::LabeledRecording> separable(const ModelConfig& cfg, std::size_t recordings,
                                              std::size_t epochs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<eval::LabeledRecording> out;
  for (std::size_t r = 0; r < recordings; ++r) {
    eval::LabeledRecording rec;
    rec.name = "r" + std::to_string(r);
    for (std::size_t e = 0; e < epochs; ++e) {
      const std::size_t k = rng.below(kNumStages);
      tfr::TimeFrequencyImage img(cfg.freq_bins, cfg.frames, cfg.channels);
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        for (std::size_t t = 0; t < cfg.frames; ++t) {
          for (std::size_t f = 0; f < cfg.freq_bins; ++f) {
            img.at(f, t, c) = 0.3 * rng.normal() + (f == k + 2 ? 2.0 : 0.0);
          }
        }
      }
      rec.images.push_back(std::move(img));
      rec.labels.push_back(static_cast<Stage>(k));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

ModelConfig small_config() {
  ModelConfig cfg = micro_config();
  cfg.lr = 1e-2;
  cfg.batch_size = 4;
  cfg.train_epochs = 15;
  cfg.validate_every = 10;
  cfg.dropout = 0.1;
  return cfg;
}

}  // namespace

TEST_CASE("window pool covers every stride-1 window") {
  ModelConfig cfg = micro_config();
  auto recs = separable(cfg, 3, 12, 1);
  recs[1].images.resize(2);
  recs[1].labels.resize(2);
  std::vector<std::string> warnings;
  const auto pool = window_pool(recs, 10, &warnings);
  CHECK(pool.size() == 6);  // 3 windows in each 12-epoch recording
  CHECK(pool[0].recording == 0);
  CHECK(pool[3].recording == 2);
  CHECK(pool[5].start == 2);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("r1") != std::string::npos);
  recs[0].labels.pop_back();
  CHECK_THROWS_AS(window_pool(recs, 10, nullptr), DataError);
}

TEST_CASE("training reduces the loss on separable data") {
  const ModelConfig cfg = small_config();
  const auto train_set = separable(cfg, 4, 14, 2);
  const auto valid_set = separable(cfg, 1, 14, 3);
  const model::SeqSleepNet init(cfg);
  const PoolScore before = score_pool(init, train_set);
  const TrainResult r = train(train_set, valid_set, cfg);
  CHECK(r.log.size() == 15 * 12);
  const PoolScore after = score_pool(*r.best, train_set);
  CHECK(after.mean_loss < 0.5 * before.mean_loss);
  CHECK(after.accuracy > 0.9);
  CHECK(r.best_valid_accuracy > 0.9);
  CHECK(r.best_step >= 1);
  // Validation happens every validate_every steps and at the last step.
  std::size_t validations = 0;
  for (const auto& row : r.log) validations += row.valid_accuracy >= 0.0 ? 1 : 0;
  CHECK(validations == 18);
  CHECK(r.log.back().valid_accuracy >= 0.0);
  CHECK(aggregated_accuracy(*r.best, valid_set) == doctest::Approx(r.best_valid_accuracy));
}

TEST_CASE("retained parameters are the best validated ones") {
  const ModelConfig cfg = small_config();
  const auto train_set = separable(cfg, 2, 10, 4);
  const auto valid_set = separable(cfg, 1, 10, 5);
  const TrainResult r = train(train_set, valid_set, cfg);
  double best = -1.0;
  std::size_t best_step = 0;
  for (const auto& row : r.log) {
    if (row.valid_accuracy > best) {
      best = row.valid_accuracy;
      best_step = row.step;
    }
  }
  CHECK(r.best_step == best_step);
  CHECK(r.best_valid_accuracy == best);

  const TrainResult no_valid = train(train_set, {}, cfg);
  CHECK(no_valid.best_valid_accuracy < 0.0);
  CHECK(no_valid.best_step == no_valid.log.size());
}

TEST_CASE("training is deterministic for a fixed seed") {
  ModelConfig cfg = small_config();
  cfg.train_epochs = 2;
  const auto train_set = separable(cfg, 2, 10, 6);
  const auto valid_set = separable(cfg, 1, 10, 7);
  const TrainResult a = train(train_set, valid_set, cfg);
  const TrainResult b = train(train_set, valid_set, cfg);
  std::ostringstream la, lb;
  write_training_log(la, a.log);
  write_training_log(lb, b.log);
  CHECK(la.str() == lb.str());
  CHECK(la.str().rfind("step,epoch,train_loss,valid_accuracy\n", 0) == 0);
  for (std::size_t i = 0; i < a.best->params().size(); ++i) {
    CHECK(a.best->params()[i].value == b.best->params()[i].value);
  }
  cfg.seed = 2;
  const TrainResult c = train(train_set, valid_set, cfg);
  CHECK(c.log.front().train_loss != a.log.front().train_loss);
}

TEST_CASE("training needs at least one full window") {
  ModelConfig cfg = small_config();
  const auto short_set = separable(cfg, 2, 2, 8);
  CHECK_THROWS_AS(train(short_set, {}, cfg), DataError);
}
