#include "seqsleep/train.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace seqsleep::model {

std::vector<WindowRef> window_pool(std::span<const eval::LabeledRecording> recordings,
                                   std::size_t seq_len, std::vector<std::string>* warnings) {
  std::vector<WindowRef> pool;
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    const eval::LabeledRecording& rec = recordings[r];
    if (rec.labels.size() != rec.images.size()) {
      throw DataError(rec.name + ": " + std::to_string(rec.labels.size()) + " labels for " +
                      std::to_string(rec.images.size()) + " epochs");
    }
    if (rec.images.size() < seq_len) {
      if (warnings != nullptr) {
        warnings->push_back("skipping " + rec.name + ": " + std::to_string(rec.images.size()) +
                            " epochs, fewer than L=" + std::to_string(seq_len));
      }
      continue;
    }
    for (std::size_t s = 0; s + seq_len <= rec.images.size(); ++s) pool.push_back({r, s});
  }
  return pool;
}

double aggregated_accuracy(const SeqSleepNet& net,
                           std::span<const eval::LabeledRecording> recordings) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const eval::LabeledRecording& rec : recordings) {
    if (rec.images.size() < net.config().seq_len) continue;
    const eval::SlidingPrediction p = eval::sliding_predict(rec.images, net, net.config().seq_len);
    for (std::size_t e = 0; e < p.hypnogram.size(); ++e) {
      correct += p.hypnogram[e] == rec.labels[e] ? 1 : 0;
    }
    total += p.hypnogram.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

PoolScore score_pool(const SeqSleepNet& net, std::span<const eval::LabeledRecording> recordings) {
  const std::size_t L = net.config().seq_len;
  PoolScore score;
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t decisions = 0;
  for (const eval::LabeledRecording& rec : recordings) {
    if (rec.images.size() < L) continue;
    const std::vector<Matrix> windows = net.classify_windows(net.encode_epochs(rec.images), L);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      std::span<const Stage> truth(rec.labels.data() + w, L);
      loss += sequence_loss(windows[w], truth);
      for (std::size_t l = 0; l < L; ++l) {
        const Eigen::RowVectorXd row = windows[w].row(static_cast<Eigen::Index>(l));
        correct += eval::argmax_stage(std::span<const double>(row.data(), kNumStages)) == truth[l];
        ++decisions;
      }
    }
    score.windows += windows.size();
  }
  if (score.windows > 0) {
    score.mean_loss = loss / static_cast<double>(score.windows);
    score.accuracy = static_cast<double>(correct) / static_cast<double>(decisions);
  }
  return score;
}

TrainResult train(std::span<const eval::LabeledRecording> train_set,
                  std::span<const eval::LabeledRecording> valid_set, const ModelConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  TrainResult result;
  const std::size_t L = config.seq_len;
  std::vector<WindowRef> pool = window_pool(train_set, L, &result.warnings);
  if (pool.empty()) throw DataError("no training windows: every recording is shorter than L");

  SeqSleepNet net(config);
  const Rng root(config.seed);
  Rng shuffle_rng = root.fork(0x5eed);
  Rng dropout_rng = root.fork(0xd0);
  diff::AdamState adam;
  adam.lr = config.lr;

  bool have_valid = false;
  for (const auto& rec : valid_set) have_valid = have_valid || rec.images.size() >= L;
  diff::ParameterStore best_params;
  bool have_best = false;

  const std::size_t steps_per_epoch = (pool.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.train_epochs;
  std::size_t step = 0;
  std::vector<InputSequence> batch;
  for (std::size_t epoch = 1; epoch <= config.train_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(pool));
    for (std::size_t begin = 0; begin < pool.size(); begin += config.batch_size) {
      const std::size_t end = std::min(pool.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const eval::LabeledRecording& rec = train_set[pool[i].recording];
        batch.push_back({std::span(rec.images).subspan(pool[i].start, L),
                         std::span(rec.labels).subspan(pool[i].start, L)});
      }

      net.params().zero_grad();
      diff::Tape tape;
      diff::Tensor loss = net.objective(tape, batch, diff::Mode::Train, &dropout_rng);
      const double loss_value = loss.scalar();
      if (!std::isfinite(loss_value)) {
        throw NumericalError("non-finite training loss at step " + std::to_string(step + 1));
      }
      tape.backward(loss);
      diff::adam_step(net.params(), adam);
      ++step;

      LogRow row{step, epoch, loss_value, -1.0};
      if (have_valid && (step % config.validate_every == 0 || step == total_steps)) {
        row.valid_accuracy = aggregated_accuracy(net, valid_set);
        if (!have_best || row.valid_accuracy > result.best_valid_accuracy) {
          best_params = net.params();
          have_best = true;
          result.best_valid_accuracy = row.valid_accuracy;
          result.best_step = step;
        }
      }
      result.log.push_back(row);
      if (progress) progress(row);
    }
  }

  result.best = std::make_unique<SeqSleepNet>(config);
  if (have_best) {
    result.best->assign_values(best_params);
  } else {
    result.best->assign_values(net.params());
    result.best_step = step;
  }
  return result;
}

void write_training_log(std::ostream& os, const std::vector<LogRow>& log) {
  os << "step,epoch,train_loss,valid_accuracy\n" << std::setprecision(17);
  for (const LogRow& r : log) {
    os << r.step << ',' << r.epoch << ',' << r.train_loss << ',';
    if (r.valid_accuracy >= 0.0) os << r.valid_accuracy;
    os << '\n';
  }
}

}  // namespace seqsleep::model
