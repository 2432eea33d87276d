#pragma once

#include "seqsleep/eval.hpp"
#include "seqsleep/model.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seqsleep::model {

// One training window: L consecutive epochs starting at `start`.
struct WindowRef {
  std::size_t recording = 0;
  std::size_t start = 0;
};

// Every stride-1 window of every labeled recording with at least L epochs.
// Shorter recordings are skipped and reported through `warnings`.
std::vector<WindowRef> window_pool(std::span<const eval::LabeledRecording> recordings,
                                   std::size_t seq_len, std::vector<std::string>* warnings);

struct LogRow {
  std::size_t step = 0;   // 1-based optimizer step
  std::size_t epoch = 0;  // 1-based pass over the pool
  double train_loss = 0.0;          // minibatch objective before the update
  double valid_accuracy = -1.0;     // < 0 when not validated at this step
};

struct TrainResult {
  std::unique_ptr<SeqSleepNet> best;  // retained parameters
  std::vector<LogRow> log;
  std::size_t best_step = 0;
  double best_valid_accuracy = -1.0;  // < 0 when no validation set was given
  std::vector<std::string> warnings;
};

using ProgressFn = std::function<void(const LogRow&)>;

// Shuffles the window pool once per pass with the seeded generator, steps
// Adam on minibatches of `batch_size` windows, and every `validate_every`
// steps (and after the last step) scores aggregated sliding predictions on
// `valid`. The parameters with the best validation accuracy are retained
// (earliest on ties); without a validation set the final ones are.
TrainResult train(std::span<const eval::LabeledRecording> train_set,
                  std::span<const eval::LabeledRecording> valid_set, const ModelConfig& config,
                  const ProgressFn& progress = {});

// Overall accuracy of aggregated sliding predictions over several recordings.
double aggregated_accuracy(const SeqSleepNet& net,
                           std::span<const eval::LabeledRecording> recordings);

struct PoolScore {
  double mean_loss = 0.0;  // mean sequence loss over all pool windows (eval mode)
  double accuracy = 0.0;   // per-window argmax accuracy over all (window, step) pairs
  std::size_t windows = 0;
};
PoolScore score_pool(const SeqSleepNet& net, std::span<const eval::LabeledRecording> recordings);

// step,epoch,train_loss,valid_accuracy (empty when not validated).
void write_training_log(std::ostream& os, const std::vector<LogRow>& log);

}  // namespace seqsleep::model
