#pragma once

#include "seqsleep/common.hpp"
#include "seqsleep/model.hpp"
#include "seqsleep/tfr.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace seqsleep::eval {

using Posterior = std::array<double, kNumStages>;
using LogScores = std::array<double, kNumStages>;

// The posteriors one epoch receives from every window that covers it.
struct DecisionEnsemble {
  std::vector<Posterior> members;
};

struct Aggregated {
  LogScores log_scores{};
  Stage label = Stage::W;
};

// Mean-log fusion: log_scores[y] = (1/K) sum_i log(max(P_i(y), kLogFloor)).
// The label is the argmax, ties going to the lowest class index.
Aggregated aggregate(const DecisionEnsemble& ensemble);

// Argmax with lowest-index tie-break.
Stage argmax_stage(std::span<const double> scores);

// Epochs of one recording, already converted to images.
struct LabeledRecording {
  std::string name;
  std::vector<tfr::TimeFrequencyImage> images;
  std::vector<Stage> labels;  // empty when unlabeled
};

struct SlidingPrediction {
  std::vector<Stage> hypnogram;
  Matrix log_scores;                      // [E][5]
  std::vector<std::size_t> ensemble_size;  // K per epoch
  std::vector<Matrix> window_posteriors;  // [E-L+1] windows of [L][5]
};

// Runs the model on every length-L window (stride 1) and fuses each epoch's
// ensemble. Epochs near the ends get fewer members. Throws DataError when the
// recording is shorter than L.
SlidingPrediction sliding_predict(std::span<const tfr::TimeFrequencyImage> recording,
                                  const model::SeqSleepNet& net, std::size_t seq_len);

// Fraction of (window, position) argmax decisions that match the labels.
double per_window_accuracy(const SlidingPrediction& prediction, std::span<const Stage> labels);

class ConfusionMatrix {
 public:
  using Counts = std::array<std::array<std::uint64_t, kNumStages>, kNumStages>;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(const Counts& counts) : counts_(counts) {}

  void add(Stage reference, Stage predicted, std::uint64_t n = 1);
  void add(std::span<const Stage> reference, std::span<const Stage> predicted);
  void merge(const ConfusionMatrix& other);

  // Rows are reference stages, columns predicted stages.
  std::uint64_t at(std::size_t reference, std::size_t predicted) const {
    return counts_[reference][predicted];
  }
  std::uint64_t total() const;
  const Counts& counts() const { return counts_; }

 private:
  Counts counts_{};
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double kappa = 0.0;
  double sensitivity = 0.0;  // macro recall
  double specificity = 0.0;  // macro one-vs-rest specificity
  std::array<double, kNumStages> class_sensitivity{};
  std::array<double, kNumStages> class_selectivity{};
  std::array<double, kNumStages> class_f1{};
  std::array<double, kNumStages> class_specificity{};
  // Set for classes absent from both reference and prediction (F1 taken as 0).
  std::array<bool, kNumStages> class_absent{};
};

Metrics compute_metrics(const ConfusionMatrix& cm);

struct TransitionReport {
  std::vector<bool> transitioning;
  std::size_t transitioning_count = 0;
  std::size_t stable_count = 0;
  double transitioning_error = 0.0;  // error rate within the group, 0 if empty
  double stable_error = 0.0;
};

// An epoch is transitioning iff its label differs from a neighbour's.
std::vector<bool> transition_split(std::span<const Stage> reference);
TransitionReport transition_errors(std::span<const Stage> reference,
                                   std::span<const Stage> predicted);

// Hypnogram CSV: epoch_index,reference_label,predicted_label,log_W..log_REM.
void write_hypnogram_csv(std::ostream& os, const SlidingPrediction& prediction,
                         std::span<const Stage> reference);
// 6x6 CSV with a header row and a reference-label column.
void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm);
std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm,
                         const TransitionReport* transitions = nullptr);
// epoch_index,frame,weight for one epoch.
void write_attention_csv(std::ostream& os, std::size_t epoch, std::span<const double> weights);

}  // namespace seqsleep::eval
