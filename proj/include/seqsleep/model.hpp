#pragma once

#include "seqsleep/attention.hpp"
#include "seqsleep/common.hpp"
#include "seqsleep/diff.hpp"
#include "seqsleep/filterbank.hpp"
#include "seqsleep/recurrent.hpp"
#include "seqsleep/tfr.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seqsleep::model {

struct ModelConfig {
  // Architecture.
  std::size_t seq_len = 20;        // L, epochs per input sequence
  std::size_t filters = 32;        // M, per channel
  std::size_t hidden = 64;         // H, both recurrent levels
  std::size_t attention = 64;      // A_dim
  std::size_t recurrent_layers = 1;  // stacked BiGRU layers at both levels
  std::size_t channels = 3;        // C
  std::size_t freq_bins = 129;     // F
  std::size_t frames = 29;         // T
  std::size_t num_classes = kNumStages;
  bool single_vector_attention = false;

  // Regularisation and optimisation.
  double dropout = 0.25;
  double l2 = 1e-3;  // lambda
  double lr = 1e-4;
  std::size_t batch_size = 32;  // S, sequences per minibatch
  std::size_t train_epochs = 10;
  std::size_t validate_every = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

// A window of L consecutive epochs viewed from recording storage.
struct InputSequence {
  std::span<const tfr::TimeFrequencyImage> images;
  std::span<const Stage> labels;  // may be empty for unlabeled inference
};

// One stage distribution per epoch of a sequence, [L][5].
struct PosteriorSequence {
  Matrix probs;
};

// The network. Parameters are registered in a fixed order and initialised
// from config.seed: Glorot-uniform matrices, zero biases, zero filterbank
// raw weights.
class SeqSleepNet {
 public:
  explicit SeqSleepNet(ModelConfig config);
  SeqSleepNet(const SeqSleepNet& other);
  SeqSleepNet& operator=(const SeqSleepNet&) = delete;

  const ModelConfig& config() const { return config_; }
  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }

  // Copies parameter values (not gradients) from a store with the same layout.
  void assign_values(const diff::ParameterStore& values);

  struct Graph {
    diff::Tensor probs;      // [L*S][classes], row l*S + s
    diff::Tensor attention;  // [L*S][T], epoch-level attention weights
  };

  // Unfolds the batch into S*L*T spectral columns, filters them, folds into
  // S*L epoch images for the attention-pooled epoch-level BiGRU, then folds
  // the S*L attentional vectors into S sequences for the sequence-level
  // BiGRU and per-step softmax. `rng` drives dropout and may be null in eval.
  Graph build(diff::Tape& tape, std::span<const InputSequence> batch, diff::Mode mode,
              Rng* rng) const;

  std::vector<PosteriorSequence> forward(std::span<const InputSequence> batch,
                                         diff::Mode mode = diff::Mode::Eval,
                                         Rng* rng = nullptr) const;

  // Mean of per-sequence losses plus (lambda/2) * sum of squared weight entries.
  diff::Tensor objective(diff::Tape& tape, std::span<const InputSequence> batch, diff::Mode mode,
                         Rng* rng) const;

  // Eval-mode attentional feature vectors for a run of epochs, [E][2H].
  Matrix encode_epochs(std::span<const tfr::TimeFrequencyImage> images) const;
  // Eval-mode epoch-level attention weights, [E][T].
  Matrix attention_weights(std::span<const tfr::TimeFrequencyImage> images) const;
  // Eval-mode posteriors for every length-`seq_len` window of `features`
  // (stride 1). Result[i] is the [seq_len][classes] posterior of the window
  // starting at epoch i.
  std::vector<Matrix> classify_windows(const Matrix& features, std::size_t seq_len) const;

  const std::vector<filterbank::FilterbankLayer>& filterbanks() const { return filterbanks_; }

 private:
  void validate_batch(std::span<const InputSequence> batch, bool need_labels) const;
  // Epoch-level encoder over N epochs whose spectral columns are stacked
  // step-major per channel ([T*N][F] each).
  attention::Pooled encode(diff::Tape& tape, const std::vector<Matrix>& columns) const;
  diff::Tensor classify(diff::Tape& tape, diff::Tensor features, std::size_t steps,
                        diff::Mode mode, Rng* rng) const;

  ModelConfig config_;
  diff::ParameterStore store_;
  std::vector<filterbank::FilterbankLayer> filterbanks_;
  recurrent::BiRnnParams epoch_rnn_;
  attention::AttentionParams attention_;
  recurrent::BiRnnParams sequence_rnn_;
  diff::Parameter* w_cls_ = nullptr;
  diff::Parameter* b_cls_ = nullptr;
  std::vector<diff::Parameter*> decayed_;
};

// E^s = -(1/L) sum_l y_l . log(max(p_l, kLogFloor)); `truth` holds one label
// per row of `pred`.
double sequence_loss(const Matrix& pred, std::span<const Stage> truth);

}  // namespace seqsleep::model
