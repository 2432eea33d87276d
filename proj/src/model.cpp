#include "seqsleep/model.hpp"

#include <cmath>

namespace seqsleep::model {

void ModelConfig::validate() const {
  if (seq_len < 1) throw UsageError("config: seq_len must be >= 1");
  if (channels < 1) throw UsageError("config: channels must be >= 1");
  if (filters < 1 || filters >= freq_bins) throw UsageError("config: need 1 <= filters < freq_bins");
  if (hidden < 1 || attention < 1 || frames < 1) throw UsageError("config: sizes must be >= 1");
  if (recurrent_layers < 1) throw UsageError("config: recurrent_layers must be >= 1");
  if (num_classes != kNumStages) throw UsageError("config: num_classes must be 5");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("config: dropout must lie in [0, 1)");
  if (l2 < 0.0) throw UsageError("config: l2 must be >= 0");
  if (!(lr > 0.0)) throw UsageError("config: lr must be > 0");
  if (batch_size < 1) throw UsageError("config: batch_size must be >= 1");
  if (validate_every < 1) throw UsageError("config: validate_every must be >= 1");
}

SeqSleepNet::SeqSleepNet(ModelConfig config) : config_(config) {
  config_.validate();
  Rng rng = Rng(config_.seed).fork(0x1417);
  const std::size_t feature = 2 * config_.hidden;
  filterbanks_ = filterbank::make_layers(store_, "filterbank.", config_.channels,
                                         config_.freq_bins, config_.filters);
  epoch_rnn_ = recurrent::make_birnn(store_, "epoch_rnn.", config_.filters * config_.channels,
                                     config_.hidden, feature, rng, config_.recurrent_layers);
  attention_ = attention::make_attention(store_, "attention.", feature, config_.attention,
                                         config_.single_vector_attention, rng);
  sequence_rnn_ = recurrent::make_birnn(store_, "sequence_rnn.", feature, config_.hidden, feature,
                                        rng, config_.recurrent_layers);
  w_cls_ = &store_.add("output.W", recurrent::glorot_uniform(config_.num_classes, feature, rng),
                       true);
  b_cls_ = &store_.add("output.b", Matrix::Zero(1, static_cast<Eigen::Index>(config_.num_classes)),
                       false);
  for (std::size_t i = 0; i < store_.size(); ++i) {
    if (store_[i].decay) decayed_.push_back(&store_[i]);
  }
}

SeqSleepNet::SeqSleepNet(const SeqSleepNet& other) : SeqSleepNet(other.config_) {
  assign_values(other.store_);
}

void SeqSleepNet::assign_values(const diff::ParameterStore& values) {
  if (values.size() != store_.size()) {
    throw DataError("parameter count mismatch: " + std::to_string(values.size()) + " vs " +
                    std::to_string(store_.size()));
  }
  for (std::size_t i = 0; i < store_.size(); ++i) {
    diff::Parameter& dst = store_[i];
    const diff::Parameter& src = values.get(dst.name);
    if (src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
      throw ShapeError("parameter " + dst.name + ": " +
                       shape_string(static_cast<std::size_t>(src.value.rows()),
                                    static_cast<std::size_t>(src.value.cols())) +
                       " vs " +
                       shape_string(static_cast<std::size_t>(dst.value.rows()),
                                    static_cast<std::size_t>(dst.value.cols())));
    }
    dst.value = src.value;
  }
}

void SeqSleepNet::validate_batch(std::span<const InputSequence> batch, bool need_labels) const {
  if (batch.empty()) throw DataError("empty batch");
  const std::size_t len = batch.front().images.size();
  if (len == 0) throw DataError("empty input sequence");
  for (const InputSequence& seq : batch) {
    if (seq.images.size() != len) {
      throw DataError("mixed sequence lengths in batch: " + std::to_string(seq.images.size()) +
                      " vs " + std::to_string(len));
    }
    if (need_labels && seq.labels.size() != len) {
      throw DataError("sequence has " + std::to_string(seq.labels.size()) + " labels for " +
                      std::to_string(len) + " epochs");
    }
    for (const tfr::TimeFrequencyImage& img : seq.images) {
      if (img.freq_bins() != config_.freq_bins || img.frames() != config_.frames ||
          img.channels() != config_.channels) {
        throw ShapeError("image " + std::to_string(img.freq_bins()) + "x" +
                         std::to_string(img.frames()) + "x" + std::to_string(img.channels()) +
                         " does not match model " + std::to_string(config_.freq_bins) + "x" +
                         std::to_string(config_.frames) + "x" + std::to_string(config_.channels));
      }
    }
  }
}

attention::Pooled SeqSleepNet::encode(diff::Tape& tape, const std::vector<Matrix>& columns) const {
  std::vector<diff::Tensor> filtered;
  filtered.reserve(config_.channels);
  for (std::size_t c = 0; c < config_.channels; ++c) {
    filtered.push_back(filterbank::apply_filterbank(tape, tape.constant(columns[c]),
                                                    filterbanks_[c]));
  }
  diff::Tensor image = diff::concat_cols(filtered);  // [T*N][M*C]
  diff::Tensor outputs = recurrent::bidirectional_pass(tape, image, config_.frames, epoch_rnn_);
  return attention::attention_pool(tape, outputs, config_.frames, attention_);
}

diff::Tensor SeqSleepNet::classify(diff::Tape& tape, diff::Tensor features, std::size_t steps,
                                   diff::Mode mode, Rng* rng) const {
  Rng unused(0);
  Rng& r = rng != nullptr ? *rng : unused;
  if (mode == diff::Mode::Train && config_.dropout > 0.0 && rng == nullptr) {
    throw UsageError("train-mode forward needs an rng for dropout");
  }
  features = diff::dropout(features, config_.dropout, mode, r);
  diff::Tensor outputs = recurrent::bidirectional_pass(tape, features, steps, sequence_rnn_);
  outputs = diff::dropout(outputs, config_.dropout, mode, r);
  diff::Tensor logits = diff::add_row(diff::matmul_transposed(outputs, tape.param(*w_cls_)),
                                      tape.param(*b_cls_));
  return diff::softmax_rows(logits);
}

SeqSleepNet::Graph SeqSleepNet::build(diff::Tape& tape, std::span<const InputSequence> batch,
                                      diff::Mode mode, Rng* rng) const {
  validate_batch(batch, false);
  const std::size_t S = batch.size();
  const std::size_t L = batch.front().images.size();
  const std::size_t T = config_.frames;
  const std::size_t F = config_.freq_bins;
  const std::size_t N = S * L;

  // Unfold: row t*N + n holds spectral column t of epoch n = l*S + s.
  std::vector<Matrix> columns(config_.channels, Matrix(T * N, F));
  for (std::size_t c = 0; c < config_.channels; ++c) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t s = 0; s < S; ++s) {
        const tfr::TimeFrequencyImage& img = batch[s].images[l];
        const std::size_t n = l * S + s;
        for (std::size_t t = 0; t < T; ++t) {
          std::span<const double> col = img.column(t, c);
          std::copy(col.begin(), col.end(), columns[c].row(static_cast<Eigen::Index>(t * N + n)).data());
        }
      }
    }
  }

  attention::Pooled pooled = encode(tape, columns);
  // Rows of pooled are already sequence-step-major (l*S + s).
  return {classify(tape, pooled.pooled, L, mode, rng), pooled.weights};
}

std::vector<PosteriorSequence> SeqSleepNet::forward(std::span<const InputSequence> batch,
                                                    diff::Mode mode, Rng* rng) const {
  diff::Tape tape(false);
  const Graph g = build(tape, batch, mode, rng);
  const std::size_t S = batch.size();
  const std::size_t L = batch.front().images.size();
  const Matrix& probs = g.probs.value();
  std::vector<PosteriorSequence> out(S);
  for (std::size_t s = 0; s < S; ++s) {
    out[s].probs.resize(static_cast<Eigen::Index>(L), probs.cols());
    for (std::size_t l = 0; l < L; ++l) {
      out[s].probs.row(static_cast<Eigen::Index>(l)) = probs.row(static_cast<Eigen::Index>(l * S + s));
    }
  }
  return out;
}

diff::Tensor SeqSleepNet::objective(diff::Tape& tape, std::span<const InputSequence> batch,
                                    diff::Mode mode, Rng* rng) const {
  validate_batch(batch, true);
  const std::size_t S = batch.size();
  const std::size_t L = batch.front().images.size();
  const Graph g = build(tape, batch, mode, rng);

  Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(L * S),
                               static_cast<Eigen::Index>(config_.num_classes));
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t l = 0; l < L; ++l) {
      onehot(static_cast<Eigen::Index>(l * S + s),
             static_cast<Eigen::Index>(stage_index(batch[s].labels[l]))) = 1.0;
    }
  }
  diff::Tensor log_likelihood = diff::sum(diff::mul(diff::log(g.probs), tape.constant(onehot)));
  diff::Tensor loss = diff::affine(log_likelihood, -1.0 / static_cast<double>(S * L), 0.0);

  if (config_.l2 > 0.0) {
    diff::Tensor penalty;
    bool first = true;
    for (diff::Parameter* p : decayed_) {
      diff::Tensor sq = diff::sum_of_squares(tape.param(*p));
      penalty = first ? sq : diff::add(penalty, sq);
      first = false;
    }
    if (!first) loss = diff::add(loss, diff::affine(penalty, 0.5 * config_.l2, 0.0));
  }
  return loss;
}

namespace {

// Step-major column stacks for a run of epochs treated as a batch of N = E.
std::vector<Matrix> unfold_epochs(std::span<const tfr::TimeFrequencyImage> images,
                                  const ModelConfig& cfg) {
  const std::size_t N = images.size();
  const std::size_t T = cfg.frames;
  std::vector<Matrix> columns(cfg.channels, Matrix(T * N, cfg.freq_bins));
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t t = 0; t < T; ++t) {
        std::span<const double> col = images[n].column(t, c);
        std::copy(col.begin(), col.end(), columns[c].row(static_cast<Eigen::Index>(t * N + n)).data());
      }
    }
  }
  return columns;
}

constexpr std::size_t kEncodeChunk = 256;

}  // namespace

Matrix SeqSleepNet::encode_epochs(std::span<const tfr::TimeFrequencyImage> images) const {
  Matrix out(static_cast<Eigen::Index>(images.size()),
             static_cast<Eigen::Index>(2 * config_.hidden));
  for (std::size_t begin = 0; begin < images.size(); begin += kEncodeChunk) {
    auto chunk = images.subspan(begin, std::min(kEncodeChunk, images.size() - begin));
    const InputSequence probe{chunk, {}};
    validate_batch(std::span(&probe, 1), false);
    diff::Tape tape(false);
    attention::Pooled p = encode(tape, unfold_epochs(chunk, config_));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(chunk.size())) =
        p.pooled.value();
  }
  return out;
}

Matrix SeqSleepNet::attention_weights(std::span<const tfr::TimeFrequencyImage> images) const {
  Matrix out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(config_.frames));
  for (std::size_t begin = 0; begin < images.size(); begin += kEncodeChunk) {
    auto chunk = images.subspan(begin, std::min(kEncodeChunk, images.size() - begin));
    const InputSequence probe{chunk, {}};
    validate_batch(std::span(&probe, 1), false);
    diff::Tape tape(false);
    attention::Pooled p = encode(tape, unfold_epochs(chunk, config_));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(chunk.size())) =
        p.weights.value();
  }
  return out;
}

std::vector<Matrix> SeqSleepNet::classify_windows(const Matrix& features,
                                                  std::size_t seq_len) const {
  const auto epochs = static_cast<std::size_t>(features.rows());
  if (seq_len < 1 || epochs < seq_len) {
    throw DataError("recording has " + std::to_string(epochs) + " epochs, fewer than L=" +
                    std::to_string(seq_len) + "; use a smaller sequence length");
  }
  if (static_cast<std::size_t>(features.cols()) != 2 * config_.hidden) {
    throw ShapeError("classify_windows: features " +
                     shape_string(epochs, static_cast<std::size_t>(features.cols())) +
                     " vs width " + std::to_string(2 * config_.hidden));
  }
  const std::size_t windows = epochs - seq_len + 1;
  Matrix stacked(static_cast<Eigen::Index>(seq_len * windows), features.cols());
  for (std::size_t l = 0; l < seq_len; ++l) {
    stacked.middleRows(static_cast<Eigen::Index>(l * windows), static_cast<Eigen::Index>(windows)) =
        features.middleRows(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(windows));
  }
  diff::Tape tape(false);
  const Matrix& probs =
      classify(tape, tape.constant(std::move(stacked)), seq_len, diff::Mode::Eval, nullptr).value();
  std::vector<Matrix> out(windows, Matrix(static_cast<Eigen::Index>(seq_len), probs.cols()));
  for (std::size_t w = 0; w < windows; ++w) {
    for (std::size_t l = 0; l < seq_len; ++l) {
      out[w].row(static_cast<Eigen::Index>(l)) = probs.row(static_cast<Eigen::Index>(l * windows + w));
    }
  }
  return out;
}

double sequence_loss(const Matrix& pred, std::span<const Stage> truth) {
  if (static_cast<std::size_t>(pred.rows()) != truth.size() || pred.rows() == 0) {
    throw ShapeError("sequence_loss: " + std::to_string(pred.rows()) + " rows vs " +
                     std::to_string(truth.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < truth.size(); ++l) {
    total += std::log(std::max(pred(static_cast<Eigen::Index>(l),
                                    static_cast<Eigen::Index>(stage_index(truth[l]))),
                               kLogFloor));
  }
  return -total / static_cast<double>(truth.size());
}

}  // namespace seqsleep::model
