#include "seqsleep/gradient_suite.hpp"

#include "seqsleep/attention.hpp"
#include "seqsleep/filterbank.hpp"
#include "seqsleep/recurrent.hpp"

namespace seqsleep::model {

ModelConfig micro_config() {
  ModelConfig c;
  c.freq_bins = 9;
  c.frames = 5;
  c.filters = 4;
  c.hidden = 3;
  c.attention = 3;
  c.channels = 2;
  c.seq_len = 3;
  c.batch_size = 2;
  return c;
}

void fill_random_batch(RandomBatch& out, const ModelConfig& config, std::size_t sequences,
                       Rng& rng) {
  const std::size_t L = config.seq_len;
  out.images.clear();
  out.labels.clear();
  out.sequences.clear();
  for (std::size_t i = 0; i < sequences * L; ++i) {
    tfr::TimeFrequencyImage img(config.freq_bins, config.frames, config.channels);
    for (std::size_t c = 0; c < config.channels; ++c) {
      for (std::size_t t = 0; t < config.frames; ++t) {
        for (std::size_t f = 0; f < config.freq_bins; ++f) img.at(f, t, c) = rng.normal();
      }
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(static_cast<Stage>(rng.below(kNumStages)));
  }
  for (std::size_t s = 0; s < sequences; ++s) {
    out.sequences.push_back({std::span(out.images).subspan(s * L, L),
                             std::span(out.labels).subspan(s * L, L)});
  }
}

void perturb_parameters(diff::ParameterStore& store, double scale, Rng& rng) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix& v = store[i].value;
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] += scale * rng.normal();
  }
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

// A fixed random projection turns any tensor into a scalar with a generic,
// non-symmetric gradient.
diff::Tensor project(diff::Tape& tape, diff::Tensor x, const Matrix& weights) {
  return diff::sum(diff::mul(x, tape.constant(weights)));
}

struct Dims {
  std::size_t fb_bins, fb_filters, fb_columns;
  std::size_t gru_in, gru_hidden, gru_batch;
  std::size_t bi_in, bi_hidden, bi_out, bi_batch;
  std::size_t att_steps, att_in, att_size, att_batch;
};

constexpr Dims kMicro{9, 4, 7, 3, 2, 2, 3, 3, 4, 2, 4, 5, 3, 2};
constexpr Dims kSmall{33, 8, 12, 8, 6, 3, 6, 5, 7, 3, 7, 8, 6, 3};
constexpr std::size_t kBiSteps = 5;

}  // namespace

std::vector<GradientCheck> run_gradient_suite(bool micro, std::uint64_t seed, double eps) {
  const Dims d = micro ? kMicro : kSmall;
  Rng rng = Rng(seed).fork(0x9c);
  std::vector<GradientCheck> out;

  {
    diff::ParameterStore store;
    auto layers = filterbank::make_layers(store, "fb.", 1, d.fb_bins, d.fb_filters);
    perturb_parameters(store, 1.0, rng);
    const Matrix columns = random_matrix(d.fb_columns, d.fb_bins, rng);
    const Matrix r = random_matrix(d.fb_columns, d.fb_filters, rng);
    auto loss = [&](diff::Tape& tape) {
      return project(tape, filterbank::apply_filterbank(tape, tape.constant(columns), layers[0]), r);
    };
    out.push_back({"filterbank", diff::grad_check(store, loss, eps, 4000, seed), 1e-6});
  }
  {
    diff::ParameterStore store;
    recurrent::GruParams p = recurrent::make_gru(store, "gru.", d.gru_in, d.gru_hidden, rng);
    diff::Parameter& x = store.add("x", random_matrix(d.gru_batch, d.gru_in, rng), false);
    diff::Parameter& h = store.add("h", random_matrix(d.gru_batch, d.gru_hidden, rng), false);
    perturb_parameters(store, 0.3, rng);
    const Matrix r = random_matrix(d.gru_batch, d.gru_hidden, rng);
    auto loss = [&](diff::Tape& tape) {
      return project(tape, recurrent::gru_cell(tape, tape.param(x), tape.param(h), p), r);
    };
    out.push_back({"gru_cell", diff::grad_check(store, loss, eps, 4000, seed), 1e-5});
  }
  {
    diff::ParameterStore store;
    recurrent::BiRnnParams p =
        recurrent::make_birnn(store, "bi.", d.bi_in, d.bi_hidden, d.bi_out, rng);
    diff::Parameter& x = store.add("x", random_matrix(kBiSteps * d.bi_batch, d.bi_in, rng), false);
    perturb_parameters(store, 0.3, rng);
    const Matrix r = random_matrix(kBiSteps * d.bi_batch, d.bi_out, rng);
    auto loss = [&](diff::Tape& tape) {
      return project(tape, recurrent::bidirectional_pass(tape, tape.param(x), kBiSteps, p), r);
    };
    out.push_back({"bidirectional_pass_k5", diff::grad_check(store, loss, eps, 4000, seed), 1e-5});
  }
  {
    diff::ParameterStore store;
    attention::AttentionParams p =
        attention::make_attention(store, "att.", d.att_in, d.att_size, false, rng);
    diff::Parameter& a =
        store.add("a", random_matrix(d.att_steps * d.att_batch, d.att_in, rng), false);
    perturb_parameters(store, 0.3, rng);
    const Matrix r = random_matrix(d.att_batch, d.att_in, rng);
    auto loss = [&](diff::Tape& tape) {
      return project(tape, attention::attention_pool(tape, tape.param(a), d.att_steps, p).pooled, r);
    };
    out.push_back({"attention_pool", diff::grad_check(store, loss, eps, 4000, seed), 1e-6});
  }
  {
    ModelConfig cfg = micro_config();
    cfg.seed = seed;
    std::size_t sequences = 2;
    if (!micro) {
      cfg.freq_bins = 17;
      cfg.frames = 7;
      cfg.filters = 5;
      cfg.hidden = 5;
      cfg.attention = 4;
      cfg.channels = 3;
      cfg.seq_len = 4;
      sequences = 3;
    }
    SeqSleepNet net(cfg);
    perturb_parameters(net.params(), 0.3, rng);
    RandomBatch batch;
    fill_random_batch(batch, cfg, sequences, rng);
    const Rng dropout_seed = rng.fork(0xd0);
    auto loss = [&](diff::Tape& tape) {
      Rng replay = dropout_seed;  // identical mask on every evaluation
      return net.objective(tape, batch.sequences, diff::Mode::Train, &replay);
    };
    out.push_back({micro ? "model_micro" : "model_small",
                   diff::grad_check(net.params(), loss, eps, 4000, seed), 1e-4});
  }
  return out;
}

}  // namespace seqsleep::model
