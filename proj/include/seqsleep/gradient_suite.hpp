#pragma once

// Finite-difference checks of every layer in isolation and of the composed
// network, shared by the CLI `gradcheck` command and the test suites.

#include "seqsleep/diff.hpp"
#include "seqsleep/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace seqsleep::model {

// F=9, T=5, M=4, H=3, A_dim=3, C=2, L=3; used with S=2 sequences.
ModelConfig micro_config();

// S random labeled sequences of config.seq_len random images.
struct RandomBatch {
  std::vector<tfr::TimeFrequencyImage> images;  // [s * L + l]
  std::vector<Stage> labels;
  std::vector<InputSequence> sequences;

  RandomBatch() = default;
  RandomBatch(const RandomBatch&) = delete;
  RandomBatch& operator=(const RandomBatch&) = delete;
};
void fill_random_batch(RandomBatch& out, const ModelConfig& config, std::size_t sequences,
                       Rng& rng);

// Adds N(0, scale^2) noise to every parameter so checks avoid the symmetric
// zero-initialised filterbank and zero biases.
void perturb_parameters(diff::ParameterStore& store, double scale, Rng& rng);

struct GradientCheck {
  std::string name;
  diff::GradCheckResult result;
  double tolerance = 0.0;
  bool passed() const { return result.max_relative_error < tolerance; }
};

// Filterbank, GRU cell, bidirectional pass (K=5), attention pool and the full
// model objective (train mode with a replayed dropout mask, L2 on). `micro`
// selects the micro dimensions; otherwise somewhat larger ones are used.
std::vector<GradientCheck> run_gradient_suite(bool micro, std::uint64_t seed, double eps = 1e-5);

}  // namespace seqsleep::model
