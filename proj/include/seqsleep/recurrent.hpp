#pragma once

#include "seqsleep/diff.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace seqsleep::recurrent {

// Gated recurrent unit:
//   r  = sigmoid(W_sr x + W_hr h + b_r)
//   z  = sigmoid(W_sz x + W_hz h + b_z)
//   h~ = tanh(W_sh x + W_hh (r .* h) + b_h)
//   h' = z .* h + (1 - z) .* h~
struct GruParams {
  diff::Parameter* w_sr = nullptr;  // [H][D]
  diff::Parameter* w_sz = nullptr;
  diff::Parameter* w_sh = nullptr;
  diff::Parameter* w_hr = nullptr;  // [H][H]
  diff::Parameter* w_hz = nullptr;
  diff::Parameter* w_hh = nullptr;
  diff::Parameter* b_r = nullptr;  // [1][H]
  diff::Parameter* b_z = nullptr;
  diff::Parameter* b_h = nullptr;

  std::size_t input_size() const { return static_cast<std::size_t>(w_sr->value.cols()); }
  std::size_t hidden_size() const { return static_cast<std::size_t>(w_sr->value.rows()); }
};

struct BiRnnParams {
  GruParams forward;
  GruParams backward;
  // Layers 2..depth of a stacked bidirectional network; layer i+1 reads the
  // per-step [h_backward ; h_forward] of layer i.
  std::vector<GruParams> upper_forward;
  std::vector<GruParams> upper_backward;
  diff::Parameter* w_out = nullptr;  // [D_out][2H], input is [h_backward ; h_forward] of the top layer
  diff::Parameter* b_out = nullptr;  // [1][D_out]

  std::size_t output_size() const { return static_cast<std::size_t>(w_out->value.rows()); }
};

// Weight matrices are Glorot-uniform, biases zero.
GruParams make_gru(diff::ParameterStore& store, const std::string& prefix, std::size_t input,
                   std::size_t hidden, Rng& rng);
// Layer 1 is registered as <prefix>fw./bw., layer k >= 2 as <prefix>fw<k>./bw<k>.
BiRnnParams make_birnn(diff::ParameterStore& store, const std::string& prefix, std::size_t input,
                       std::size_t hidden, std::size_t output, Rng& rng, std::size_t layers = 1);

// Uniform in [-s, s] with s = sqrt(6 / (rows + cols)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// One step for a batch: x [N][D], h_prev [N][H] -> [N][H].
diff::Tensor gru_cell(diff::Tape& tape, diff::Tensor x, diff::Tensor h_prev, const GruParams& p);

// Runs both directions over K steps of a batch of N sequences. `inputs` is
// step-major [K*N][D] (rows t*N .. t*N+N-1 hold step t). Both directions start
// from zero state. Returns W_out [h_b ; h_f] + b_out of the top layer,
// step-major [K*N][D_out].
diff::Tensor bidirectional_pass(diff::Tape& tape, diff::Tensor inputs, std::size_t steps,
                                const BiRnnParams& p);

}  // namespace seqsleep::recurrent
