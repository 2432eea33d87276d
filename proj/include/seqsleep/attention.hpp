#pragma once

#include "seqsleep/diff.hpp"

#include <cstddef>
#include <string>

namespace seqsleep::attention {

// Scoring f(a) = (W_att a) . v with W_att [A][D] and v [1][A]. With
// `single_vector` set the scorer is f(a) = a . v with v [1][D] and W_att unused.
struct AttentionParams {
  diff::Parameter* w_att = nullptr;
  diff::Parameter* v = nullptr;
  bool single_vector = false;

  std::size_t input_size() const { return static_cast<std::size_t>(v->value.cols()); }
};

AttentionParams make_attention(diff::ParameterStore& store, const std::string& prefix,
                               std::size_t input, std::size_t attention_size, bool single_vector,
                               Rng& rng);

struct Pooled {
  diff::Tensor pooled;   // [N][D]
  diff::Tensor weights;  // [N][T], rows sum to one
};

// Softmax-weighted sum over T steps for each of N sequences. `outputs` is
// step-major [T*N][D], as produced by recurrent::bidirectional_pass.
Pooled attention_pool(diff::Tape& tape, diff::Tensor outputs, std::size_t steps,
                      const AttentionParams& p);

// Scores per row of `outputs`, [T*N][1].
diff::Tensor attention_scores(diff::Tape& tape, diff::Tensor outputs, const AttentionParams& p);

}  // namespace seqsleep::attention
