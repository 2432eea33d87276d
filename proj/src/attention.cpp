#include "seqsleep/attention.hpp"

#include "seqsleep/recurrent.hpp"

namespace seqsleep::attention {

AttentionParams make_attention(diff::ParameterStore& store, const std::string& prefix,
                               std::size_t input, std::size_t attention_size, bool single_vector,
                               Rng& rng) {
  AttentionParams p;
  p.single_vector = single_vector;
  if (single_vector) {
    p.v = &store.add(prefix + "v", recurrent::glorot_uniform(1, input, rng), true);
  } else {
    p.w_att = &store.add(prefix + "W_att", recurrent::glorot_uniform(attention_size, input, rng),
                         true);
    p.v = &store.add(prefix + "v", recurrent::glorot_uniform(1, attention_size, rng), true);
  }
  return p;
}

diff::Tensor attention_scores(diff::Tape& tape, diff::Tensor outputs, const AttentionParams& p) {
  const std::size_t expected = p.single_vector ? p.input_size()
                                               : static_cast<std::size_t>(p.w_att->value.cols());
  if (outputs.cols() != expected) {
    throw ShapeError("attention: outputs " + shape_string(outputs.rows(), outputs.cols()) +
                     " vs scorer width " + std::to_string(expected));
  }
  diff::Tensor projected = p.single_vector
                               ? outputs
                               : diff::matmul_transposed(outputs, tape.param(*p.w_att));
  return diff::matmul_transposed(projected, tape.param(*p.v));
}

Pooled attention_pool(diff::Tape& tape, diff::Tensor outputs, std::size_t steps,
                      const AttentionParams& p) {
  if (steps == 0 || outputs.rows() == 0) throw ShapeError("attention_pool: empty sequence");
  if (outputs.rows() % steps != 0) {
    throw ShapeError("attention_pool: " + std::to_string(outputs.rows()) +
                     " rows do not split into " + std::to_string(steps) + " steps");
  }
  const std::size_t batch = outputs.rows() / steps;

  // [T*N][1] viewed as [T][N] is step-major; transpose to one row per sequence.
  diff::Tensor scores = attention_scores(tape, outputs, p);
  diff::Tensor weights = diff::softmax_rows(diff::transpose(diff::reshape(scores, steps, batch)));

  diff::Tensor pooled;
  for (std::size_t t = 0; t < steps; ++t) {
    diff::Tensor term = diff::mul_column(diff::slice_rows(outputs, t * batch, batch),
                                         diff::slice_cols(weights, t, 1));
    pooled = t == 0 ? term : diff::add(pooled, term);
  }
  return {pooled, weights};
}

}  // namespace seqsleep::attention
