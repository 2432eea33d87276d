#include "seqsleep/recurrent.hpp"

#include <cmath>
#include <vector>

namespace seqsleep::recurrent {

namespace {

struct BoundGru {
  diff::Tensor w_sr, w_sz, w_sh, w_hr, w_hz, w_hh, b_r, b_z, b_h;
};

BoundGru bind(diff::Tape& tape, const GruParams& p) {
  return {tape.param(*p.w_sr), tape.param(*p.w_sz), tape.param(*p.w_sh),
          tape.param(*p.w_hr), tape.param(*p.w_hz), tape.param(*p.w_hh),
          tape.param(*p.b_r),  tape.param(*p.b_z),  tape.param(*p.b_h)};
}

// Input projections W_s* x + b_* for every row of `x` at once.
struct Projected {
  diff::Tensor r, z, h;
};

Projected project(diff::Tensor x, const BoundGru& g) {
  return {diff::add_row(diff::matmul_transposed(x, g.w_sr), g.b_r),
          diff::add_row(diff::matmul_transposed(x, g.w_sz), g.b_z),
          diff::add_row(diff::matmul_transposed(x, g.w_sh), g.b_h)};
}

diff::Tensor step(const Projected& in, diff::Tensor h, const BoundGru& g) {
  using namespace diff;
  Tensor r = sigmoid(add(in.r, matmul_transposed(h, g.w_hr)));
  Tensor z = sigmoid(add(in.z, matmul_transposed(h, g.w_hz)));
  Tensor candidate = tanh(add(in.h, matmul_transposed(mul(r, h), g.w_hh)));
  return add(mul(z, h), mul(affine(z, -1.0, 1.0), candidate));
}

void check_input(const diff::Tensor& x, const GruParams& p, const char* op) {
  if (x.cols() != p.input_size()) {
    throw ShapeError(std::string(op) + ": input " + shape_string(x.rows(), x.cols()) +
                     " vs W_sr " + shape_string(p.hidden_size(), p.input_size()));
  }
}

}  // namespace

Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-s, s);
  return m;
}

GruParams make_gru(diff::ParameterStore& store, const std::string& prefix, std::size_t input,
                   std::size_t hidden, Rng& rng) {
  auto weight = [&](const char* name, std::size_t cols) {
    return &store.add(prefix + name, glorot_uniform(hidden, cols, rng), true);
  };
  auto bias = [&](const char* name) {
    return &store.add(prefix + name, Matrix::Zero(1, static_cast<Eigen::Index>(hidden)), false);
  };
  GruParams p;
  p.w_sr = weight("W_sr", input);
  p.w_sz = weight("W_sz", input);
  p.w_sh = weight("W_sh", input);
  p.w_hr = weight("W_hr", hidden);
  p.w_hz = weight("W_hz", hidden);
  p.w_hh = weight("W_hh", hidden);
  p.b_r = bias("b_r");
  p.b_z = bias("b_z");
  p.b_h = bias("b_h");
  return p;
}

BiRnnParams make_birnn(diff::ParameterStore& store, const std::string& prefix, std::size_t input,
                       std::size_t hidden, std::size_t output, Rng& rng, std::size_t layers) {
  if (layers < 1) throw UsageError("make_birnn: need at least one layer");
  BiRnnParams p;
  p.forward = make_gru(store, prefix + "fw.", input, hidden, rng);
  p.backward = make_gru(store, prefix + "bw.", input, hidden, rng);
  for (std::size_t k = 2; k <= layers; ++k) {
    const std::string n = std::to_string(k);
    p.upper_forward.push_back(make_gru(store, prefix + "fw" + n + ".", 2 * hidden, hidden, rng));
    p.upper_backward.push_back(make_gru(store, prefix + "bw" + n + ".", 2 * hidden, hidden, rng));
  }
  p.w_out = &store.add(prefix + "W_out", glorot_uniform(output, 2 * hidden, rng), true);
  p.b_out = &store.add(prefix + "b_out", Matrix::Zero(1, static_cast<Eigen::Index>(output)), false);
  return p;
}

diff::Tensor gru_cell(diff::Tape& tape, diff::Tensor x, diff::Tensor h_prev, const GruParams& p) {
  check_input(x, p, "gru_cell");
  if (h_prev.cols() != p.hidden_size() || h_prev.rows() != x.rows()) {
    throw ShapeError("gru_cell: state " + shape_string(h_prev.rows(), h_prev.cols()) +
                     " vs expected " + shape_string(x.rows(), p.hidden_size()));
  }
  const BoundGru g = bind(tape, p);
  return step(project(x, g), h_prev, g);
}

diff::Tensor bidirectional_pass(diff::Tape& tape, diff::Tensor inputs, std::size_t steps,
                                const BiRnnParams& p) {
  if (steps == 0 || inputs.rows() == 0) throw ShapeError("bidirectional_pass: empty sequence");
  if (inputs.rows() % steps != 0) {
    throw ShapeError("bidirectional_pass: " + std::to_string(inputs.rows()) +
                     " rows do not split into " + std::to_string(steps) + " steps");
  }
  check_input(inputs, p.forward, "bidirectional_pass");
  check_input(inputs, p.backward, "bidirectional_pass");
  if (p.forward.hidden_size() != p.backward.hidden_size()) {
    throw ShapeError("bidirectional_pass: forward and backward hidden sizes differ");
  }
  const std::size_t batch = inputs.rows() / steps;
  const std::size_t hidden = p.forward.hidden_size();

  auto run = [&](diff::Tensor layer_in, const GruParams& params, bool reverse) {
    const BoundGru g = bind(tape, params);
    const Projected all = project(layer_in, g);
    std::vector<diff::Tensor> states(steps);
    diff::Tensor h = tape.constant(
        Matrix::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(hidden)));
    for (std::size_t i = 0; i < steps; ++i) {
      const std::size_t t = reverse ? steps - 1 - i : i;
      const Projected in{diff::slice_rows(all.r, t * batch, batch),
                         diff::slice_rows(all.z, t * batch, batch),
                         diff::slice_rows(all.h, t * batch, batch)};
      h = step(in, h, g);
      states[t] = h;
    }
    return states;
  };
  // Per-step [h_b ; h_f], stacked step-major.
  auto join = [&](const std::vector<diff::Tensor>& fwd, const std::vector<diff::Tensor>& bwd) {
    std::vector<diff::Tensor> joined;
    joined.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const diff::Tensor pair[] = {bwd[t], fwd[t]};
      joined.push_back(diff::concat_cols(pair));
    }
    return diff::concat_rows(joined);
  };

  auto layer = [&](diff::Tensor layer_in, const GruParams& fw, const GruParams& bw) {
    const std::vector<diff::Tensor> fwd = run(layer_in, fw, false);
    const std::vector<diff::Tensor> bwd = run(layer_in, bw, true);
    return join(fwd, bwd);
  };

  diff::Tensor stacked = layer(inputs, p.forward, p.backward);
  for (std::size_t k = 0; k < p.upper_forward.size(); ++k) {
    stacked = layer(stacked, p.upper_forward[k], p.upper_backward[k]);
  }
  return diff::add_row(diff::matmul_transposed(stacked, tape.param(*p.w_out)),
                       tape.param(*p.b_out));
}

}  // namespace seqsleep::recurrent
