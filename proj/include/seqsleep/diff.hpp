#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Tape records every primitive op together with a closure that maps the
// gradient of its output onto the gradients of its inputs. Parameters live in
// a ParameterStore that outlives any tape; a tape references them as leaves
// and backward() accumulates into Parameter::grad.

#include "seqsleep/common.hpp"
#include "seqsleep/rng.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seqsleep::diff {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Included in the L2 penalty (weight matrices only, never biases).
  bool decay = true;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Matrix init, bool decay);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Parameters in registration order.
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t coordinate_count() const;
  void zero_grad();
  // Sum of squared entries over parameters flagged `decay`.
  double decayed_sum_of_squares() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a value recorded on a tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return static_cast<std::size_t>(value().rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(value().cols()); }
  bool requires_grad() const;
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop =
      std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  // When recording is off, ops evaluate values only.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor param(Parameter& p);

  // Records an op output. `backprop` runs only if some input requires grad.
  Tensor push(Matrix value, bool requires_grad, Backprop backprop);

  // Accumulates d(loss)/d(param) into every referenced Parameter::grad and
  // releases intermediate gradients. `loss` must be 1x1.
  void backward(Tensor loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` into the gradient slot of node `id` (allocating it on first use).
  void accumulate(std::size_t id, const Matrix& g);
  // Adds `g` into the block of node `id` starting at (row, col).
  void accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// ---- primitive ops -------------------------------------------------------

Tensor matmul(Tensor a, Tensor b);
// a * b^T (the usual dense-layer product with weights stored [out][in]).
Tensor matmul_transposed(Tensor a, Tensor b);
Tensor add(Tensor a, Tensor b);
// a[m x n] + b[1 x n] broadcast over rows.
Tensor add_row(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
// a[m x n] scaled row-wise by w[m x 1].
Tensor mul_column(Tensor a, Tensor w);
// scale * a + shift
Tensor affine(Tensor a, double scale, double shift);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(Tensor a, std::size_t begin, std::size_t count);
Tensor slice_cols(Tensor a, std::size_t begin, std::size_t count);
Tensor transpose(Tensor a);
// Row-major reinterpretation with the same element order.
Tensor reshape(Tensor a, std::size_t rows, std::size_t cols);
Tensor sigmoid(Tensor a);
Tensor tanh(Tensor a);
Tensor softmax_rows(Tensor a);
// log(max(a, floor)); the gradient is zero where the floor is active.
Tensor log(Tensor a, double floor = kLogFloor);
Tensor sum(Tensor a);
Tensor mean(Tensor a);
Tensor sum_of_squares(Tensor a);

enum class Mode { Train, Eval };

// Inverted dropout: zeros each coordinate with probability `rate` and scales
// survivors by 1/(1-rate). Identity in eval mode or when rate == 0.
Tensor dropout(Tensor x, double rate, Mode mode, Rng& rng);

// Plain-value helpers shared with callers that do not need a tape.
double sigmoid(double x);
void softmax_rows_inplace(Matrix& m);

// ---- optimisation ----------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One bias-corrected Adam update of every parameter from its grad. Throws
// NumericalError on a non-finite gradient before touching any parameter.
void adam_step(ParameterStore& params, AdamState& state);

// ---- gradient checking -----------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Builds a scalar loss on the given tape from the store's current values.
using LossBuilder = std::function<Tensor(Tape&)>;

// Compares backward() against central differences. Every coordinate is
// checked when the store has at most `max_coordinates`; otherwise a seeded
// random subsample of `max_coordinates` (>= 200) coordinates is used.
// Relative error per coordinate is |ga - gn| / max(1e-8, |ga| + |gn|).
GradCheckResult grad_check(ParameterStore& params, const LossBuilder& loss, double eps = 1e-5,
                           std::size_t max_coordinates = 4000, std::uint64_t seed = 0);

}  // namespace seqsleep::diff
