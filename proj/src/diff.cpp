#include "seqsleep/diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace seqsleep {

std::string shape_string(std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

}  // namespace seqsleep

namespace seqsleep::diff {

// ---- ParameterStore ----------------------------------------------------------

ParameterStore::ParameterStore(const ParameterStore& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterStore::add(std::string name, Matrix init, bool decay) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Matrix::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  p->decay = decay;
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParameterStore::coordinate_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

double ParameterStore::decayed_sum_of_squares() const {
  double s = 0.0;
  for (const auto& p : params_) {
    if (p->decay) s += p->value.squaredNorm();
  }
  return s;
}

// ---- Tensor / Tape -----------------------------------------------------------

const Matrix& Tensor::value() const { return tape_->value(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ShapeError("expected a scalar tensor, got " +
                     shape_string(static_cast<std::size_t>(v.rows()),
                                  static_cast<std::size_t>(v.cols())));
  }
  return v(0, 0);
}

Tensor Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Tensor Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = record_;
  n.param = record_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor Tape::push(Matrix value, bool requires_grad, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.block(row, col, g.rows(), g.cols()) += g;
}

void Tape::backward(Tensor loss) {
  if (loss.tape() != this) throw UsageError("backward: loss is not on this tape");
  const Matrix& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(static_cast<std::size_t>(lv.rows()),
                                  static_cast<std::size_t>(lv.cols())));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backprop) {
      n.backprop(*this, n.value, n.grad);
    }
    n.grad.resize(0, 0);
  }
}

// ---- ops ---------------------------------------------------------------------

namespace {

Tape& same_tape(Tensor a, Tensor b) {
  if (a.tape() != b.tape()) throw UsageError("operands recorded on different tapes");
  return *a.tape();
}

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " +
                   shape_string(static_cast<std::size_t>(a.rows()),
                                static_cast<std::size_t>(a.cols())) +
                   " vs " +
                   shape_string(static_cast<std::size_t>(b.rows()),
                                static_cast<std::size_t>(b.cols())));
}

bool any_grad(Tensor a, Tensor b) { return a.requires_grad() || b.requires_grad(); }

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Tensor matmul_transposed(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_mismatch("matmul_transposed", av, bv);
  Matrix out(av.rows(), bv.rows());
  out.noalias() = av * bv.transpose();
  std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate_expr(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, g.transpose() * tp.value(ia));
  });
}

Tensor add(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch("add", av, bv);
  std::size_t ia = a.id(), ib = b.id();
  return t.push(av + bv, any_grad(a, b), [ia, ib](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate_expr(ia, g);
    tp.accumulate_expr(ib, g);
  });
}

Tensor add_row(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || av.cols() != bv.cols()) shape_mismatch("add_row", av, bv);
  Matrix out = av.rowwise() + bv.row(0);
  std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate_expr(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, g.colwise().sum());
  });
}

Tensor mul(Tensor a, Tensor b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_mismatch("mul", av, bv);
  Matrix out = av.cwiseProduct(bv);
  std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), any_grad(a, b), [ia, ib](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate_expr(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Tensor mul_column(Tensor a, Tensor w) {
  Tape& t = same_tape(a, w);
  const Matrix& av = a.value();
  const Matrix& wv = w.value();
  if (wv.cols() != 1 || av.rows() != wv.rows()) shape_mismatch("mul_column", av, wv);
  Matrix out = av.array().colwise() * wv.col(0).array();
  std::size_t ia = a.id(), iw = w.id();
  return t.push(std::move(out), any_grad(a, w), [ia, iw](Tape& tp, const Matrix&, const Matrix& g) {
    if (tp.requires_grad(ia)) {
      Matrix ga = g.array().colwise() * tp.value(iw).col(0).array();
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(iw)) {
      Matrix gw = g.cwiseProduct(tp.value(ia)).rowwise().sum();
      tp.accumulate(iw, gw);
    }
  });
}

Tensor affine(Tensor a, double scale, double shift) {
  Tape& t = *a.tape();
  Matrix out = (a.value().array() * scale + shift).matrix();
  std::size_t ia = a.id();
  return t.push(std::move(out), a.requires_grad(),
                [ia, scale](Tape& tp, const Matrix&, const Matrix& g) {
                  tp.accumulate_expr(ia, g * scale);
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = *parts.front().tape();
  const auto rows = parts.front().value().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    if (p.tape() != &t) throw UsageError("operands recorded on different tapes");
    if (p.value().rows() != rows) shape_mismatch("concat_cols", parts.front().value(), p.value());
    cols += p.value().cols();
    grad = grad || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> ids;
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    out.middleCols(at, p.value().cols()) = p.value();
    ids.emplace_back(p.id(), at);
    at += p.value().cols();
  }
  return t.push(std::move(out), grad, [ids](Tape& tp, const Matrix&, const Matrix& g) {
    for (auto [id, offset] : ids) {
      if (tp.requires_grad(id)) tp.accumulate_expr(id, g.middleCols(offset, tp.value(id).cols()));
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = *parts.front().tape();
  const auto cols = parts.front().value().cols();
  Eigen::Index rows = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    if (p.tape() != &t) throw UsageError("operands recorded on different tapes");
    if (p.value().cols() != cols) shape_mismatch("concat_rows", parts.front().value(), p.value());
    rows += p.value().rows();
    grad = grad || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> ids;
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    out.middleRows(at, p.value().rows()) = p.value();
    ids.emplace_back(p.id(), at);
    at += p.value().rows();
  }
  return t.push(std::move(out), grad, [ids](Tape& tp, const Matrix&, const Matrix& g) {
    for (auto [id, offset] : ids) {
      if (tp.requires_grad(id)) tp.accumulate_expr(id, g.middleRows(offset, tp.value(id).rows()));
    }
  });
}

Tensor slice_rows(Tensor a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > static_cast<std::size_t>(av.rows())) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_string(static_cast<std::size_t>(av.rows()),
                                  static_cast<std::size_t>(av.cols())));
  }
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(count);
  std::size_t ia = a.id();
  return a.tape()->push(av.middleRows(b, n), a.requires_grad(),
                        [ia, b](Tape& tp, const Matrix&, const Matrix& g) {
                          tp.accumulate_block(ia, b, 0, g);
                        });
}

Tensor slice_cols(Tensor a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > static_cast<std::size_t>(av.cols())) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_string(static_cast<std::size_t>(av.rows()),
                                  static_cast<std::size_t>(av.cols())));
  }
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(count);
  std::size_t ia = a.id();
  return a.tape()->push(av.middleCols(b, n), a.requires_grad(),
                        [ia, b](Tape& tp, const Matrix&, const Matrix& g) {
                          tp.accumulate_block(ia, 0, b, g);
                        });
}

Tensor transpose(Tensor a) {
  std::size_t ia = a.id();
  return a.tape()->push(a.value().transpose(), a.requires_grad(),
                        [ia](Tape& tp, const Matrix&, const Matrix& g) {
                          tp.accumulate_expr(ia, g.transpose());
                        });
}

Tensor reshape(Tensor a, std::size_t rows, std::size_t cols) {
  const Matrix& av = a.value();
  if (rows * cols != static_cast<std::size_t>(av.size())) {
    throw ShapeError("reshape: cannot view " +
                     shape_string(static_cast<std::size_t>(av.rows()),
                                  static_cast<std::size_t>(av.cols())) +
                     " as " + shape_string(rows, cols));
  }
  Matrix out = Eigen::Map<const Matrix>(av.data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix&, const Matrix& g) {
                          const Matrix& src = tp.value(ia);
                          tp.accumulate_expr(ia, Eigen::Map<const Matrix>(g.data(), src.rows(),
                                                                          src.cols()));
                        });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(Tensor a) {
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid(x); });
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix& y, const Matrix& g) {
                          tp.accumulate_expr(
                              ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
                        });
}

Tensor tanh(Tensor a) {
  Matrix out = a.value().array().tanh().matrix();
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix& y, const Matrix& g) {
                          tp.accumulate_expr(ia,
                                             (g.array() * (1.0 - y.array().square())).matrix());
                        });
}

void softmax_rows_inplace(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

Tensor softmax_rows(Tensor a) {
  Matrix out = a.value();
  softmax_rows_inplace(out);
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix& y, const Matrix& g) {
                          Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                          Matrix gx = y.array() * (g.colwise() - dot).array();
                          tp.accumulate(ia, gx);
                        });
}

Tensor log(Tensor a, double floor) {
  Matrix out = a.value().unaryExpr([floor](double x) { return std::log(std::max(x, floor)); });
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, floor](Tape& tp, const Matrix&, const Matrix& g) {
                          const Matrix& x = tp.value(ia);
                          Matrix gx = g.binaryExpr(
                              x, [floor](double gi, double xi) { return xi > floor ? gi / xi : 0.0; });
                          tp.accumulate(ia, gx);
                        });
}

Tensor sum(Tensor a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix&, const Matrix& g) {
                          const Matrix& x = tp.value(ia);
                          tp.accumulate_expr(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
                        });
}

Tensor mean(Tensor a) {
  const Matrix& av = a.value();
  if (av.size() == 0) throw ShapeError("mean: empty tensor");
  const double n = static_cast<double>(av.size());
  Matrix out(1, 1);
  out(0, 0) = av.sum() / n;
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, n](Tape& tp, const Matrix&, const Matrix& g) {
                          const Matrix& x = tp.value(ia);
                          tp.accumulate_expr(ia,
                                             Matrix::Constant(x.rows(), x.cols(), g(0, 0) / n));
                        });
}

Tensor sum_of_squares(Tensor a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  std::size_t ia = a.id();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](Tape& tp, const Matrix&, const Matrix& g) {
                          tp.accumulate_expr(ia, tp.value(ia) * (2.0 * g(0, 0)));
                        });
}

Tensor dropout(Tensor x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must lie in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) return x;
  const Matrix& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return mul(x, x.tape()->constant(std::move(mask)));
}

// ---- Adam --------------------------------------------------------------------

void adam_step(ParameterStore& params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (!p.grad.allFinite()) throw NumericalError("non-finite gradient in parameter " + p.name);
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
      state.v.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (state.m[i].rows() != p.value.rows() || state.m[i].cols() != p.value.cols()) {
      shape_mismatch("adam_step", state.m[i], p.value);
    }
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= state.lr * (state.m[i].array() / c1) /
                       ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

// ---- gradient check ----------------------------------------------------------

GradCheckResult grad_check(ParameterStore& params, const LossBuilder& loss, double eps,
                           std::size_t max_coordinates, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw UsageError("grad_check: eps must lie in [1e-7, 1e-3]");
  max_coordinates = std::max<std::size_t>(max_coordinates, 200);

  params.zero_grad();
  {
    Tape tape;
    Tensor l = loss(tape);
    if (!std::isfinite(l.scalar())) throw NumericalError("grad_check: loss is not finite");
    tape.backward(l);
  }

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index k = 0; k < params[p].value.size(); ++k) coords.emplace_back(p, k);
  }
  if (coords.size() > max_coordinates) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coordinates; ++i) {
      std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coordinates);
  }

  auto evaluate = [&]() {
    Tape tape(false);
    double v = loss(tape).scalar();
    if (!std::isfinite(v)) throw NumericalError("grad_check: loss is not finite");
    return v;
  };

  GradCheckResult result;
  for (auto [p, k] : coords) {
    Parameter& param = params[p];
    double& x = param.value.data()[k];
    const double saved = x;
    x = saved + eps;
    const double up = evaluate();
    x = saved - eps;
    const double down = evaluate();
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = param.grad.data()[k];
    const double rel = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    ++result.coordinates_checked;
    if (rel > result.max_relative_error || result.coordinates_checked == 1) {
      result.max_relative_error = rel;
      result.worst_parameter = param.name;
      result.worst_index = static_cast<std::size_t>(k);
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace seqsleep::diff
