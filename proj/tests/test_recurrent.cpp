#include "doctest.h"
#include "oracles.hpp"

#include "seqsleep/recurrent.hpp"

#include <cmath>

using namespace seqsleep;
using namespace seqsleep::recurrent;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

void randomize(diff::ParameterStore& store, Rng& rng, double scale = 0.7) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    store[i].value = random_matrix(store[i].value.rows(), store[i].value.cols(), rng, scale);
  }
}

Matrix run_cell(const Matrix& x, const Matrix& h, const GruParams& p) {
  diff::Tape tape(false);
  return gru_cell(tape, tape.constant(x), tape.constant(h), p).value();
}

Matrix run_bi(const Matrix& inputs, std::size_t steps, const BiRnnParams& p) {
  diff::Tape tape(false);
  return bidirectional_pass(tape, tape.constant(inputs), steps, p).value();
}

}  // namespace

TEST_CASE("GRU cell with everything zero stays at zero") {
  diff::ParameterStore store;
  Rng rng(1);
  GruParams p = make_gru(store, "g.", 3, 2, rng);
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
  CHECK(run_cell(Matrix::Zero(1, 3), Matrix::Zero(1, 2), p) == Matrix::Zero(1, 2));
}

TEST_CASE("saturated update gate copies the previous state") {
  diff::ParameterStore store;
  Rng rng(2);
  GruParams p = make_gru(store, "g.", 3, 2, rng);
  p.b_z->value.setConstant(30.0);
  const Matrix h = random_matrix(4, 2, rng);
  const Matrix out = run_cell(random_matrix(4, 3, rng), h, p);
  CHECK((out - h).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("GRU cell matches the scalar oracle") {
  diff::ParameterStore store;
  Rng rng(3);
  GruParams p = make_gru(store, "g.", 3, 2, rng);
  randomize(store, rng);
  const oracle::Gru ref = oracle::gru_from(store, "g.");
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix h = random_matrix(5, 2, rng);
  const Matrix out = run_cell(x, h, p);
  for (Eigen::Index n = 0; n < 5; ++n) {
    const oracle::Vec o = ref.step({x(n, 0), x(n, 1), x(n, 2)}, {h(n, 0), h(n, 1)});
    CHECK(out(n, 0) == doctest::Approx(o[0]).epsilon(1e-13));
    CHECK(out(n, 1) == doctest::Approx(o[1]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(run_cell(random_matrix(5, 4, rng), h, p), ShapeError);
}

TEST_CASE("single-step bidirectional pass") {
  diff::ParameterStore store;
  Rng rng(4);
  BiRnnParams p = make_birnn(store, "bi.", 3, 2, 4, rng);
  randomize(store, rng);
  const Matrix x = random_matrix(1, 3, rng);
  const Matrix hf = run_cell(x, Matrix::Zero(1, 2), p.forward);
  const Matrix hb = run_cell(x, Matrix::Zero(1, 2), p.backward);
  Matrix cat(1, 4);
  cat << hb, hf;
  const Matrix expected = cat * p.w_out->value.transpose() + p.b_out->value;
  CHECK((run_bi(x, 1, p) - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("zero parameters emit the output bias everywhere") {
  diff::ParameterStore store;
  Rng rng(5);
  BiRnnParams p = make_birnn(store, "bi.", 3, 2, 4, rng);
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
  p.b_out->value = Matrix{{1.0, -2.0, 3.0, 0.5}};
  const Matrix out = run_bi(random_matrix(6 * 2, 3, rng), 6, p);
  for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK(out.row(r) == p.b_out->value);
}

TEST_CASE("bidirectional pass matches the unrolled oracle, batched") {
  diff::ParameterStore store;
  Rng rng(6);
  BiRnnParams p = make_birnn(store, "bi.", 3, 2, 5, rng);
  randomize(store, rng);
  const oracle::BiRnn ref = oracle::birnn_from(store, "bi.");
  const std::size_t K = 4, N = 3;
  const Matrix x = random_matrix(K * N, 3, rng);
  const Matrix out = run_bi(x, K, p);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<oracle::Vec> xs;
    for (std::size_t t = 0; t < K; ++t) {
      const auto row = x.row(static_cast<Eigen::Index>(t * N + n));
      xs.push_back({row(0), row(1), row(2)});
    }
    const auto ys = ref.run(xs);
    for (std::size_t t = 0; t < K; ++t) {
      for (std::size_t o = 0; o < 5; ++o) {
        CHECK(out(static_cast<Eigen::Index>(t * N + n), static_cast<Eigen::Index>(o)) ==
              doctest::Approx(ys[t][o]).epsilon(1e-12));
      }
    }
  }
  diff::Tape tape(false);
  CHECK_THROWS_AS(bidirectional_pass(tape, tape.constant(Matrix(0, 3)), 1, p), ShapeError);
  CHECK_THROWS_AS(bidirectional_pass(tape, tape.constant(x), 5, p), ShapeError);
}

TEST_CASE("stacked layers match the unrolled oracle") {
  diff::ParameterStore store;
  Rng rng(12);
  BiRnnParams p = make_birnn(store, "bi.", 3, 2, 4, rng, 3);
  CHECK(p.upper_forward.size() == 2);
  CHECK(store.contains("bi.bw3.W_hh"));
  CHECK(store.get("bi.fw2.W_sr").value.cols() == 4);
  randomize(store, rng);
  const oracle::BiRnn ref = oracle::birnn_from(store, "bi.");
  REQUIRE(ref.upper_fw.size() == 2);
  const std::size_t K = 5, N = 2;
  const Matrix x = random_matrix(K * N, 3, rng);
  const Matrix out = run_bi(x, K, p);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<oracle::Vec> xs;
    for (std::size_t t = 0; t < K; ++t) {
      const auto row = x.row(static_cast<Eigen::Index>(t * N + n));
      xs.push_back({row(0), row(1), row(2)});
    }
    const auto ys = ref.run(xs);
    for (std::size_t t = 0; t < K; ++t) {
      for (std::size_t o = 0; o < 4; ++o) {
        CHECK(out(static_cast<Eigen::Index>(t * N + n), static_cast<Eigen::Index>(o)) ==
              doctest::Approx(ys[t][o]).epsilon(1e-12));
      }
    }
  }
  diff::Parameter& xp = store.add("x", x, false);
  const Matrix r = random_matrix(K * N, 4, rng);
  auto loss = [&](diff::Tape& tape) {
    return diff::sum(diff::mul(bidirectional_pass(tape, tape.param(xp), K, p), tape.constant(r)));
  };
  CHECK(diff::grad_check(store, loss).max_relative_error < 1e-5);
  diff::ParameterStore other;
  CHECK_THROWS_AS(make_birnn(other, "bi.", 3, 2, 4, rng, 0), UsageError);
}

TEST_CASE("time reversal with swapped directions reverses the output") {
  Rng rng(7);
  diff::ParameterStore a;
  BiRnnParams pa = make_birnn(a, "bi.", 3, 4, 3, rng);
  randomize(a, rng);
  diff::ParameterStore b = a;
  BiRnnParams pb;
  pb.forward = {&b.get("bi.bw.W_sr"), &b.get("bi.bw.W_sz"), &b.get("bi.bw.W_sh"),
                &b.get("bi.bw.W_hr"), &b.get("bi.bw.W_hz"), &b.get("bi.bw.W_hh"),
                &b.get("bi.bw.b_r"),  &b.get("bi.bw.b_z"),  &b.get("bi.bw.b_h")};
  pb.backward = {&b.get("bi.fw.W_sr"), &b.get("bi.fw.W_sz"), &b.get("bi.fw.W_sh"),
                 &b.get("bi.fw.W_hr"), &b.get("bi.fw.W_hz"), &b.get("bi.fw.W_hh"),
                 &b.get("bi.fw.b_r"),  &b.get("bi.fw.b_z"),  &b.get("bi.fw.b_h")};
  pb.w_out = &b.get("bi.W_out");
  pb.b_out = &b.get("bi.b_out");
  // The output layer reads [h_b ; h_f]; swapping roles swaps its column halves.
  const Matrix w = pa.w_out->value;
  pb.w_out->value << w.rightCols(4), w.leftCols(4);

  const std::size_t K = 7, N = 2;
  const Matrix x = random_matrix(K * N, 3, rng);
  Matrix reversed(K * N, 3);
  for (std::size_t t = 0; t < K; ++t) {
    reversed.middleRows(static_cast<Eigen::Index>(t * N), N) =
        x.middleRows(static_cast<Eigen::Index>((K - 1 - t) * N), N);
  }
  const Matrix ya = run_bi(x, K, pa);
  const Matrix yb = run_bi(reversed, K, pb);
  for (std::size_t t = 0; t < K; ++t) {
    const Matrix diff = yb.middleRows(static_cast<Eigen::Index>(t * N), N) -
                        ya.middleRows(static_cast<Eigen::Index>((K - 1 - t) * N), N);
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("BPTT through K=5 matches finite differences") {
  Rng rng(8);
  diff::ParameterStore store;
  BiRnnParams p = make_birnn(store, "bi.", 3, 3, 2, rng);
  randomize(store, rng, 0.5);
  diff::Parameter& x = store.add("x", random_matrix(5 * 2, 3, rng), false);
  const Matrix r = random_matrix(5 * 2, 2, rng);
  auto loss = [&](diff::Tape& tape) {
    return diff::sum(
        diff::mul(bidirectional_pass(tape, tape.param(x), 5, p), tape.constant(r)));
  };
  CHECK(diff::grad_check(store, loss).max_relative_error < 1e-5);
}

TEST_CASE("GRU cell gradient matches finite differences") {
  Rng rng(9);
  diff::ParameterStore store;
  GruParams p = make_gru(store, "g.", 3, 2, rng);
  randomize(store, rng);
  diff::Parameter& x = store.add("x", random_matrix(3, 3, rng), false);
  diff::Parameter& h = store.add("h", random_matrix(3, 2, rng), false);
  const Matrix r = random_matrix(3, 2, rng);
  auto loss = [&](diff::Tape& tape) {
    return diff::sum(diff::mul(gru_cell(tape, tape.param(x), tape.param(h), p), tape.constant(r)));
  };
  CHECK(diff::grad_check(store, loss).max_relative_error < 1e-5);
}

TEST_CASE("states stay bounded over long sequences") {
  Rng rng(10);
  diff::ParameterStore store;
  BiRnnParams p = make_birnn(store, "bi.", 4, 6, 3, rng);
  randomize(store, rng, 3.0);
  const Matrix x = random_matrix(500, 4, rng, 10.0);
  Matrix h = Matrix::Zero(1, 6);
  for (Eigen::Index t = 0; t < 500; ++t) {
    h = run_cell(x.row(t), h, p.forward);
    CHECK(h.cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK(run_bi(x, 500, p).allFinite());
}

TEST_CASE("Glorot initialisation bounds") {
  Rng rng(11);
  const Matrix m = glorot_uniform(30, 50, rng);
  const double s = std::sqrt(6.0 / 80.0);
  CHECK(m.cwiseAbs().maxCoeff() <= s);
  CHECK(m.cwiseAbs().maxCoeff() > 0.9 * s);
  CHECK(std::abs(m.mean()) < 0.05);
}
