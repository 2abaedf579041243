#include <doctest.h>

#include <cmath>
#include <random>

#include "keenkt/autodiff.hpp"
#include "keenkt/gradcheck.hpp"
#include "keenkt/optimizer.hpp"

using namespace keenkt;

TEST_CASE("softplus(0) is ln 2") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(0.0));
  CHECK(softplus(x).value().item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("matmul by identity returns input") {
  Tape t;
  Tensor id({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({3, 5}, rng);
  Var y = matmul(t.constant(id), t.constant(x));
  for (Index i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i]);
}

TEST_CASE("masked softmax over equal scores with full mask is uniform") {
  Tape t;
  Var s = t.leaf(Tensor({1, 3}, {1, 1, 1}));
  Var m = t.constant(Tensor::ones({1, 3}));
  Tensor y = masked_softmax_last(s, m).value();
  for (Index i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("masked softmax rows sum to one; fully-masked rows are zero") {
  std::mt19937_64 rng(11);
  Tape t;
  Var s = t.leaf(Tensor::randn({4, 6}, rng, 2.0));
  Tensor mask = Tensor::zeros({4, 6});
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < 6; ++i) mask[0 * 6 + i] = 1.0;  // full row
  for (Index i = 0; i < 6; ++i) mask[1 * 6 + i] = coin(rng) ? 1.0 : 0.0;
  mask[1 * 6 + 2] = 1.0;
  // row 2 stays fully masked
  mask[3 * 6 + 5] = 1.0;
  Tensor y = masked_softmax_last(s, t.constant(mask)).value();
  for (Index r : {Index{0}, Index{1}, Index{3}}) {
    double rowsum = 0.0;
    for (Index j = 0; j < 6; ++j) {
      CHECK(y[r * 6 + j] >= 0.0);
      if (mask[r * 6 + j] < 0.5) CHECK(y[r * 6 + j] == 0.0);
      rowsum += y[r * 6 + j];
    }
    CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-10));
  }
  for (Index j = 0; j < 6; ++j) CHECK(y[2 * 6 + j] == 0.0);
}

TEST_CASE("concat then slice recovers inputs bit-exactly") {
  std::mt19937_64 rng(5);
  Tape t;
  Tensor a = Tensor::randn({2, 4, 3}, rng);
  Tensor b = Tensor::randn({2, 4, 5}, rng);
  Var c = concat_last(t.leaf(a), t.leaf(b));
  Tensor ra = slice_last(c, 0, 3).value();
  Tensor rb = slice_last(c, 3, 5).value();
  for (Index i = 0; i < a.size(); ++i) CHECK(ra[i] == a[i]);
  for (Index i = 0; i < b.size(); ++i) CHECK(rb[i] == b[i]);
}

TEST_CASE("gather-rows backward conserves gradient mass") {
  std::mt19937_64 rng(7);
  Tape t;
  Var table = t.leaf(Tensor::randn({6, 3}, rng));
  IndexArray idx({5}, {0, 2, 2, 5, 0});
  Var g = gather_rows(table, idx);
  Tensor w = Tensor::randn({5, 3}, rng);
  Var loss = sum(mul(g, t.constant(w)));
  t.backward(loss);
  Tensor tg = t.grad(table);
  CHECK(std::abs(tg.array().sum() - w.array().sum()) < 1e-12);
}

TEST_CASE("gather-rows rejects out-of-range indices") {
  Tape t;
  Var table = t.leaf(Tensor::zeros({4, 2}));
  CHECK_THROWS_AS(gather_rows(table, IndexArray({1}, {4})), DomainError);
  CHECK_THROWS_AS(gather_rows(table, IndexArray({1}, {-1})), DomainError);
}

TEST_CASE("loss = x^2 at x=3 gives gradient 6") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var loss = sum(square(x));
  t.backward(loss);
  CHECK(t.grad(x).item() == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("loss = sigmoid(x) at x=0 gives gradient 0.25") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(0.0));
  Var loss = sum(sigmoid(x));
  t.backward(loss);
  CHECK(t.grad(x).item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("random 3-layer composite matches finite differences") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::randn({2, 4}, rng, 0.5);
  Tensor w1 = Tensor::randn({4, 5}, rng, 0.5);
  Tensor w2 = Tensor::randn({5, 3}, rng, 0.5);
  Tensor w3 = Tensor::randn({3, 1}, rng, 0.5);
  auto res = check_scalar_graph(
      "composite",
      [](Tape&, const std::vector<Var>& v) {
        Var h1 = tanh(matmul(v[0], v[1]));
        Var h2 = sigmoid(matmul(h1, v[2]));
        return sum(square(matmul(h2, v[3])));
      },
      {x, w1, w2, w3}, 1e-4);
  CHECK(res.pass);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("per-op finite difference table passes") {
  auto results = check_all_ops(/*seed=*/42, 1e-4, /*points=*/3);
  CHECK(results.size() >= 24);
  for (const auto& r : results) {
    INFO("op ", r.name, " max_rel_err ", r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("backward rejects non-scalar losses and consumed tapes") {
  Tape t;
  Var x = t.leaf(Tensor::ones({2, 2}));
  Var y = square(x);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
  Var loss = sum(y);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), ShapeError);
}

TEST_CASE("shape mismatch and domain errors are rejected") {
  Tape t;
  Var a = t.leaf(Tensor::ones({2, 3}));
  Var b = t.leaf(Tensor::ones({3, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, t.leaf(Tensor::ones({2, 2}))), ShapeError);
  CHECK_THROWS_AS(sqrt(t.leaf(Tensor::scalar(0.0))), DomainError);
  CHECK_THROWS_AS(log(t.leaf(Tensor::scalar(-1.0))), DomainError);
  CHECK_THROWS_AS(inv_one_plus(t.leaf(Tensor::scalar(-0.1))), DomainError);
}

TEST_CASE("parameter gradients accumulate across uses") {
  Parameter p("w", Tensor::scalar(2.0));
  Tape t;
  Var w = t.param(p);
  Var loss = add(sum(square(w)), sum(scalar_mul(w, 3.0)));  // w^2 + 3w -> 2w+3 = 7
  t.backward(loss);
  CHECK(p.grad.item() == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Parameter p("w", Tensor({2}, {1.5, -0.5}));
  AdamOptimizer opt({&p}, 0.001);
  opt.step();
  CHECK(p.value[0] == 1.5);
  CHECK(p.value[1] == -0.5);
}

TEST_CASE("adam: one unit-gradient step moves by about lr") {
  Parameter p("w", Tensor::scalar(0.0));
  AdamOptimizer opt({&p}, 0.001);
  p.grad[0] = 1.0;
  opt.step();
  // t=1 bias correction makes m_hat = 1, v_hat = 1
  double expected = -0.001 / (1.0 + 1e-8);
  CHECK(p.value.item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam: repeated identical gradients move monotonically") {
  Parameter p("w", Tensor::scalar(1.0));
  AdamOptimizer opt({&p}, 0.01);
  double prev = p.value.item();
  for (int i = 0; i < 5; ++i) {
    p.zero_grad();
    p.grad[0] = 0.5;
    opt.step();
    CHECK(p.value.item() < prev);
    prev = p.value.item();
  }
}

TEST_CASE("non-finite forward output raises with the op name") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(1000.0));
  try {
    exp(x);  // overflows to inf
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.op() == "exp");
  }
}

TEST_CASE("broadcast add of trailing vector and scalar") {
  Tape t;
  Var a = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var v = t.leaf(Tensor({3}, {10, 20, 30}));
  Tensor out = add(a, v).value();
  CHECK(out[0] == 11);
  CHECK(out[4] == 25);
  Var s = t.leaf(Tensor::scalar(100.0));
  Tensor out2 = add(a, s).value();
  CHECK(out2[5] == 106);
}
