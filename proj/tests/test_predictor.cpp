#include <doctest.h>

#include <cmath>
#include <random>

#include "keenkt/predictor.hpp"

using namespace keenkt;

TEST_CASE("score with all-zero weights outputs 0.5") {
  std::mt19937_64 rng(1);
  PredictorWeights w(6, 4, rng);
  w.w1.value.array().setZero();
  w.w2.value.array().setZero();
  Tape tape;
  Var h = tape.constant(Tensor::randn({2, 3, 4}, rng));
  Var q = tape.constant(Tensor::randn({2, 3, 2}, rng));
  ScoreOut out = predictor_score(tape, w, h, q);
  for (Index i = 0; i < out.p.value().size(); ++i) {
    CHECK(out.s.value()[i] == 0.0);
    CHECK(out.p.value()[i] == 0.5);
  }
}

TEST_CASE("s = ln 3 maps to p = 0.75") {
  std::mt19937_64 rng(2);
  PredictorWeights w(2, 2, rng);
  w.w1.value.array().setZero();
  w.w2.value.array().setZero();
  w.b2.value[0] = std::log(3.0);
  Tape tape;
  Var h = tape.constant(Tensor::ones({1, 1, 1}));
  Var q = tape.constant(Tensor::ones({1, 1, 1}));
  ScoreOut out = predictor_score(tape, w, h, q);
  CHECK(out.p.value().item() == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("random weights keep p strictly inside (0,1)") {
  std::mt19937_64 rng(3);
  PredictorWeights w(5, 7, rng);
  Tape tape;
  Var h = tape.constant(Tensor::randn({3, 4, 3}, rng, 2.0));
  Var q = tape.constant(Tensor::randn({3, 4, 2}, rng, 2.0));
  ScoreOut out = predictor_score(tape, w, h, q);
  for (Index i = 0; i < out.p.value().size(); ++i) {
    CHECK(out.p.value()[i] > 0.0);
    CHECK(out.p.value()[i] < 1.0);
  }
}

TEST_CASE("confidence anchors") {
  Tape tape;
  Var zero_sigma = tape.constant(Tensor::zeros({1, 1, 3}));
  CHECK(confidence(tape, zero_sigma, 0.7).value().item() == 1.0);

  Var sigma = tape.constant(Tensor({1, 1, 3}, {0.5, 1.0, 0.25}));
  CHECK(confidence(tape, sigma, 0.0).value().item() == 1.0);

  // gamma * ||sigma||_1 = ln 2  ->  kappa = 0.5
  Var s2 = tape.constant(Tensor({1, 1, 2}, {std::log(2.0) / 2, std::log(2.0) / 2}));
  CHECK(confidence(tape, s2, 1.0).value().item() == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(confidence(tape, sigma, -0.1), DomainError);
}

TEST_CASE("blend anchors") {
  Tape tape;
  Var p = tape.constant(Tensor({2}, {0.8, 0.3}));
  Var full = tape.constant(Tensor({2}, {1.0, 1.0}));
  Tensor y1 = blend(tape, p, full).value();
  CHECK(y1[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(y1[1] == doctest::Approx(0.3).epsilon(1e-12));

  Var half = tape.constant(Tensor({2}, {0.5, 0.5}));
  Tensor y2 = blend(tape, p, half).value();
  CHECK(y2[0] == doctest::Approx(0.65).epsilon(1e-12));

  Var tiny = tape.constant(Tensor({2}, {1e-12, 1e-12}));
  Tensor y3 = blend(tape, p, tiny).value();
  CHECK(y3[0] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("bce anchors") {
  Tape tape;
  Var mask = tape.constant(Tensor::ones({2}));

  Var flat = tape.constant(Tensor({2}, {0.5, 0.5}));
  Var labels = tape.constant(Tensor({2}, {1.0, 0.0}));
  CHECK(bce_loss(tape, flat, labels, mask).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Var near = tape.constant(Tensor({2}, {1.0 - 1e-9, 1e-9}));
  CHECK(bce_loss(tape, near, labels, mask).value().item() < 1e-8);

  Var y = tape.constant(Tensor({2}, {0.9, 0.2}));
  CHECK(bce_loss(tape, y, labels, mask).value().item() ==
        doctest::Approx(0.164252033486018).epsilon(1e-9));
}

TEST_CASE("masked positions contribute exactly zero to bce") {
  Tape tape;
  Var y = tape.constant(Tensor({4}, {0.9, 0.2, 0.7, 0.4}));
  Var r = tape.constant(Tensor({4}, {1.0, 0.0, 1.0, 1.0}));
  Var m_all = tape.constant(Tensor({4}, {1.0, 1.0, 0.0, 0.0}));
  Var m_sub = tape.constant(Tensor({4}, {1.0, 1.0, 1.0, 1.0}));
  Tape tape2;
  Var y2 = tape2.constant(Tensor({2}, {0.9, 0.2}));
  Var r2 = tape2.constant(Tensor({2}, {1.0, 0.0}));
  Var m2 = tape2.constant(Tensor::ones({2}));
  double with_pad = bce_loss(tape, y, r, m_all).value().item();
  double without_pad = bce_loss(tape2, y2, r2, m2).value().item();
  CHECK(with_pad == without_pad);
  (void)m_sub;
}

TEST_CASE("bce supports the unnormalized sum form") {
  Tape tape;
  Var y = tape.constant(Tensor({2}, {0.9, 0.2}));
  Var r = tape.constant(Tensor({2}, {1.0, 0.0}));
  Var m = tape.constant(Tensor::ones({2}));
  double normalized = bce_loss(tape, y, r, m, true).value().item();
  Tape tape2;
  Var y2 = tape2.constant(Tensor({2}, {0.9, 0.2}));
  Var r2 = tape2.constant(Tensor({2}, {1.0, 0.0}));
  Var m2 = tape2.constant(Tensor::ones({2}));
  double summed = bce_loss(tape2, y2, r2, m2, false).value().item();
  CHECK(summed == doctest::Approx(2.0 * normalized).epsilon(1e-12));
}

TEST_CASE("total loss composition") {
  Tape tape;
  Var bce = tape.constant(Tensor::scalar(1.0));
  Var mse = tape.constant(Tensor::scalar(2.0));
  Var nce = tape.constant(Tensor::scalar(3.0));
  CHECK(total_loss(bce, mse, nce, 0.0, 0.0).value().item() == 1.0);
  CHECK(total_loss(bce, mse, nce, 0.15, 0.04).value().item() ==
        doctest::Approx(1.42).epsilon(1e-12));
  CHECK(total_loss(bce, mse, nce, 0.15, 0.04).value().item() >= 1.0);
  CHECK_THROWS_AS(total_loss(bce, mse, nce, -0.1, 0.0), DomainError);
}

TEST_CASE("kappa decreases strictly in the sigma l1 norm") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    Tensor sa({1, 1, 3}), sb({1, 1, 3});
    for (Index k = 0; k < 3; ++k) {
      sa[k] = d(rng);
      sb[k] = d(rng);
    }
    double la = sa.array().sum(), lb = sb.array().sum();
    if (la == lb) continue;
    Tape tape;
    double ka = confidence(tape, tape.constant(sa), 0.4).value().item();
    double kb = confidence(tape, tape.constant(sb), 0.4).value().item();
    CHECK(((la < lb) == (ka > kb)));
  }
}

TEST_CASE("blend keeps y_hat within the kappa-shrunk band") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> pd(0.001, 0.999);
  std::uniform_real_distribution<double> sd(0.0, 4.0);
  std::uniform_real_distribution<double> gd(0.01, 3.0);
  for (int i = 0; i < 1000; ++i) {
    double p = pd(rng), g = gd(rng);
    Tensor sigma({1, 1, 2}, {sd(rng), sd(rng)});
    Tape tape;
    Var kv = confidence(tape, tape.constant(sigma), g);
    double kappa = kv.value().item();
    double y = blend(tape, tape.constant(Tensor({1, 1}, {p})),
                     reshape(kv, {1, 1}))
                   .value()
                   .item();
    CHECK(std::abs(y - 0.5) <= kappa * std::abs(p - 0.5) + 1e-15);
    CHECK(std::abs(y - 0.5) <= kappa / 2 + 1e-15);
    CHECK(y > (1.0 - kappa) / 2 - 1e-15);
    CHECK(y < (1.0 + kappa) / 2 + 1e-15);
  }
}

TEST_CASE("the gradient of y_hat in p equals kappa") {
  Tape tape;
  const double kappa = 0.37;
  Var p = tape.leaf(Tensor({1}, {0.8}));
  Var k = tape.constant(Tensor({1}, {kappa}));
  Var y = blend(tape, p, k);
  tape.backward(sum(y));
  CHECK(tape.grad(p).item() == doctest::Approx(kappa).epsilon(1e-12));
}
