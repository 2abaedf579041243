#include <doctest.h>

#include <random>

#include "keenkt/encoder.hpp"

using namespace keenkt;

TEST_CASE("interaction index composition") {
  CHECK(interaction_index(5, 0, 100) == 5);
  CHECK(interaction_index(5, 1, 100) == 105);
  CHECK(interaction_index(99, 1, 100) == 199);
  CHECK_THROWS_AS(interaction_index(100, 0, 100), DomainError);
  CHECK_THROWS_AS(interaction_index(-1, 0, 100), DomainError);
  CHECK_THROWS_AS(interaction_index(5, 2, 100), DomainError);
}

namespace {

struct Fixture {
  Index q_vocab = 7;
  Index d = 4;
  std::mt19937_64 rng{99};
  EncoderTables tables{q_vocab, d, rng};
  IndexArray questions{{2, 3}, {0, 3, 6, 2, 2, 5}};
  IndexArray interactions{{2, 3}, {0, 10, 6, 9, 2, 12}};
};

}  // namespace

TEST_CASE("encode emits (B,T,d) streams with positive variances") {
  Fixture f;
  Tape tape;
  EncodedStreams enc = encode(tape, f.tables, f.questions, f.interactions);
  Shape expect{2, 3, 4};
  CHECK(enc.q_mean.shape() == expect);
  CHECK(enc.q_var.shape() == expect);
  CHECK(enc.x_mean.shape() == expect);
  CHECK(enc.x_var.shape() == expect);
  for (Index i = 0; i < enc.q_var.value().size(); ++i) {
    CHECK(enc.q_var.value()[i] > 0.0);
    CHECK(enc.x_var.value()[i] > 0.0);
  }
}

TEST_CASE("encoded betas stay strictly inside (-alpha, alpha)") {
  Fixture f;
  Tape tape;
  EncodedStreams enc = encode(tape, f.tables, f.questions, f.interactions);
  for (Index i = 0; i < enc.q_beta.value().size(); ++i) {
    CHECK(std::abs(enc.q_beta.value()[i]) < enc.q_alpha.value()[i]);
    CHECK(std::abs(enc.x_beta.value()[i]) < enc.x_alpha.value()[i]);
  }
}

TEST_CASE("encode is a pure function of tables and inputs") {
  Fixture f;
  Tape t1, t2;
  EncodedStreams a = encode(t1, f.tables, f.questions, f.interactions);
  EncodedStreams b = encode(t2, f.tables, f.questions, f.interactions);
  for (Index i = 0; i < a.x_mean.value().size(); ++i) {
    CHECK(a.x_mean.value()[i] == b.x_mean.value()[i]);
    CHECK(a.x_var.value()[i] == b.x_var.value()[i]);
  }
}

TEST_CASE("identical (q,r) prefixes produce identical moment prefixes") {
  Fixture f;
  IndexArray qs{{2, 3}, {1, 4, 2, 1, 4, 6}};
  IndexArray xs{{2, 3}, {1, 11, 2, 1, 11, 13}};
  Tape tape;
  EncodedStreams enc = encode(tape, f.tables, qs, xs);
  Index d = f.d, t = 3;
  for (Index ti = 0; ti < 2; ++ti) {  // shared prefix length 2
    for (Index k = 0; k < d; ++k) {
      CHECK(enc.x_mean.value()[(0 * t + ti) * d + k] ==
            enc.x_mean.value()[(1 * t + ti) * d + k]);
      CHECK(enc.q_var.value()[(0 * t + ti) * d + k] ==
            enc.q_var.value()[(1 * t + ti) * d + k]);
    }
  }
}

TEST_CASE("a random loss on the moment streams reaches all eight tables") {
  Fixture f;
  Tape tape;
  EncodedStreams enc = encode(tape, f.tables, f.questions, f.interactions);
  std::mt19937_64 rng(5);
  auto wsum = [&](Var v) {
    return sum(mul(v, tape.constant(Tensor::randn(v.shape(), rng))));
  };
  Var loss = add(add(wsum(enc.q_mean), wsum(enc.q_var)),
                 add(wsum(enc.x_mean), wsum(enc.x_var)));
  tape.backward(loss);
  for (Parameter* p : f.tables.parameters()) {
    INFO("table ", p->name);
    CHECK(p->grad.array().abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("taped moments agree with the plain NIG toolkit") {
  Fixture f;
  Tape tape;
  EncodedStreams enc = encode(tape, f.tables, f.questions, f.interactions);
  // recompute one position by hand through nig.hpp
  Index q0 = f.questions.data[1];  // = 3
  Index d = f.d;
  Eigen::ArrayXd raw_mu(d), raw_a(d), raw_b(d), raw_d(d);
  for (Index k = 0; k < d; ++k) {
    raw_mu[k] = f.tables.q_mu.value[q0 * d + k];
    raw_a[k] = f.tables.q_alpha.value[q0 * d + k];
    raw_b[k] = f.tables.q_beta.value[q0 * d + k];
    raw_d[k] = f.tables.q_delta.value[q0 * d + k];
  }
  NigMoments m = moments(constrain_params(raw_mu, raw_a, raw_b, raw_d));
  for (Index k = 0; k < d; ++k) {
    CHECK(enc.q_mean.value()[1 * d + k] == doctest::Approx(m.mean[k]).epsilon(1e-12));
    CHECK(enc.q_var.value()[1 * d + k] == doctest::Approx(m.var[k]).epsilon(1e-12));
  }
}
