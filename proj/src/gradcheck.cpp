#include "keenkt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "keenkt/model.hpp"

namespace keenkt {

GradCheckResult check_scalar_graph(const std::string& name, const ScalarGraphFn& fn,
                                   const std::vector<Tensor>& inputs, double tol,
                                   double step) {
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(tape.leaf(x));
    return fn(tape, vars).value().item();
  };

  // analytic pass
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x));
    Var loss = fn(tape, vars);
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult res{name, 0.0, false};
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index e = 0; e < inputs[i].size(); ++e) {
      double x0 = probe[i][e];
      probe[i][e] = x0 + step;
      double fp = eval(probe);
      probe[i][e] = x0 - step;
      double fm = eval(probe);
      probe[i][e] = x0;
      double numeric = (fp - fm) / (2.0 * step);
      double a = analytic[i][e];
      double err = std::abs(a - numeric) /
                   std::max({1.0, std::abs(a), std::abs(numeric)});
      res.max_rel_err = std::max(res.max_rel_err, err);
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

namespace {

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// Values bounded away from zero (for kinked ops: relu, elu, l1-norm).
Tensor off_kink_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (Index i = 0; i < t.size(); ++i) t[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return t;
}

// Weighted full reduction so the loss is sensitive to every output entry.
Var weighted_sum(Tape& tape, Var x, const Tensor& w) {
  return sum(mul(x, tape.constant(w)));
}

struct OpCase {
  std::string name;
  std::function<GradCheckResult(std::mt19937_64&, double)> run;
};

GradCheckResult merge(GradCheckResult a, const GradCheckResult& b) {
  a.max_rel_err = std::max(a.max_rel_err, b.max_rel_err);
  a.pass = a.pass && b.pass;
  return a;
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary_case = [](std::string name, Var (*op)(Var), double lo, double hi,
                       bool off_kink = false) {
    return OpCase{name, [name, op, lo, hi, off_kink](std::mt19937_64& rng, double tol) {
      Tensor x = off_kink ? off_kink_tensor({3, 4}, rng)
                          : uniform_tensor({3, 4}, rng, lo, hi);
      Tensor w = uniform_tensor({3, 4}, rng, -1.0, 1.0);
      return check_scalar_graph(
          name,
          [op, &w](Tape& t, const std::vector<Var>& v) {
            return weighted_sum(t, op(v[0]), w);
          },
          {x}, tol);
    }};
  };

  cases.push_back({"matmul", [](std::mt19937_64& rng, double tol) {
    Tensor a = uniform_tensor({2, 3, 4}, rng, -1, 1);
    Tensor b = uniform_tensor({4, 3}, rng, -1, 1);
    Tensor bb = uniform_tensor({2, 4, 3}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 3, 3}, rng, -1, 1);
    Tensor w2 = uniform_tensor({2, 3, 3}, rng, -1, 1);
    auto shared = check_scalar_graph(
        "matmul",
        [&](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, matmul(v[0], v[1]), w);
        },
        {a, b}, tol);
    auto batched = check_scalar_graph(
        "matmul",
        [&](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, matmul(v[0], v[1]), w2);
        },
        {a, bb}, tol);
    return merge(shared, batched);
  }});

  auto binary_case = [](std::string name, Var (*op)(Var, Var)) {
    return OpCase{name, [name, op](std::mt19937_64& rng, double tol) {
      Tensor a = uniform_tensor({2, 3, 4}, rng, -1, 1);
      Tensor same = uniform_tensor({2, 3, 4}, rng, -1, 1);
      Tensor vec = uniform_tensor({4}, rng, -1, 1);
      Tensor sc = uniform_tensor({1}, rng, -1, 1);
      Tensor w = uniform_tensor({2, 3, 4}, rng, -1, 1);
      auto graph = [op, &w](Tape& t, const std::vector<Var>& v) {
        return weighted_sum(t, op(v[0], v[1]), w);
      };
      auto r = check_scalar_graph(name, graph, {a, same}, tol);
      r = merge(r, check_scalar_graph(name, graph, {a, vec}, tol));
      r = merge(r, check_scalar_graph(name, graph, {a, sc}, tol));
      return r;
    }};
  };
  cases.push_back(binary_case("add", add));
  cases.push_back(binary_case("sub", sub));
  cases.push_back(binary_case("elementwise-mul", mul));

  cases.push_back({"scalar-mul", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({3, 4}, rng, -1, 1);
    Tensor w = uniform_tensor({3, 4}, rng, -1, 1);
    std::uniform_real_distribution<double> cd(-2.0, 2.0);
    double c = cd(rng);
    return check_scalar_graph(
        "scalar-mul",
        [&w, c](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, scalar_mul(v[0], c), w);
        },
        {x}, tol);
  }});

  cases.push_back({"concat-last-axis", [](std::mt19937_64& rng, double tol) {
    Tensor a = uniform_tensor({2, 3}, rng, -1, 1);
    Tensor b = uniform_tensor({2, 2}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 5}, rng, -1, 1);
    return check_scalar_graph(
        "concat-last-axis",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, concat_last(v[0], v[1]), w);
        },
        {a, b}, tol);
  }});

  cases.push_back({"slice-last-axis", [](std::mt19937_64& rng, double tol) {
    Tensor a = uniform_tensor({2, 5}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 3}, rng, -1, 1);
    return check_scalar_graph(
        "slice-last-axis",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, slice_last(v[0], 1, 3), w);
        },
        {a}, tol);
  }});

  cases.push_back({"gather-rows", [](std::mt19937_64& rng, double tol) {
    Tensor table = uniform_tensor({5, 3}, rng, -1, 1);
    std::uniform_int_distribution<Index> id(0, 4);
    std::vector<Index> raw(8);
    for (Index& i : raw) i = id(rng);
    IndexArray idx({2, 4}, raw);
    Tensor w = uniform_tensor({2, 4, 3}, rng, -1, 1);
    return check_scalar_graph(
        "gather-rows",
        [&w, idx](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, gather_rows(v[0], idx), w);
        },
        {table}, tol);
  }});

  cases.push_back(unary_case("softplus", softplus, -2, 2));
  cases.push_back(unary_case("tanh", tanh, -2, 2));
  cases.push_back(unary_case("elu", elu, 0, 0, /*off_kink=*/true));
  cases.push_back(unary_case("sqrt", sqrt, 0.5, 2.5));
  cases.push_back(unary_case("exp", exp, -2, 2));
  cases.push_back(unary_case("log", log, 0.5, 2.5));
  cases.push_back(unary_case("sigmoid", sigmoid, -2, 2));
  cases.push_back(unary_case("relu", relu, 0, 0, /*off_kink=*/true));
  cases.push_back(unary_case("square", square, -2, 2));

  cases.push_back({"sum", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({3, 4}, rng, -1, 1);
    return check_scalar_graph(
        "sum", [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }, {x}, tol);
  }});
  cases.push_back({"mean", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({3, 4}, rng, -1, 1);
    return check_scalar_graph(
        "mean", [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }, {x}, tol);
  }});

  cases.push_back({"sum-last-axis", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({2, 3, 4}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 3}, rng, -1, 1);
    return check_scalar_graph(
        "sum-last-axis",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, sum_last(v[0]), w);
        },
        {x}, tol);
  }});

  cases.push_back({"l1-norm-last-axis", [](std::mt19937_64& rng, double tol) {
    Tensor x = off_kink_tensor({2, 3, 4}, rng);
    Tensor w = uniform_tensor({2, 3}, rng, -1, 1);
    return check_scalar_graph(
        "l1-norm-last-axis",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, l1_norm_last(v[0]), w);
        },
        {x}, tol);
  }});

  cases.push_back({"masked-softmax-last-axis", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({3, 4}, rng, -2, 2);
    Tensor m({3, 4}, {1, 1, 0, 1,
                      0, 0, 0, 0,   // fully-masked row
                      1, 0, 1, 1});
    Tensor w = uniform_tensor({3, 4}, rng, -1, 1);
    return check_scalar_graph(
        "masked-softmax-last-axis",
        [&w, &m](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, masked_softmax_last(v[0], t.constant(m)), w);
        },
        {x}, tol);
  }});

  cases.push_back({"l2-squared-distance", [](std::mt19937_64& rng, double tol) {
    Tensor a = uniform_tensor({2, 3, 4}, rng, -1, 1);
    Tensor b = uniform_tensor({2, 5, 4}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 3, 5}, rng, -1, 1);
    return check_scalar_graph(
        "l2-squared-distance",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, l2_squared_distance(v[0], v[1]), w);
        },
        {a, b}, tol);
  }});

  cases.push_back({"inv-one-plus", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({3, 4}, rng, 0.0, 3.0);
    Tensor w = uniform_tensor({3, 4}, rng, -1, 1);
    return check_scalar_graph(
        "inv-one-plus",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, inv_one_plus(v[0]), w);
        },
        {x}, tol);
  }});

  cases.push_back({"reshape", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({2, 6}, rng, -1, 1);
    Tensor w = uniform_tensor({3, 4}, rng, -1, 1);
    return check_scalar_graph(
        "reshape",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, reshape(v[0], {3, 4}), w);
        },
        {x}, tol);
  }});

  cases.push_back({"transpose-last-two", [](std::mt19937_64& rng, double tol) {
    Tensor x = uniform_tensor({2, 3, 4}, rng, -1, 1);
    Tensor w = uniform_tensor({2, 4, 3}, rng, -1, 1);
    return check_scalar_graph(
        "transpose-last-two",
        [&w](Tape& t, const std::vector<Var>& v) {
          return weighted_sum(t, transpose_last_two(v[0]), w);
        },
        {x}, tol);
  }});

  return cases;
}

}  // namespace

std::vector<GradCheckResult> check_all_ops(std::uint64_t seed, double tol, int points) {
  std::vector<GradCheckResult> results;
  for (const OpCase& c : op_cases()) {
    GradCheckResult agg{c.name, 0.0, true};
    for (int p = 0; p < points; ++p) {
      std::mt19937_64 rng(derive_seed(seed, std::hash<std::string>{}(c.name) + p));
      agg = merge(agg, c.run(rng, tol));
    }
    agg.name = c.name;
    results.push_back(agg);
  }
  return results;
}

GradCheckResult check_total_loss_graph(std::uint64_t seed, double tol) {
  ModelConfig mc;
  mc.d = 4;
  mc.hidden = 8;
  mc.denoiser_hidden = 8;
  mc.n_blocks = 2;
  const Index n_questions = 6;
  KeenModel model(mc, n_questions, derive_seed(seed, 0xA1));

  std::mt19937_64 data_rng(derive_seed(seed, 0xA2));
  std::uniform_int_distribution<Index> qd(0, n_questions - 1);
  std::bernoulli_distribution rd(0.5);
  std::vector<StudentSequence> seqs(3);
  Index lengths[3] = {5, 4, 3};
  for (int i = 0; i < 3; ++i) {
    seqs[i].student_id = "g" + std::to_string(i);
    for (Index t = 0; t < lengths[i]; ++t) {
      seqs[i].questions.push_back(qd(data_rng));
      seqs[i].responses.push_back(rd(data_rng) ? 1 : 0);
      seqs[i].anomalies.push_back(AnomalyLabel::kNone);
    }
  }
  std::vector<const StudentSequence*> ptrs{&seqs[0], &seqs[1], &seqs[2]};
  Batch batch = make_batch(ptrs, n_questions);

  // the injected noise must be identical across evaluations, so each forward
  // re-seeds its own stream
  const std::uint64_t noise_seed = derive_seed(seed, 0xA3);
  auto eval_loss = [&]() {
    std::mt19937_64 noise_rng(noise_seed);
    Tape tape;
    return model.forward(tape, batch, RunMode::kTrain, &noise_rng).total.value().item();
  };

  std::vector<Parameter*> params = model.parameters();
  for (Parameter* p : params) p->zero_grad();
  {
    std::mt19937_64 noise_rng(noise_seed);
    Tape tape;
    auto out = model.forward(tape, batch, RunMode::kTrain, &noise_rng);
    tape.backward(out.total);
  }

  GradCheckResult res{"total-loss-graph", 0.0, false};
  const double step = 1e-5;
  for (Parameter* p : params) {
    for (Index e = 0; e < p->value.size(); ++e) {
      double v0 = p->value[e];
      p->value[e] = v0 + step;
      double fp = eval_loss();
      p->value[e] = v0 - step;
      double fm = eval_loss();
      p->value[e] = v0;
      double numeric = (fp - fm) / (2.0 * step);
      double analytic = p->grad[e];
      double err = std::abs(analytic - numeric) /
                   std::max({1.0, std::abs(analytic), std::abs(numeric)});
      res.max_rel_err = std::max(res.max_rel_err, err);
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

}  // namespace keenkt
