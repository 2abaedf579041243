#include "keenkt/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace keenkt {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kConcatLast: return "concat-last-axis";
    case OpKind::kSliceLast: return "slice-last-axis";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kTanh: return "tanh";
    case OpKind::kElu: return "elu";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMaskedSoftmaxLast: return "masked-softmax-last-axis";
    case OpKind::kL1NormLast: return "l1-norm-last-axis";
    case OpKind::kSumLast: return "sum-last-axis";
    case OpKind::kL2SquaredDistance: return "l2-squared-distance";
    case OpKind::kInvOnePlus: return "inv-one-plus";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTransposeLastTwo: return "transpose-last-two";
  }
  return "unknown";
}

// ---- Var ----

const Tensor& Var::value() const {
  if (!valid()) throw ShapeError("use of invalid Var");
  return tape->value(*this);
}

const Shape& Var::shape() const { return value().shape(); }

// ---- Tape ----

Var Tape::add_slot(Tensor v, bool needs, Parameter* bound) {
  Slot s;
  s.value = std::move(v);
  s.needs_grad = needs;
  s.bound = bound;
  slots_.push_back(std::move(s));
  return Var{this, static_cast<Index>(slots_.size()) - 1};
}

Var Tape::constant(Tensor v) { return add_slot(std::move(v), false, nullptr); }

Var Tape::leaf(Tensor v) { return add_slot(std::move(v), true, nullptr); }

Var Tape::param(Parameter& p) { return add_slot(p.value, true, &p); }

const Tape::Slot& Tape::slot(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<Index>(slots_.size())) {
    throw ShapeError("Var does not belong to this tape");
  }
  return slots_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return slot(v).value; }

Tensor Tape::grad(Var v) const {
  const Slot& s = slot(v);
  if (s.grad.size() == 0) return Tensor::zeros(s.value.shape());
  return Tensor(s.value.shape(), s.grad);
}

bool Tape::needs_grad(Var v) const { return slot(v).needs_grad; }

void Tape::accumulate(Var v, const Eigen::ArrayXd& g) {
  Slot& s = slots_[static_cast<std::size_t>(v.id)];
  if (!s.needs_grad) return;
  if (s.grad.size() == 0) s.grad = Eigen::ArrayXd::Zero(s.value.size());
  s.grad += g;
}

Var Tape::emit(OpKind kind, std::initializer_list<Var> inputs, Tensor out,
               BackwardFn backward_fn) {
  if (!out.all_finite()) throw NonFiniteError(op_name(kind));
  bool needs = false;
  Node node;
  node.kind = kind;
  for (Var in : inputs) {
    if (in.tape != this) throw ShapeError("op inputs must share one tape");
    needs = needs || slot(in).needs_grad;
    if (node.n_inputs < 3) node.inputs[static_cast<std::size_t>(node.n_inputs)] = in.id;
    ++node.n_inputs;
  }
  Var out_var = add_slot(std::move(out), needs, nullptr);
  node.output = out_var.id;
  node.backward_fn = needs ? std::move(backward_fn) : BackwardFn{};
  nodes_.push_back(std::move(node));
  return out_var;
}

void Tape::backward(Var loss) {
  if (consumed_) throw ShapeError("tape already consumed by a previous backward()");
  const Slot& ls = slot(loss);
  if (ls.value.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     shape_str(ls.value.shape()));
  }
  consumed_ = true;
  {
    Slot& s = slots_[static_cast<std::size_t>(loss.id)];
    if (s.grad.size() == 0) s.grad = Eigen::ArrayXd::Zero(1);
    s.grad[0] = 1.0;
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->backward_fn) continue;
    Slot& out_slot = slots_[static_cast<std::size_t>(it->output)];
    if (out_slot.grad.size() == 0) continue;  // no gradient reached this node
    it->backward_fn(*this, out_slot.value, out_slot.grad);
  }
  for (Slot& s : slots_) {
    if (s.bound != nullptr && s.grad.size() != 0) s.bound->grad.array() += s.grad;
  }
}

// ---- op builders ----

namespace {

enum class Broadcast { kSame, kVector, kScalar };

Broadcast classify_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.last_dim()) {
    return Broadcast::kVector;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

// Sums g over leading rows down to the trailing vector shape of b.
Eigen::ArrayXd reduce_to_vector(const Eigen::ArrayXd& g, Index k) {
  Index rows = static_cast<Index>(g.size()) / k;
  Eigen::Map<const MatrixRM> gm(g.data(), rows, k);
  return gm.colwise().sum().transpose().array();
}

Shape leading_shape(const Shape& s, Index drop) {
  return Shape(s.begin(), s.end() - drop);
}

template <typename FwdFn, typename BwdFn>
Var unary_op(OpKind kind, Var a, FwdFn&& fwd, BwdFn&& bwd) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  Tensor out(x.shape(), fwd(x.array()));
  return t.emit(kind, {a}, std::move(out),
                [a, bwd](Tape& t, const Tensor& y, const Eigen::ArrayXd& g) {
                  t.accumulate(a, bwd(t.value(a).array(), y.array(), g));
                });
}

void check_positive(const char* op, const Tensor& x) {
  if (x.size() > 0 && x.array().minCoeff() <= 0.0) {
    throw DomainError(std::string(op) + ": input must be strictly positive");
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Broadcast bc = classify_broadcast("add", av, bv);
  Tensor out(av.shape());
  switch (bc) {
    case Broadcast::kSame: out.array() = av.array() + bv.array(); break;
    case Broadcast::kScalar: out.array() = av.array() + bv[0]; break;
    case Broadcast::kVector: {
      Index k = av.last_dim();
      Index rows = av.size() / k;
      Eigen::Map<MatrixRM> om(out.data(), rows, k);
      om = av.block(0, rows, k);
      om.rowwise() += bv.block(0, 1, k).row(0);
      break;
    }
  }
  return t.emit(OpKind::kAdd, {a, b}, std::move(out),
                [a, b, bc](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, g);
                  if (!t.needs_grad(b)) return;
                  switch (bc) {
                    case Broadcast::kSame: t.accumulate(b, g); break;
                    case Broadcast::kScalar:
                      t.accumulate(b, Eigen::ArrayXd::Constant(1, g.sum()));
                      break;
                    case Broadcast::kVector:
                      t.accumulate(b, reduce_to_vector(g, t.value(b).size()));
                      break;
                  }
                });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Broadcast bc = classify_broadcast("sub", av, bv);
  Tensor out(av.shape());
  switch (bc) {
    case Broadcast::kSame: out.array() = av.array() - bv.array(); break;
    case Broadcast::kScalar: out.array() = av.array() - bv[0]; break;
    case Broadcast::kVector: {
      Index k = av.last_dim();
      Index rows = av.size() / k;
      Eigen::Map<MatrixRM> om(out.data(), rows, k);
      om = av.block(0, rows, k);
      om.rowwise() -= bv.block(0, 1, k).row(0);
      break;
    }
  }
  return t.emit(OpKind::kSub, {a, b}, std::move(out),
                [a, b, bc](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, g);
                  if (!t.needs_grad(b)) return;
                  switch (bc) {
                    case Broadcast::kSame: t.accumulate(b, -g); break;
                    case Broadcast::kScalar:
                      t.accumulate(b, Eigen::ArrayXd::Constant(1, -g.sum()));
                      break;
                    case Broadcast::kVector:
                      t.accumulate(b, -reduce_to_vector(g, t.value(b).size()));
                      break;
                  }
                });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Broadcast bc = classify_broadcast("elementwise-mul", av, bv);
  Tensor out(av.shape());
  switch (bc) {
    case Broadcast::kSame: out.array() = av.array() * bv.array(); break;
    case Broadcast::kScalar: out.array() = av.array() * bv[0]; break;
    case Broadcast::kVector: {
      Index k = av.last_dim();
      Index rows = av.size() / k;
      Eigen::Map<MatrixRM> om(out.data(), rows, k);
      om = av.block(0, rows, k).array().rowwise() *
           bv.block(0, 1, k).row(0).array();
      break;
    }
  }
  return t.emit(
      OpKind::kMul, {a, b}, std::move(out),
      [a, b, bc](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
        const Eigen::ArrayXd& av = t.value(a).array();
        const Eigen::ArrayXd& bv = t.value(b).array();
        switch (bc) {
          case Broadcast::kSame:
            t.accumulate(a, g * bv);
            t.accumulate(b, g * av);
            break;
          case Broadcast::kScalar:
            t.accumulate(a, g * bv[0]);
            if (t.needs_grad(b)) {
              t.accumulate(b, Eigen::ArrayXd::Constant(1, (g * av).sum()));
            }
            break;
          case Broadcast::kVector: {
            Index k = static_cast<Index>(bv.size());
            Index rows = static_cast<Index>(av.size()) / k;
            if (t.needs_grad(a)) {
              Eigen::ArrayXd ga(av.size());
              Eigen::Map<MatrixRM> gam(ga.data(), rows, k);
              gam = Eigen::Map<const MatrixRM>(g.data(), rows, k).array().rowwise() *
                    Eigen::Map<const MatrixRM>(bv.data(), 1, k).row(0).array();
              t.accumulate(a, ga);
            }
            if (t.needs_grad(b)) t.accumulate(b, reduce_to_vector(g * av, k));
            break;
          }
        }
      });
}

Var scalar_mul(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out(t.value(a).shape(), Eigen::ArrayXd(t.value(a).array() * c));
  return t.emit(OpKind::kScalarMul, {a}, std::move(out),
                [a, c](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, g * c);
                });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() < 2) {
    throw ShapeError("matmul: left operand must have rank >= 2, got " +
                     shape_str(av.shape()));
  }
  Index m = av.dim(av.rank() - 2);
  Index k = av.last_dim();
  bool batched_b;
  Index n;
  if (bv.rank() == 2) {
    batched_b = false;
    if (bv.dim(0) != k) {
      throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) +
                       " x " + shape_str(bv.shape()));
    }
    n = bv.dim(1);
  } else if (bv.rank() == av.rank()) {
    batched_b = true;
    if (!std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin()) ||
        bv.dim(bv.rank() - 2) != k) {
      throw ShapeError("matmul: batch shapes differ, " + shape_str(av.shape()) +
                       " x " + shape_str(bv.shape()));
    }
    n = bv.last_dim();
  } else {
    throw ShapeError("matmul: right operand must be a matrix or share the left batch, got " +
                     shape_str(bv.shape()));
  }
  Index batch = av.size() / (m * k);
  Shape out_shape = leading_shape(av.shape(), 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(std::move(out_shape));
  for (Index i = 0; i < batch; ++i) {
    auto A = av.block(i * m * k, m, k);
    auto B = bv.block(batched_b ? i * k * n : 0, k, n);
    out.block(i * m * n, m, n).noalias() = A * B;
  }
  return t.emit(
      OpKind::kMatmul, {a, b}, std::move(out),
      [a, b, batched_b, batch, m, k, n](Tape& t, const Tensor&,
                                        const Eigen::ArrayXd& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.needs_grad(a)) {
          Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(av.size());
          Tensor gat(av.shape(), std::move(ga));
          for (Index i = 0; i < batch; ++i) {
            Eigen::Map<const MatrixRM> G(g.data() + i * m * n, m, n);
            auto B = bv.block(batched_b ? i * k * n : 0, k, n);
            gat.block(i * m * k, m, k).noalias() = G * B.transpose();
          }
          t.accumulate(a, gat.array());
        }
        if (t.needs_grad(b)) {
          Eigen::ArrayXd gb = Eigen::ArrayXd::Zero(bv.size());
          Tensor gbt(bv.shape(), std::move(gb));
          for (Index i = 0; i < batch; ++i) {
            Eigen::Map<const MatrixRM> G(g.data() + i * m * n, m, n);
            auto A = av.block(i * m * k, m, k);
            if (batched_b) {
              gbt.block(i * k * n, k, n).noalias() = A.transpose() * G;
            } else {
              gbt.block(0, k, n).noalias() += A.transpose() * G;
            }
          }
          t.accumulate(b, gbt.array());
        }
      });
}

Var concat_last(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() < 1 || av.rank() != bv.rank() ||
      !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin())) {
    throw ShapeError("concat-last-axis: leading shapes differ, " +
                     shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Index ka = av.last_dim(), kb = bv.last_dim();
  Index rows = av.size() / std::max<Index>(ka, 1);
  if (ka == 0) rows = bv.size() / std::max<Index>(kb, 1);
  Shape out_shape = leading_shape(av.shape(), 1);
  out_shape.push_back(ka + kb);
  Tensor out(std::move(out_shape));
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ka, ka, out.data() + r * (ka + kb));
    std::copy_n(bv.data() + r * kb, kb, out.data() + r * (ka + kb) + ka);
  }
  return t.emit(OpKind::kConcatLast, {a, b}, std::move(out),
                [a, b, ka, kb, rows](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  if (t.needs_grad(a)) {
                    Eigen::ArrayXd ga(rows * ka);
                    for (Index r = 0; r < rows; ++r) {
                      std::copy_n(g.data() + r * (ka + kb), ka, ga.data() + r * ka);
                    }
                    t.accumulate(a, ga);
                  }
                  if (t.needs_grad(b)) {
                    Eigen::ArrayXd gb(rows * kb);
                    for (Index r = 0; r < rows; ++r) {
                      std::copy_n(g.data() + r * (ka + kb) + ka, kb, gb.data() + r * kb);
                    }
                    t.accumulate(b, gb);
                  }
                });
}

Var slice_last(Var a, Index start, Index len) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Index k = av.last_dim();
  if (start < 0 || len < 0 || start + len > k) {
    throw ShapeError("slice-last-axis: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside axis of size " +
                     std::to_string(k));
  }
  Index rows = av.size() / k;
  Shape out_shape = leading_shape(av.shape(), 1);
  out_shape.push_back(len);
  Tensor out(std::move(out_shape));
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * k + start, len, out.data() + r * len);
  }
  return t.emit(OpKind::kSliceLast, {a}, std::move(out),
                [a, start, len, k, rows](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(rows * k);
                  for (Index r = 0; r < rows; ++r) {
                    std::copy_n(g.data() + r * len, len, ga.data() + r * k + start);
                  }
                  t.accumulate(a, ga);
                });
}

Var gather_rows(Var table, const IndexArray& idx) {
  Tape& t = *table.tape;
  const Tensor& tv = t.value(table);
  if (tv.rank() != 2) {
    throw ShapeError("gather-rows: table must be rank 2, got " + shape_str(tv.shape()));
  }
  Index v = tv.dim(0), d = tv.dim(1);
  for (Index i : idx.data) {
    if (i < 0 || i >= v) {
      throw DomainError("gather-rows: index " + std::to_string(i) +
                        " outside table of " + std::to_string(v) + " rows");
    }
  }
  Shape out_shape = idx.shape;
  out_shape.push_back(d);
  Tensor out(std::move(out_shape));
  for (Index r = 0; r < idx.size(); ++r) {
    std::copy_n(tv.data() + idx.data[static_cast<std::size_t>(r)] * d, d,
                out.data() + r * d);
  }
  return t.emit(OpKind::kGatherRows, {table}, std::move(out),
                [table, idx, d](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  Eigen::ArrayXd gt = Eigen::ArrayXd::Zero(t.value(table).size());
                  for (Index r = 0; r < idx.size(); ++r) {
                    Index row = idx.data[static_cast<std::size_t>(r)];
                    Eigen::Map<Eigen::ArrayXd>(gt.data() + row * d, d) +=
                        Eigen::Map<const Eigen::ArrayXd>(g.data() + r * d, d);
                  }
                  t.accumulate(table, gt);
                });
}

Var softplus(Var a) {
  return unary_op(OpKind::kSoftplus, a,
                  [](const Eigen::ArrayXd& x) { return kernels::softplus(x); },
                  [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return g * kernels::sigmoid(x);
                  });
}

Var tanh(Var a) {
  return unary_op(OpKind::kTanh, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.tanh(); },
                  [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return g * (1.0 - y.square());
                  });
}

Var elu(Var a) {
  return unary_op(OpKind::kElu, a,
                  [](const Eigen::ArrayXd& x) { return kernels::elu(x); },
                  [](const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    // d/dx = 1 for x > 0, e^x = y + 1 otherwise
                    return g * (x > 0.0).select(Eigen::ArrayXd::Ones(x.size()), y + 1.0);
                  });
}

Var sqrt(Var a) {
  check_positive("sqrt", a.value());
  return unary_op(OpKind::kSqrt, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.sqrt(); },
                  [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return g * 0.5 / y;
                  });
}

Var exp(Var a) {
  return unary_op(OpKind::kExp, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.exp(); },
                  [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd { return g * y; });
}

Var log(Var a) {
  check_positive("log", a.value());
  return unary_op(OpKind::kLog, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.log(); },
                  [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd { return g / x; });
}

Var sigmoid(Var a) {
  return unary_op(OpKind::kSigmoid, a,
                  [](const Eigen::ArrayXd& x) { return kernels::sigmoid(x); },
                  [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return g * y * (1.0 - y);
                  });
}

Var relu(Var a) {
  return unary_op(OpKind::kRelu, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.max(0.0); },
                  [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return (x > 0.0).select(g, Eigen::ArrayXd::Zero(x.size()));
                  });
}

Var square(Var a) {
  return unary_op(OpKind::kSquare, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.square(); },
                  [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return g * 2.0 * x;
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Tensor out = Tensor::scalar(t.value(a).array().sum());
  return t.emit(OpKind::kSum, {a}, std::move(out),
                [a](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, Eigen::ArrayXd::Constant(t.value(a).size(), g[0]));
                });
}

Var mean(Var a) {
  Tape& t = *a.tape;
  Index n = t.value(a).size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  Tensor out = Tensor::scalar(t.value(a).array().sum() / static_cast<double>(n));
  return t.emit(OpKind::kMean, {a}, std::move(out),
                [a, n](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, Eigen::ArrayXd::Constant(n, g[0] / static_cast<double>(n)));
                });
}

namespace {

template <typename RowFwd, typename RowBwd>
Var rowwise_reduce(OpKind kind, Var a, RowFwd&& fwd, RowBwd&& bwd) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Index k = av.last_dim();
  Index rows = av.size() / std::max<Index>(k, 1);
  Tensor out(leading_shape(av.shape(), 1));
  for (Index r = 0; r < rows; ++r) {
    out[r] = fwd(Eigen::Map<const Eigen::ArrayXd>(av.data() + r * k, k));
  }
  return t.emit(kind, {a}, std::move(out),
                [a, k, rows, bwd](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  const Tensor& av = t.value(a);
                  Eigen::ArrayXd ga(av.size());
                  for (Index r = 0; r < rows; ++r) {
                    Eigen::Map<Eigen::ArrayXd> grow(ga.data() + r * k, k);
                    grow = bwd(Eigen::Map<const Eigen::ArrayXd>(av.data() + r * k, k), g[r]);
                  }
                  t.accumulate(a, ga);
                });
}

}  // namespace

Var sum_last(Var a) {
  return rowwise_reduce(OpKind::kSumLast, a,
                        [](auto row) { return row.sum(); },
                        [](auto row, double g) -> Eigen::ArrayXd {
                          return Eigen::ArrayXd::Constant(row.size(), g);
                        });
}

Var l1_norm_last(Var a) {
  return rowwise_reduce(OpKind::kL1NormLast, a,
                        [](auto row) { return row.abs().sum(); },
                        [](auto row, double g) -> Eigen::ArrayXd {
                          return g * row.sign();
                        });
}

Var masked_softmax_last(Var scores, Var mask) {
  Tape& t = *scores.tape;
  const Tensor& sv = t.value(scores);
  const Tensor& mv = t.value(mask);
  if (!sv.same_shape(mv)) {
    throw ShapeError("masked-softmax-last-axis: scores " + shape_str(sv.shape()) +
                     " and mask " + shape_str(mv.shape()) + " differ");
  }
  Index k = sv.last_dim();
  Index rows = sv.size() / std::max<Index>(k, 1);
  Tensor out(sv.shape());
  for (Index r = 0; r < rows; ++r) {
    const double* x = sv.data() + r * k;
    const double* m = mv.data() + r * k;
    double* y = out.data() + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < k; ++j) {
      if (m[j] > 0.5 && x[j] > mx) mx = x[j];
    }
    if (!std::isfinite(mx)) {
      // fully-masked row: defined to be all zeros
      std::fill_n(y, k, 0.0);
      continue;
    }
    double z = 0.0;
    for (Index j = 0; j < k; ++j) {
      y[j] = m[j] > 0.5 ? std::exp(x[j] - mx) : 0.0;
      z += y[j];
    }
    for (Index j = 0; j < k; ++j) y[j] /= z;
  }
  return t.emit(OpKind::kMaskedSoftmaxLast, {scores, mask}, std::move(out),
                [scores, k, rows](Tape& t, const Tensor& yv, const Eigen::ArrayXd& g) {
                  if (!t.needs_grad(scores)) return;
                  Eigen::ArrayXd gs(yv.size());
                  for (Index r = 0; r < rows; ++r) {
                    Eigen::Map<const Eigen::ArrayXd> y(yv.data() + r * k, k);
                    Eigen::Map<const Eigen::ArrayXd> gr(g.data() + r * k, k);
                    double dot = (gr * y).sum();
                    Eigen::Map<Eigen::ArrayXd>(gs.data() + r * k, k) = y * (gr - dot);
                  }
                  t.accumulate(scores, gs);
                });
}

Var l2_squared_distance(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() < 2 || av.rank() != bv.rank() || av.last_dim() != bv.last_dim() ||
      !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
    throw ShapeError("l2-squared-distance: incompatible shapes " +
                     shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  Index d = av.last_dim();
  Index m = av.dim(av.rank() - 2);
  Index n = bv.dim(bv.rank() - 2);
  Index batch = av.size() / (m * d);
  Shape out_shape = leading_shape(av.shape(), 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(std::move(out_shape));
  for (Index bi = 0; bi < batch; ++bi) {
    const double* ap = av.data() + bi * m * d;
    const double* bp = bv.data() + bi * n * d;
    double* op = out.data() + bi * m * n;
    for (Index i = 0; i < m; ++i) {
      Eigen::Map<const Eigen::ArrayXd> ra(ap + i * d, d);
      for (Index j = 0; j < n; ++j) {
        Eigen::Map<const Eigen::ArrayXd> rb(bp + j * d, d);
        op[i * n + j] = (ra - rb).square().sum();
      }
    }
  }
  return t.emit(
      OpKind::kL2SquaredDistance, {a, b}, std::move(out),
      [a, b, d, m, n, batch](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        bool na = t.needs_grad(a), nb = t.needs_grad(b);
        Eigen::ArrayXd ga, gb;
        if (na) ga = Eigen::ArrayXd::Zero(av.size());
        if (nb) gb = Eigen::ArrayXd::Zero(bv.size());
        Eigen::ArrayXd diff(d);
        for (Index bi = 0; bi < batch; ++bi) {
          const double* ap = av.data() + bi * m * d;
          const double* bp = bv.data() + bi * n * d;
          const double* gp = g.data() + bi * m * n;
          for (Index i = 0; i < m; ++i) {
            Eigen::Map<const Eigen::ArrayXd> ra(ap + i * d, d);
            for (Index j = 0; j < n; ++j) {
              double c = 2.0 * gp[i * n + j];
              if (c == 0.0) continue;
              Eigen::Map<const Eigen::ArrayXd> rb(bp + j * d, d);
              diff = ra - rb;
              if (na) {
                Eigen::Map<Eigen::ArrayXd>(ga.data() + (bi * m + i) * d, d) += c * diff;
              }
              if (nb) {
                Eigen::Map<Eigen::ArrayXd>(gb.data() + (bi * n + j) * d, d) -= c * diff;
              }
            }
          }
        }
        if (na) t.accumulate(a, ga);
        if (nb) t.accumulate(b, gb);
      });
}

Var inv_one_plus(Var a) {
  const Tensor& av = a.value();
  if (av.size() > 0 && av.array().minCoeff() < 0.0) {
    throw DomainError("inv-one-plus: negative input");
  }
  return unary_op(OpKind::kInvOnePlus, a,
                  [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd {
                    return (1.0 + x).inverse();
                  },
                  [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y,
                     const Eigen::ArrayXd& g) -> Eigen::ArrayXd {
                    return -g * y.square();
                  });
}

Var reshape(Var a, Shape new_shape) {
  Tape& t = *a.tape;
  Tensor out = t.value(a).reshaped(std::move(new_shape));
  return t.emit(OpKind::kReshape, {a}, std::move(out),
                [a](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, g);
                });
}

namespace {

Eigen::ArrayXd swap_last_two(const Eigen::ArrayXd& src, Index batch, Index m, Index n) {
  Eigen::ArrayXd dst(src.size());
  for (Index i = 0; i < batch; ++i) {
    Eigen::Map<MatrixRM>(dst.data() + i * m * n, n, m) =
        Eigen::Map<const MatrixRM>(src.data() + i * m * n, m, n).transpose();
  }
  return dst;
}

}  // namespace

Var transpose_last_two(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  if (av.rank() < 2) {
    throw ShapeError("transpose-last-two: need rank >= 2, got " + shape_str(av.shape()));
  }
  Index m = av.dim(av.rank() - 2);
  Index n = av.last_dim();
  Index batch = av.size() / (m * n);
  Shape out_shape = leading_shape(av.shape(), 2);
  out_shape.push_back(n);
  out_shape.push_back(m);
  Tensor out(std::move(out_shape), swap_last_two(av.array(), batch, m, n));
  return t.emit(OpKind::kTransposeLastTwo, {a}, std::move(out),
                [a, batch, m, n](Tape& t, const Tensor&, const Eigen::ArrayXd& g) {
                  t.accumulate(a, swap_last_two(g, batch, n, m));
                });
}

}  // namespace keenkt
