#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "keenkt/tensor.hpp"

namespace keenkt {

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kConcatLast,
  kSliceLast,
  kGatherRows,
  kSoftplus,
  kTanh,
  kElu,
  kSqrt,
  kExp,
  kLog,
  kSigmoid,
  kRelu,
  kSquare,
  kSum,
  kMean,
  kMaskedSoftmaxLast,
  kL1NormLast,
  kSumLast,
  kL2SquaredDistance,
  kInvOnePlus,
  kReshape,
  kTransposeLastTwo,
};

const char* op_name(OpKind kind);

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.array().setZero(); }
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  Index id = -1;

  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Append-only record of forward ops; backward() is a single reverse sweep.
// Node inputs always precede the node, so each node is visited exactly once.
// Rebuilt per minibatch (define-by-run).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-trainable value (masks, labels, injected noise, ...).
  Var constant(Tensor v);
  // Trainable leaf not bound to a Parameter (tests, gradcheck probes).
  Var leaf(Tensor v);
  // Trainable leaf bound to a Parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() w.r.t. v; zeros if v never received one.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar loss. Single use per tape.
  void backward(Var loss);

  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }
  bool consumed() const { return consumed_; }

  // --- used by op builders ---
  // Invoked with the node's output value and the gradient flowing into it.
  using BackwardFn =
      std::function<void(Tape&, const Tensor& out_value, const Eigen::ArrayXd& out_grad)>;
  Var emit(OpKind kind, std::initializer_list<Var> inputs, Tensor out,
           BackwardFn backward_fn);
  bool needs_grad(Var v) const;
  // Accumulates g into v's gradient slot (no-op if v does not need grad).
  void accumulate(Var v, const Eigen::ArrayXd& g);

 private:
  struct Slot {
    Tensor value;
    Eigen::ArrayXd grad;  // empty until first accumulation
    bool needs_grad = false;
    Parameter* bound = nullptr;
  };
  struct Node {
    OpKind kind;
    std::array<Index, 3> inputs{-1, -1, -1};
    int n_inputs = 0;
    Index output = -1;
    BackwardFn backward_fn;
  };

  Var add_slot(Tensor v, bool needs_grad, Parameter* bound);
  const Slot& slot(Var v) const;

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- op builders ----------------------------------------------------------
// All builders validate shapes, evaluate eagerly, record the node, and
// reject non-finite outputs.

// add/sub/mul accept equal shapes, a trailing-axis vector for b, or a
// scalar b; broader broadcasting is a shape error.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, double c);

// a: (..., m, k); b: (k, n) shared or (..., k, n) batched.
Var matmul(Var a, Var b);

Var concat_last(Var a, Var b);
Var slice_last(Var a, Index start, Index len);

// table: (V, d); output: idx.shape + (d,). Backward scatter-adds.
Var gather_rows(Var table, const IndexArray& idx);

Var softplus(Var a);
Var tanh(Var a);
Var elu(Var a);
Var sqrt(Var a);  // input must be strictly positive
Var exp(Var a);
Var log(Var a);  // input must be strictly positive
Var sigmoid(Var a);
Var relu(Var a);
Var square(Var a);

Var sum(Var a);   // full reduction to scalar
Var mean(Var a);  // full reduction to scalar
Var sum_last(Var a);
Var l1_norm_last(Var a);

// Softmax over the last axis restricted to entries where mask > 0.5;
// fully-masked rows output exactly zero. The mask is not differentiated.
Var masked_softmax_last(Var scores, Var mask);

// a: (..., m, d); b: (..., n, d) -> (..., m, n) of squared L2 distances,
// computed pairwise directly (exactly symmetric, exactly zero on equal rows).
Var l2_squared_distance(Var a, Var b);

// x -> 1/(1+x) for x >= 0 (the distance-to-similarity map).
Var inv_one_plus(Var a);

Var reshape(Var a, Shape new_shape);

// Swaps the trailing two axes (for dot-product attention scores).
Var transpose_last_two(Var a);

}  // namespace keenkt
