#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "keenkt/common.hpp"

namespace keenkt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense 64-bit real tensor, flat row-major storage. Rank 0 (empty shape)
// is a scalar of size 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, Eigen::ArrayXd values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      double mean = 0.0);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  Index dim(Index axis) const;
  Index last_dim() const;
  bool empty() const { return data_.size() == 0; }

  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  // Scalar extraction; throws unless size() == 1.
  double item() const;

  bool all_finite() const { return data_.isFinite().all(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor reshaped(Shape new_shape) const;

  // View the trailing two axes as a (rows x cols) row-major matrix block
  // starting at flat offset.
  Eigen::Map<MatrixRM> block(Index offset, Index rows, Index cols);
  Eigen::Map<const MatrixRM> block(Index offset, Index rows, Index cols) const;

 private:
  Shape shape_{0};
  Eigen::ArrayXd data_;
};

// Integer tensor for embedding-table lookups and id sequences.
struct IndexArray {
  Shape shape{0};
  std::vector<Index> data;

  IndexArray() = default;
  IndexArray(Shape s, std::vector<Index> d);
  Index size() const { return static_cast<Index>(data.size()); }
};

// Elementwise kernels shared by the autodiff ops and the plain NIG math so
// both paths produce bit-identical values.
namespace kernels {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

// ELU with the conventional alpha = 1.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

Eigen::ArrayXd softplus(const Eigen::ArrayXd& x);
Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x);
Eigen::ArrayXd elu(const Eigen::ArrayXd& x);

}  // namespace kernels

}  // namespace keenkt
