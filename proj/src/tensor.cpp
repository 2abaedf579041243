#include "keenkt/tensor.hpp"

#include <sstream>

namespace keenkt {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape_));
  }
  data_ = Eigen::ArrayXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
  data_.setConstant(fill);
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != static_cast<Index>(data_.size())) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : shape_(std::move(shape)) {
  if (shape_size(shape_) != static_cast<Index>(values.size())) {
    throw ShapeError("initializer size does not match shape " + shape_str(shape_));
  }
  data_.resize(static_cast<Eigen::Index>(values.size()));
  Index i = 0;
  for (double v : values) data_[i++] = v;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape_.clear();
  t.data_.resize(1);
  t.data_[0] = v;
  return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, double mean) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (Index i = 0; i < t.size(); ++i) t.data_[i] = dist(rng);
  return t;
}

Index Tensor::dim(Index axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

Index Tensor::last_dim() const {
  if (shape_.empty()) throw ShapeError("scalar tensor has no last axis");
  return shape_.back();
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() requires a size-1 tensor, got shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                     shape_str(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

Eigen::Map<MatrixRM> Tensor::block(Index offset, Index rows, Index cols) {
  return Eigen::Map<MatrixRM>(data_.data() + offset, rows, cols);
}

Eigen::Map<const MatrixRM> Tensor::block(Index offset, Index rows, Index cols) const {
  return Eigen::Map<const MatrixRM>(data_.data() + offset, rows, cols);
}

IndexArray::IndexArray(Shape s, std::vector<Index> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("index data size does not match shape " + shape_str(shape));
  }
}

namespace kernels {

Eigen::ArrayXd softplus(const Eigen::ArrayXd& x) {
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = softplus(x[i]);
  return out;
}

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x) {
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Eigen::ArrayXd elu(const Eigen::ArrayXd& x) {
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = elu(x[i]);
  return out;
}

}  // namespace kernels

}  // namespace keenkt
