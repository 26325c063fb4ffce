#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nlaic/errors.hpp"

namespace nlaic {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major N-D array. Owns its buffer; copies are deep.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : shape_{0}, data_() {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    data_ = Vector::Zero(numel(shape_));
  }
  Tensor(Shape shape, Scalar fill) : Tensor(std::move(shape)) { data_.setConstant(fill); }
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }
  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), Index(values.size()))) {}

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }

  template <typename Rng>
  static Tensor uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = Scalar(dist(rng));
    return t;
  }
  template <typename Rng>
  static Tensor normal(Shape shape, Scalar stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, double(stddev));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = Scalar(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(std::size_t(axis)); }
  Index size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), std::size_t(data_.size())}; }
  std::span<const Scalar> span() const { return {data_.data(), std::size_t(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  // Row-major offset of a multi-index.
  Index offset(std::initializer_list<Index> idx) const {
    if (Index(idx.size()) != rank()) throw ShapeError("index rank mismatch");
    Index off = 0;
    std::size_t a = 0;
    for (Index i : idx) off = off * shape_[a++] + i;
    return off;
  }
  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  // View the buffer as a rows x cols row-major matrix; rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeError("matrix view size mismatch");
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("matrix view size mismatch");
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void check_dims() const {
    for (Index d : shape_)
      if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape_));
  }

  Shape shape_;
  Vector data_;
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& shape, const char* what) {
  if (t.shape() != shape)
    throw ShapeError(std::string(what) + ": expected shape " + to_string(shape) + ", got " +
                     to_string(t.shape()));
}

}  // namespace nlaic
