// tensor.hpp - dense row-major tensor templated on scalar, Eigen-backed
//
// The default scalar is float (training precision); tests instantiate double
// for finite-difference gradient checking. Rank is dynamic but small: rank-2
// matrices carry almost all computation, rank-3 [time x batch x features]
// carries sequences at module boundaries.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "qlstm/errors.hpp"
#include "qlstm/rng.hpp"

namespace qlstm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <class Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Storage::Zero(shape_numel(shape_))) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("data length does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static Tensor scalar(Scalar v) { return full({1}, v); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size())
      throw ShapeError("initializer size does not match shape");
    Index i = 0;
    for (Scalar v : values) t.data_[i++] = v;
    return t;
  }
  static Tensor gaussian(Shape shape, Rng& rng, Scalar stddev, Scalar mean = 0) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i)
      t.data_[i] = mean + stddev * static_cast<Scalar>(rng.normal());
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Index rows() const {
    require_rank(2, "rows()");
    return shape_[0];
  }
  Index cols() const {
    require_rank(2, "cols()");
    return shape_[1];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& at(Index r, Index c) {
    require_rank(2, "at(r,c)");
    return data_[r * shape_[1] + c];
  }
  Scalar at(Index r, Index c) const {
    require_rank(2, "at(r,c)");
    return data_[r * shape_[1] + c];
  }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  MatrixMap matrix() {
    require_rank(2, "matrix()");
    return MatrixMap(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatrixMap matrix() const {
    require_rank(2, "matrix()");
    return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
  }

  // Copy of slice i along dim 0: [T,B,D] -> [B,D], [T,B] -> [B].
  Tensor slice0(Index i) const {
    if (rank() < 2) throw ShapeError("slice0 requires rank >= 2");
    if (i < 0 || i >= shape_[0]) throw ShapeError("slice0 index out of range");
    Shape out(shape_.begin() + 1, shape_.end());
    Index stride = shape_numel(out);
    Tensor t(out);
    t.data_ = data_.segment(i * stride, stride);
    return t;
  }
  void set_slice0(Index i, const Tensor& s) {
    Shape expect(shape_.begin() + 1, shape_.end());
    if (s.shape() != expect) throw ShapeError("set_slice0 shape mismatch");
    data_.segment(i * s.size(), s.size()) = s.data_;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) throw ShapeError("reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  Scalar max_abs() const { return size() ? data_.abs().maxCoeff() : Scalar(0); }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(shape_);
    for (Index i = 0; i < size(); ++i) t[i] = static_cast<Other>(data_[i]);
    return t;
  }

 private:
  void require_rank(int r, const char* what) const {
    if (rank() != r)
      throw ShapeError(std::string(what) + " needs rank " + std::to_string(r) +
                       ", tensor is " + shape_str(shape_));
  }

  Shape shape_;
  Storage data_;
};

// ---------------------------------------------------------------------------
// Free functions (pure math, no tape). The autodiff layer wraps these.
// ---------------------------------------------------------------------------

template <class S>
void require_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite values produced by ") + op);
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  Tensor<S> out({a.rows(), b.cols()});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

// a * b^T without materializing the transpose.
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_nt shape mismatch: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + "^T");
  Tensor<S> out({a.rows(), b.rows()});
  out.matrix().noalias() = a.matrix() * b.matrix().transpose();
  return out;
}

// a^T * b.
template <class S>
Tensor<S> matmul_tn(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("matmul_tn shape mismatch");
  Tensor<S> out({a.cols(), b.cols()});
  out.matrix().noalias() = a.matrix().transpose() * b.matrix();
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw ShapeError("add shape mismatch");
  return Tensor<S>(a.shape(), a.array() + b.array());
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw ShapeError("sub shape mismatch");
  return Tensor<S>(a.shape(), a.array() - b.array());
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw ShapeError("mul shape mismatch");
  return Tensor<S>(a.shape(), a.array() * b.array());
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  return Tensor<S>(a.shape(), a.array() * s);
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.array().logistic());
}

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.array().tanh());
}

// [m x n] + [n] broadcast over rows.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.cols())
    throw ShapeError("add_rowvec shape mismatch");
  Tensor<S> out = a;
  out.matrix().rowwise() +=
      Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(v.data(), v.size());
  return out;
}

template <class S>
Tensor<S> transposed(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("transposed expects a matrix");
  Tensor<S> out({a.cols(), a.rows()});
  out.matrix() = a.matrix().transpose();
  return out;
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("concat_cols shape mismatch");
  Tensor<S> out({a.rows(), a.cols() + b.cols()});
  out.matrix().leftCols(a.cols()) = a.matrix();
  out.matrix().rightCols(b.cols()) = b.matrix();
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, Index begin, Index count) {
  if (a.rank() != 2 || begin < 0 || count <= 0 || begin + count > a.cols())
    throw ShapeError("slice_cols out of range");
  Tensor<S> out({a.rows(), count});
  out.matrix() = a.matrix().middleCols(begin, count);
  return out;
}

}  // namespace qlstm
