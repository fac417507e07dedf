#pragma once

#include <Eigen/Dense>

#include "sentinel/error.hpp"

namespace sentinel {

template <typename Scalar>
using Logits2 = Eigen::Matrix<Scalar, 2, 1>;

/// One row of two logits per batch item; column order follows the bundle's label map.
template <typename Scalar>
using LogitMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;

using LogitMatrixd = LogitMatrix<double>;

/// Two-class softmax, stabilised by subtracting the max logit.
/// Throws Error("non_finite_logit") on NaN or infinity.
template <typename Derived>
Logits2<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 2)
  using Scalar = typename Derived::Scalar;
  if (!logits.allFinite()) throw Error("non_finite_logit", "logits must be finite");
  const Scalar top = logits.maxCoeff();
  Logits2<Scalar> e = (logits.derived().array() - top).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax over an (n x 2) logit matrix.
template <typename Derived>
LogitMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  static_assert(Derived::ColsAtCompileTime == 2 || Derived::ColsAtCompileTime == Eigen::Dynamic,
                "expected two logit columns");
  if (logits.cols() != 2) throw Error("bad_logit_shape", "expected two logits per row");
  if (!logits.allFinite()) throw Error("non_finite_logit", "logits must be finite");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> top = logits.rowwise().maxCoeff();
  LogitMatrix<Scalar> e = (logits.colwise() - top).array().exp().matrix();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sums = e.rowwise().sum();
  return sums.cwiseInverse().asDiagonal() * e;
}

}  // namespace sentinel
