#pragma once

#include <Eigen/Dense>

#include <string>

namespace attrlab {

// All numeric state lives in dense row-major matrices. Double precision is
// mandatory: the attribution identities checked downstream (Pearson == 1,
// LRP == LOO on linear nets) do not survive float32 rounding.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixT<double>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// sign with sign(0) = +1, the convention that keeps every epsilon-stabilized
// denominator nonzero.
inline double sign_nonzero(double v) { return v < 0.0 ? -1.0 : 1.0; }

// denom + eps * sign(denom), entrywise.
template <typename Derived>
MatrixT<typename Derived::Scalar> stabilized(const Eigen::MatrixBase<Derived>& denom,
                                             double eps) {
  return denom.derived().unaryExpr(
      [eps](double v) { return v + eps * sign_nonzero(v); });
}

bool all_finite(const Matrix& m);

// Checked matrix product. Eigen would assert in debug builds; callers get a
// proper error with the offending shapes instead.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-wise softmax with max subtraction. Each output row is nonnegative and
// sums to 1 within 1e-12 for any finite input.
template <typename Derived>
MatrixT<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& z) {
  MatrixT<typename Derived::Scalar> out = z.derived();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return out;
}

enum class ElemOp { Add, Sub, Mul, StabilizedDiv };

// Equal-shape elementwise op. StabilizedDiv computes a / (b + eps * sign(b)).
Matrix elementwise(const Matrix& a, const Matrix& b, ElemOp op, double eps = 1e-6);

std::string shape_str(const Matrix& m);

}  // namespace attrlab
