#include "attrlab/matrix.hpp"

#include <stdexcept>

namespace attrlab {

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch, " + shape_str(a) +
                                " * " + shape_str(b));
  }
  return a * b;
}

Matrix elementwise(const Matrix& a, const Matrix& b, ElemOp op, double eps) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("elementwise: shape mismatch, " + shape_str(a) +
                                " vs " + shape_str(b));
  }
  switch (op) {
    case ElemOp::Add:
      return a + b;
    case ElemOp::Sub:
      return a - b;
    case ElemOp::Mul:
      return a.cwiseProduct(b);
    case ElemOp::StabilizedDiv:
      if (eps <= 0.0) {
        throw std::invalid_argument("elementwise: StabilizedDiv needs eps > 0");
      }
      return a.cwiseQuotient(stabilized(b, eps));
  }
  throw std::logic_error("elementwise: unknown op");
}

}  // namespace attrlab
