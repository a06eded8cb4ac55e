#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace mfacv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Flattened outer product: result[d * D + e] = x[d] * y[e].
inline Vector kron_vec(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("kron_vec: length mismatch");
  }
  const Index n = x.size();
  Vector out(n * n);
  for (Index d = 0; d < n; ++d) {
    out.segment(d * n, n) = x[d] * y;
  }
  return out;
}

inline Matrix kron_mat(const Matrix& x, const Matrix& y) {
  Matrix out(x.rows() * y.rows(), x.cols() * y.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      out.block(r * y.rows(), c * y.cols(), y.rows(), y.cols()) = x(r, c) * y;
    }
  }
  return out;
}

/// Hadamard product of the two 1-padded Kronecker expansions of a D x D
/// covariance. Entry ((a,b),(c,d)) equals C(a,d) * C(b,c).
inline Matrix padded_sandwich(const Matrix& cov) {
  if (cov.rows() != cov.cols()) {
    throw std::invalid_argument("padded_sandwich: matrix must be square");
  }
  const Index n = cov.rows();
  Matrix out(n * n, n * n);
  for (Index a = 0; a < n; ++a) {
    for (Index b = 0; b < n; ++b) {
      for (Index c = 0; c < n; ++c) {
        for (Index d = 0; d < n; ++d) {
          out(a * n + b, c * n + d) = cov(a, d) * cov(b, c);
        }
      }
    }
  }
  return out;
}

/// Fourth-moment-free part of the covariance between two flattened sample
/// covariance estimators: C (x) C plus the padded sandwich of C.
inline Matrix vblock_from_cov(const Matrix& cov) {
  if (cov.rows() != cov.cols()) {
    throw std::invalid_argument("vblock_from_cov: matrix must be square");
  }
  return kron_mat(cov, cov) + padded_sandwich(cov);
}

// Row-major flattening of a D x D matrix into a D^2 vector.
inline Vector flatten(const Matrix& m) {
  Vector out(m.size());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  }
  return out;
}

inline Matrix unflatten(const Vector& v, Index rows) {
  if (rows <= 0 || v.size() % rows != 0) {
    throw std::invalid_argument("unflatten: size is not a multiple of rows");
  }
  const Index cols = v.size() / rows;
  Matrix out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) out(r, c) = v[r * cols + c];
  }
  return out;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace mfacv
