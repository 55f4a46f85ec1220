#pragma once

#include "lapkit/types.hpp"

namespace lapkit::linalg {

/// Symmetric eigendecomposition Q diag(l) Q^T with eigenvalues ascending.
struct SymEig {
  Vector eigenvalues;
  Matrix eigenvectors;  // orthonormal columns, one per eigenvalue

  Matrix reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }
};

/// Eigendecomposition of a symmetric matrix. Rejects non-square or
/// asymmetric (beyond 1e-10 relative) input.
SymEig sym_eig(const Matrix& m);

/// Kronecker product: result[(i*p+k),(j*q+l)] = a(i,j) * b(k,l) for b p-by-q.
Matrix kron(const Matrix& a, const Matrix& b);

/// Solves m * x = rhs for symmetric positive definite m. Adds diagonal
/// jitter of 1e-10 * trace(m)/rows, doubling up to 8 times, before giving up.
Matrix psd_solve(const Matrix& m, const Matrix& rhs);

/// log det of a symmetric positive definite matrix, same jitter policy.
Real logdet_psd(const Matrix& m);

}  // namespace lapkit::linalg
