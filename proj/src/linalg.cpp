#include "lapkit/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace lapkit::linalg {

namespace {

// Runs f(llt) with increasing diagonal jitter until the factorization
// succeeds. Jitter starts at 1e-10 * trace/rows and doubles up to 8 times.
template <typename F>
auto with_psd_factorization(const Matrix& m, F&& f) {
  require(m.rows() == m.cols(), ErrorCode::InvalidMatrix,
          "psd operation requires a square matrix");
  const Real base_jitter = 1e-10 * m.trace() / static_cast<Real>(m.rows());
  Real jitter = 0.0;
  for (int attempt = 0; attempt <= 9; ++attempt) {
    Matrix shifted = m;
    if (jitter > 0.0) shifted.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() == Eigen::Success) return f(llt);
    jitter = (jitter == 0.0) ? base_jitter : 2.0 * jitter;
  }
  fail(ErrorCode::NotPositiveDefinite,
       "matrix is not positive definite after maximum jitter");
}

}  // namespace

SymEig sym_eig(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorCode::InvalidMatrix,
          "sym_eig requires a square matrix");
  const Real scale = std::max(Real(1), m.cwiseAbs().maxCoeff());
  const Real asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-10 * scale, ErrorCode::InvalidMatrix,
          "sym_eig requires a symmetric matrix");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  require(solver.info() == Eigen::Success, ErrorCode::InvalidMatrix,
          "eigendecomposition failed to converge");
  return SymEig{solver.eigenvalues(), solver.eigenvectors()};
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix psd_solve(const Matrix& m, const Matrix& rhs) {
  require(m.rows() == rhs.rows(), ErrorCode::InvalidMatrix,
          "psd_solve shape mismatch");
  return with_psd_factorization(
      m, [&](const Eigen::LLT<Matrix>& llt) -> Matrix { return llt.solve(rhs); });
}

Real logdet_psd(const Matrix& m) {
  return with_psd_factorization(m, [](const Eigen::LLT<Matrix>& llt) -> Real {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  });
}

}  // namespace lapkit::linalg
