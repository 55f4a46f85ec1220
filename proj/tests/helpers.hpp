#pragma once

#include "lapkit/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <functional>
#include <random>

// Shared test utilities: random problem generators and the independent
// oracles (finite differences, brute-force Kronecker, conjugate Gaussian).
namespace testutil {

using lapkit::Index;
using lapkit::Matrix;
using lapkit::Real;
using lapkit::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols,
                            Real scale = 1.0) {
  std::normal_distribution<Real> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Index n, Real scale = 1.0) {
  std::normal_distribution<Real> normal(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix random_symmetric(std::mt19937_64& rng, Index n) {
  const Matrix a = random_matrix(rng, n, n);
  return 0.5 * (a + a.transpose());
}

inline Matrix random_spd(std::mt19937_64& rng, Index n) {
  const Matrix a = random_matrix(rng, n, n);
  return a.transpose() * a + Matrix::Identity(n, n);
}

/// Central-difference gradient, step 1e-5 unless stated otherwise.
inline Vector fd_gradient(const std::function<Real(const Vector&)>& f,
                          const Vector& x, Real h = 1e-5) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

/// Central second differences; adequate for the small dense oracles here.
inline Matrix fd_hessian(const std::function<Real(const Vector&)>& f,
                         const Vector& x, Real h = 1e-4) {
  const Index n = x.size();
  Matrix hess(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      Vector pp = x, pm = x, mp = x, mm = x;
      pp[i] += h;
      pp[j] += h;
      pm[i] += h;
      pm[j] -= h;
      mp[i] -= h;
      mp[j] += h;
      mm[i] -= h;
      mm[j] -= h;
      const Real v = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

/// Direct-definition Kronecker product (oracle for linalg::kron).
inline Matrix kron_loop(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      for (Index k = 0; k < b.rows(); ++k)
        for (Index l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

/// Closed-form log evidence of Bayesian linear regression y = X w + eps,
/// eps ~ N(0, sigma^2 I), w ~ N(0, lambda^{-1} I):
/// log N(y; 0, sigma^2 I + X X^T / lambda).
inline Real conjugate_log_evidence(const Matrix& x, const Vector& y, Real sigma,
                                   Real lambda) {
  const Index n = y.size();
  Matrix k = (x * x.transpose()) / lambda;
  k.diagonal().array() += sigma * sigma;
  Eigen::LLT<Matrix> llt(k);
  const Real logdet =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Vector solved = llt.solve(y);
  return -0.5 * (static_cast<Real>(n) * lapkit::kLog2Pi + logdet + y.dot(solved));
}

/// Exact MAP of the same model: (X^T X / sigma^2 + lambda I)^{-1} X^T y / sigma^2.
inline Vector ridge_solution(const Matrix& x, const Vector& y, Real sigma,
                             Real lambda) {
  const Real sigma2 = sigma * sigma;
  Matrix a = x.transpose() * x / sigma2;
  a.diagonal().array() += lambda;
  return Eigen::LLT<Matrix>(a).solve(x.transpose() * y / sigma2);
}

/// Posterior predictive of the conjugate model at x_new: mean and variance
/// (including observation noise).
inline std::pair<Real, Real> conjugate_predictive(const Matrix& x, const Vector& y,
                                                  Real sigma, Real lambda,
                                                  const Vector& x_new) {
  const Real sigma2 = sigma * sigma;
  Matrix a = x.transpose() * x / sigma2;
  a.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(a);
  const Vector mean_w = llt.solve(x.transpose() * y / sigma2);
  const Vector solved = llt.solve(x_new);
  return {mean_w.dot(x_new), x_new.dot(solved) + sigma2};
}

}  // namespace testutil
