#include "lapkit/predictive.hpp"

#include "lapkit/linalg.hpp"

#include <cmath>
#include <random>

namespace lapkit::predictive {

namespace {

constexpr Real kProbitScale = 0.39269908169872415481;  // pi / 8

Matrix gather_rows(const Matrix& m, const std::vector<Index>& indices) {
  Matrix out(static_cast<Index>(indices.size()), m.cols());
  for (Index r = 0; r < out.rows(); ++r)
    out.row(r) = m.row(indices[static_cast<std::size_t>(r)]);
  return out;
}

Matrix psd_sqrt(const Matrix& m) {
  const auto eig = linalg::sym_eig(m);
  return eig.eigenvectors *
         eig.eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         eig.eigenvectors.transpose();
}

}  // namespace

Vector softmax(const Vector& f) {
  const Vector shifted = f.array() - f.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

Matrix softmax_component_hessian(const Vector& mu, Index c) {
  const Vector s = softmax(mu);
  const Index n = mu.size();
  Matrix h(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const Real dci = (c == i) ? 1.0 : 0.0;
      const Real dcj = (c == j) ? 1.0 : 0.0;
      const Real dij = (i == j) ? 1.0 : 0.0;
      h(i, j) = s[c] * ((dci - s[i]) * (dcj - s[j]) - s[i] * (dij - s[j]));
    }
  return h;
}

OutputGaussian output_distribution(const posterior::LaplacePosterior& post,
                                   const nn::MlpSpec& spec, const Vector& x) {
  const auto trace = nn::forward(spec, post.theta_map, x);
  const Matrix j = nn::jacobian(spec, post.theta_map, x);
  const Matrix j_subset = gather_rows(j, post.curvature.param_indices);
  Matrix cov = posterior::quadratic_form(post, j_subset);

  // linearization plus jitter can leave eigenvalues around -1e-14; clip
  const auto eig = linalg::sym_eig(0.5 * (cov + cov.transpose()));
  if (eig.eigenvalues.minCoeff() < 0.0) {
    cov = eig.eigenvectors * eig.eigenvalues.cwiseMax(0.0).asDiagonal() *
          eig.eigenvectors.transpose();
  }
  return {trace.output(), cov};
}

OutputGaussian predict_regression(const OutputGaussian& og, Real sigma_noise) {
  require(sigma_noise > 0.0, ErrorCode::InvalidInput, "sigma_noise must be > 0");
  Matrix cov = og.cov;
  cov.diagonal().array() += sigma_noise * sigma_noise;
  return {og.mean, cov};
}

Real probit_binary(Real mu, Real var) {
  require(var >= 0.0, ErrorCode::InvalidVariance, "variance must be >= 0");
  const Real scaled = mu / std::sqrt(1.0 + kProbitScale * var);
  return 1.0 / (1.0 + std::exp(-scaled));
}

Vector probit_multiclass(const OutputGaussian& og) {
  require(og.mean.size() >= 2, ErrorCode::InvalidInput,
          "extended probit needs C >= 2");
  Vector tau(og.mean.size());
  for (Index j = 0; j < tau.size(); ++j)
    tau[j] = og.mean[j] / std::sqrt(1.0 + kProbitScale * og.cov(j, j));
  return softmax(tau);
}

DirichletAlpha laplace_bridge(const OutputGaussian& og) {
  const Index c = og.mean.size();
  require((og.cov.diagonal().array() > 0.0).all(), ErrorCode::InvalidVariance,
          "the bridge needs strictly positive logit variances");
  Vector alpha(c);
  const Real cc = static_cast<Real>(c);
  for (Index i = 0; i < c; ++i) {
    Real sum_exp = 0.0;
    for (Index j = 0; j < c; ++j) sum_exp += std::exp(og.mean[i] - og.mean[j]);
    alpha[i] = (1.0 - 2.0 / cc + sum_exp / (cc * cc)) / og.cov(i, i);
    require(alpha[i] > 0.0, ErrorCode::BridgeDegenerate,
            "bridge produced a non-positive concentration");
  }
  return {alpha};
}

DeltaResult delta_method(const OutputGaussian& og) {
  require(og.mean.size() >= 2, ErrorCode::InvalidInput,
          "delta method needs C >= 2");
  const Vector s = softmax(og.mean);
  Vector probs(s.size());
  for (Index c = 0; c < s.size(); ++c) {
    const Matrix h = softmax_component_hessian(og.mean, c);
    probs[c] = s[c] + 0.5 * (h.array() * og.cov.array()).sum();
  }
  DeltaResult result;
  result.clamped = (probs.array() < 1e-12).any();
  probs = probs.cwiseMax(1e-12);
  result.probs = probs / probs.sum();
  return result;
}

Vector mc_predictive(const OutputGaussian& og, Index samples, std::uint64_t seed) {
  require(samples >= 1, ErrorCode::InvalidInput, "samples must be >= 1");
  const Matrix root = psd_sqrt(og.cov);
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  Vector acc = Vector::Zero(og.mean.size());
  Vector eps(og.mean.size());
  for (Index s = 0; s < samples; ++s) {
    for (Index i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
    acc += softmax(og.mean + root * eps);
  }
  return acc / static_cast<Real>(samples);
}

Vector mc_predictive(const posterior::LaplacePosterior& post,
                     const nn::MlpSpec& spec, const Vector& x, Index samples,
                     std::uint64_t seed) {
  require(samples >= 1, ErrorCode::InvalidInput, "samples must be >= 1");
  const auto thetas = posterior::sample(post, samples, seed);
  Vector acc = Vector::Zero(spec.output_dim());
  for (const Vector& theta : thetas)
    acc += softmax(nn::forward(spec, theta, x).output());
  return acc / static_cast<Real>(samples);
}

Real entropy(const Vector& probs) {
  Real h = 0.0;
  for (Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

Real gaussian_log_density(const Vector& y, const Vector& mean, const Matrix& cov) {
  const Index n = y.size();
  const Vector diff = y - mean;
  const Matrix solved = linalg::psd_solve(cov, diff);
  return -0.5 * (static_cast<Real>(n) * kLog2Pi + linalg::logdet_psd(cov) +
                 diff.dot(solved.col(0)));
}

}  // namespace lapkit::predictive
