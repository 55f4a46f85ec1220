#pragma once

#include "lapkit/posterior.hpp"
#include "lapkit/types.hpp"

#include <cstdint>

namespace lapkit::predictive {

/// Linearized output distribution N(mean, cov) at one test input.
struct OutputGaussian {
  Vector mean;  // C
  Matrix cov;   // C x C, PSD
};

struct DirichletAlpha {
  Vector alpha;  // all entries > 0

  Vector mean() const { return alpha / alpha.sum(); }
};

struct DeltaResult {
  Vector probs;
  bool clamped = false;  // true if clamp-and-renormalize fired
};

Vector softmax(const Vector& f);

/// C x C Hessian of softmax component c at logits mu.
Matrix softmax_component_hessian(const Vector& mu, Index c);

/// mu = f_MAP(x), cov = J_s^T Sigma J_s with negative eigenvalues clipped.
OutputGaussian output_distribution(const posterior::LaplacePosterior& post,
                                   const nn::MlpSpec& spec, const Vector& x);

/// Gaussian posterior predictive for regression: mean, cov + sigma^2 I.
OutputGaussian predict_regression(const OutputGaussian& og, Real sigma_noise);

/// sigma(mu / sqrt(1 + pi/8 * var)) for a single logit.
Real probit_binary(Real mu, Real var);

/// Extended probit: softmax of mu_j / sqrt(1 + pi/8 * cov_jj). Uses only the
/// covariance diagonal.
Vector probit_multiclass(const OutputGaussian& og);

/// Gaussian-over-logits to Dirichlet map; refuses when any alpha <= 0.
DirichletAlpha laplace_bridge(const OutputGaussian& og);

/// softmax(mu) + 1/2 tr(B_c cov) per class, clamped to the simplex.
DeltaResult delta_method(const OutputGaussian& og);

/// Monte Carlo over the output Gaussian (logit space), categorical mean.
Vector mc_predictive(const OutputGaussian& og, Index samples, std::uint64_t seed);

/// Monte Carlo over parameter samples pushed through the network.
Vector mc_predictive(const posterior::LaplacePosterior& post,
                     const nn::MlpSpec& spec, const Vector& x, Index samples,
                     std::uint64_t seed);

/// Shannon entropy of a probability vector (natural log).
Real entropy(const Vector& probs);

/// log N(y; mean, cov) for a dense PSD covariance.
Real gaussian_log_density(const Vector& y, const Vector& mean, const Matrix& cov);

}  // namespace lapkit::predictive
