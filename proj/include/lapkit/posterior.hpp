#pragma once

#include "lapkit/curvature.hpp"
#include "lapkit/linalg.hpp"
#include "lapkit/nn.hpp"
#include "lapkit/types.hpp"

#include <cstdint>
#include <vector>

namespace lapkit::posterior {

/// How the prior precision enters Kronecker-factored precisions: SqrtSplit
/// adds sqrt(lambda) to each factor, ExactEigen combines factor eigenvalue
/// products with lambda exactly.
enum class KfacPriorMode { SqrtSplit, ExactEigen };

struct KfacEigenCache {
  Matrix qa;  // eigenvectors of the a-factor
  Vector ea;  // eigenvalues, ascending
  Matrix qg;
  Vector eg;
};

/// Gaussian posterior N(theta_map, Sigma) over a weight subset with
/// structured precision Lambda = H + lambda I; off-subset weights stay
/// fixed at theta_map. Immutable once fitted.
struct LaplacePosterior {
  Vector theta_map;  // full length D
  nn::PriorSpec prior;
  curvature::CurvatureEstimate curvature;
  KfacPriorMode kfac_prior_mode = KfacPriorMode::ExactEigen;

  // cached eigen-information
  linalg::SymEig full_eig;              // Full only
  bool prior_folded = false;            // Full + PerLayer: prior inside evals
  std::vector<KfacEigenCache> kfac_eig;
  Vector prior_diag;                    // per-subset-dim prior precision

  Index dim() const { return curvature.dim(); }
  Real scalar_precision() const {
    require(prior.kind == nn::PriorSpec::Kind::Scalar, ErrorCode::InvalidPrior,
            "scalar prior required");
    return prior.precision;
  }
};

struct EvidenceReport {
  Real log_evidence = 0.0;
  Real neg_loss_at_map = 0.0;
  Real half_logdet_sigma = 0.0;
  Real d_half_log_2pi = 0.0;
};

/// Combines curvature and prior into the Laplace posterior, caching the
/// eigen-information every downstream quantity reads.
LaplacePosterior fit(const Vector& theta_map,
                     const curvature::CurvatureEstimate& curv,
                     const nn::PriorSpec& prior,
                     KfacPriorMode mode = KfacPriorMode::ExactEigen);

/// Cheap refit at a different scalar prior precision; reuses all caches.
LaplacePosterior with_prior_precision(const LaplacePosterior& post, Real lambda);

/// log det Lambda from the cached eigen-information.
Real logdet_precision(const LaplacePosterior& post);

/// Eigenvalues of the curvature part of the precision (before the scalar
/// prior shift). Requires a scalar, unfolded prior; Kfac in ExactEigen mode.
Vector curvature_eigenvalues(const LaplacePosterior& post);

/// Sum over precision eigenvalues of lambda/eig, i.e. lambda * tr(Sigma).
Real scaled_trace_covariance(const LaplacePosterior& post);

/// Marginal posterior variances diag(Sigma) over the subset dims.
Vector marginal_variances(const LaplacePosterior& post);

/// Top-S marginal-variance mask over all D weights; ties keep lower indices.
curvature::SubsetSpec select_subnetwork(const Vector& variances, Index S);

/// Draws full-length parameter vectors; off-subset coordinates are
/// bit-equal to theta_map. Deterministic given the seed.
std::vector<Vector> sample(const LaplacePosterior& post, Index count,
                           std::uint64_t seed);

/// J_s^T Sigma J_s for a subset-rows Jacobian (D_s x K) -> K x K.
Matrix quadratic_form(const LaplacePosterior& post, const Matrix& j_subset);

/// Laplace evidence log Z = -L + (D_s/2) log 2pi + (1/2) log det Sigma.
/// L is the full model's neg_log_joint; D_s and det Sigma cover the subset.
EvidenceReport log_marginal_likelihood(const LaplacePosterior& post,
                                       const nn::MlpSpec& spec,
                                       const nn::Batch& batch,
                                       const nn::Likelihood& lik);

/// Dense precision / covariance (test and oracle bridge).
Matrix materialize_precision(const LaplacePosterior& post, Index cap = 4096);
Matrix materialize_covariance(const LaplacePosterior& post, Index cap = 4096);

}  // namespace lapkit::posterior
