#pragma once

#include "lapkit/curvature.hpp"
#include "lapkit/nn.hpp"
#include "lapkit/posterior.hpp"
#include "lapkit/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace lapkit::tuning {

enum class TuneObjective { ValNll, ValNllPlusOodEntropy, MargLik };

struct GridSpec {
  std::vector<Real> values;

  static GridSpec log_space(Real lo, Real hi, Index points);
  /// 31 log-spaced points in [1e-4, 1e4].
  static GridSpec default_grid() { return log_space(1e-4, 1e4, 31); }
};

struct TuneConfig {
  TuneObjective objective = TuneObjective::MargLik;
  Real lambda_ood = 0.5;  // trade-off weight for the OOD entropy term
  GridSpec lambda_grid = GridSpec::default_grid();
  std::optional<GridSpec> sigma_grid;  // regression observation noise axis
};

struct TuneCandidate {
  Real lambda = 0.0;
  Real sigma = 0.0;
  Real score = 0.0;
};

struct TuneResult {
  Real lambda = 0.0;
  Real sigma = 0.0;  // selected observation noise (regression), else input value
  std::vector<TuneCandidate> scores;
};

/// Grid search over prior precision (and optionally observation noise).
/// Ties prefer the smaller lambda, then the smaller sigma.
TuneResult tune_posthoc(const nn::MlpSpec& spec, const Vector& theta_map,
                        const nn::Batch& train, const nn::Likelihood& lik,
                        curvature::CurvatureKind kind,
                        const curvature::Structure& structure,
                        const curvature::SubsetSpec& subset,
                        const TuneConfig& cfg, const nn::Batch* val = nullptr,
                        const nn::Batch* ood = nullptr,
                        posterior::KfacPriorMode mode =
                            posterior::KfacPriorMode::ExactEigen);

/// Analytic d(log Z)/d(log lambda) assembled from the cached eigenvalues.
/// Scalar prior only; Kfac must be in ExactEigen mode.
Real marglik_grad(const posterior::LaplacePosterior& post,
                  const nn::MlpSpec& spec, const nn::Batch& batch,
                  const nn::Likelihood& lik);

struct MarglikOptResult {
  Real lambda = 0.0;
  Real log_evidence = 0.0;
  std::vector<std::pair<Real, Real>> trajectory;  // (lambda, log evidence)
};

/// Backtracking gradient ascent on log lambda; returns the best iterate.
MarglikOptResult optimize_marglik(const nn::MlpSpec& spec, const Vector& theta_map,
                                  const nn::Batch& batch, const nn::Likelihood& lik,
                                  curvature::CurvatureKind kind,
                                  const curvature::Structure& structure,
                                  const curvature::SubsetSpec& subset,
                                  Real init_lambda, Index steps, Real lr,
                                  posterior::KfacPriorMode mode =
                                      posterior::KfacPriorMode::ExactEigen);

struct OnlineConfig {
  Real map_lr = 0.05;
  Index map_steps = 500;
  Real hyper_lr = 0.1;
  Index hyper_steps = 10;
  Index frequency = 50;
  std::uint64_t seed = 0;
  Real init_lambda = 1.0;
};

struct OnlineEvent {
  Index step = 0;
  Real lambda = 0.0;
  Real log_evidence = 0.0;
};

struct OnlineResult {
  Vector theta;
  Real lambda = 0.0;
  std::vector<OnlineEvent> events;
};

/// Plain gradient MAP steps interleaved, every `frequency` steps, with a
/// Laplace fit and `hyper_steps` of evidence ascent on log lambda.
OnlineResult online_laplace_train(const nn::MlpSpec& spec, const nn::Batch& batch,
                                  const nn::Likelihood& lik,
                                  const OnlineConfig& cfg,
                                  curvature::CurvatureKind kind,
                                  const curvature::Structure& structure);

}  // namespace lapkit::tuning
