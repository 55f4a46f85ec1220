#pragma once

#include "lapkit/curvature.hpp"
#include "lapkit/nn.hpp"
#include "lapkit/types.hpp"

#include <cstdint>
#include <vector>

namespace lapkit::continual {

/// State carried across tasks: the anchor parameters, the sum of per-task
/// likelihood curvatures (Diagonal element-wise, Kfac factor-wise), and the
/// base prior precision.
struct RunningPosterior {
  Vector theta;  // zeros before the first task
  curvature::CurvatureEstimate accumulated;
  Real lambda = 1.0;
  Index task_count = 0;
};

struct ConsolidateConfig {
  nn::TrainConfig opt;
  bool tune_gamma = false;
  Index gamma_steps = 20;
  Real gamma_lr = 0.5;
  /// With the penalty off, each task is trained as plain MAP (weight decay
  /// toward zero) from a warm start; nothing anchors earlier tasks.
  bool use_penalty = true;
};

/// Empty running state (zero curvature). Structure must be Diagonal or Kfac.
RunningPosterior make_running(const nn::MlpSpec& spec,
                              const curvature::Structure& structure,
                              curvature::CurvatureKind kind, Real lambda);

/// One task update: train theta on the task likelihood plus the quadratic
/// penalty (theta - prev)^T (H_acc + lambda I) (theta - prev), estimate the
/// task curvature at the new theta and add it, optionally retune lambda on
/// the current task's Laplace evidence.
RunningPosterior consolidate(const nn::MlpSpec& spec,
                             const RunningPosterior& running,
                             const nn::Batch& task, const nn::Likelihood& lik,
                             const ConsolidateConfig& cfg);

/// Task 1 is the identity feature permutation; tasks 2..T apply independent
/// seeded column permutations. Labels stay unchanged.
std::vector<nn::Batch> permuted_tasks(const nn::Batch& base, Index tasks,
                                      std::uint64_t seed);

/// Lower-triangular T x T accuracy matrix: entry (t, tau <= t) is the MAP
/// predictive accuracy of the model after task t on task tau's data. Upper
/// entries are NaN.
Matrix evaluate_stream(const nn::MlpSpec& spec,
                       const std::vector<RunningPosterior>& runnings,
                       const std::vector<nn::Batch>& tasks);

}  // namespace lapkit::continual
