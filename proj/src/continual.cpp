#include "lapkit/continual.hpp"

#include "lapkit/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace lapkit::continual {

namespace {

using curvature::CurvatureEstimate;
using curvature::Structure;
using curvature::SubsetSpec;

Vector data_grad(const nn::MlpSpec& spec, const Vector& theta,
                 const nn::Batch& batch, const nn::Likelihood& lik) {
  Vector grad = Vector::Zero(spec.param_count());
  for (Index n = 0; n < batch.size(); ++n) {
    const auto trace = nn::forward(spec, theta, batch.inputs.row(n));
    const Vector g = nn::nll_grad(
        lik, trace.output(),
        lik.is_classification() ? batch.labels[static_cast<std::size_t>(n)] : -1,
        lik.is_classification() ? Vector() : Vector(batch.targets.row(n)));
    grad += nn::param_gradients(spec, trace,
                                nn::backprop_directions(spec, theta, trace, g))
                .col(0);
  }
  return grad;
}

// Evidence of the current task under the prior N(prev_theta, Lambda_prev^-1):
// log p(D_t | theta) - 1/2 d^T Lambda_prev d + 1/2 logdet Lambda_prev
//                    - 1/2 logdet Lambda_new, with d = theta - prev_theta.
Real task_log_evidence(const nn::MlpSpec& spec, const nn::Batch& task,
                       const nn::Likelihood& lik, const Vector& theta,
                       const Vector& delta, const CurvatureEstimate& h_prev,
                       const posterior::LaplacePosterior& post_prev,
                       const posterior::LaplacePosterior& post_new, Real lambda) {
  const Real loglik = -nn::data_nll(spec, theta, task, lik);
  const Real quad =
      delta.dot(curvature::multiply(h_prev, delta)) + lambda * delta.squaredNorm();
  return loglik - 0.5 * quad + 0.5 * posterior::logdet_precision(post_prev) -
         0.5 * posterior::logdet_precision(post_new);
}

Real tune_lambda(const nn::MlpSpec& spec, const nn::Batch& task,
                 const nn::Likelihood& lik, const Vector& theta,
                 const Vector& delta, const CurvatureEstimate& h_prev,
                 const CurvatureEstimate& h_new, Real lambda, Index steps,
                 Real lr) {
  auto prev_base = posterior::fit(theta, h_prev, nn::PriorSpec::scalar(lambda));
  auto new_base = posterior::fit(theta, h_new, nn::PriorSpec::scalar(lambda));

  auto evidence = [&](Real lam) {
    const auto prev = posterior::with_prior_precision(prev_base, lam);
    const auto next = posterior::with_prior_precision(new_base, lam);
    return task_log_evidence(spec, task, lik, theta, delta, h_prev, prev, next, lam);
  };
  auto gradient = [&](Real lam) {
    const auto prev = posterior::with_prior_precision(prev_base, lam);
    const auto next = posterior::with_prior_precision(new_base, lam);
    return -0.5 * lam * delta.squaredNorm() +
           0.5 * posterior::scaled_trace_covariance(prev) -
           0.5 * posterior::scaled_trace_covariance(next);
  };

  Real x = std::log(lambda);
  Real current = evidence(lambda);
  Real best_lambda = lambda;
  Real best_value = current;
  for (Index step = 0; step < steps; ++step) {
    const Real grad = gradient(std::exp(x));
    Real step_size = lr;
    bool accepted = false;
    for (int halving = 0; halving < 10 && !accepted; ++halving) {
      const Real x_new = x + step_size * grad;
      const Real value = evidence(std::exp(x_new));
      if (value >= current) {
        x = x_new;
        current = value;
        accepted = true;
      } else {
        step_size *= 0.5;
      }
    }
    if (!accepted) break;
    if (current > best_value) {
      best_value = current;
      best_lambda = std::exp(x);
    }
  }
  return best_lambda;
}

}  // namespace

RunningPosterior make_running(const nn::MlpSpec& spec,
                              const Structure& structure,
                              curvature::CurvatureKind kind, Real lambda) {
  require(structure.kind == Structure::Kind::Diagonal ||
              structure.kind == Structure::Kind::Kfac,
          ErrorCode::UnsupportedCombination,
          "continual learning accumulates Diagonal or Kfac curvature");
  require(lambda > 0.0, ErrorCode::InvalidPrior, "prior precision must be > 0");

  RunningPosterior running;
  running.theta = Vector::Zero(spec.param_count());
  const nn::Batch empty{Matrix(0, spec.input_dim()), {}, Matrix(0, spec.output_dim())};
  running.accumulated = curvature::estimate(spec, running.theta, empty,
                                            nn::Likelihood::categorical(), kind,
                                            structure, SubsetSpec::all());
  running.lambda = lambda;
  return running;
}

RunningPosterior consolidate(const nn::MlpSpec& spec,
                             const RunningPosterior& running,
                             const nn::Batch& task, const nn::Likelihood& lik,
                             const ConsolidateConfig& cfg) {
  require(running.theta.size() == spec.param_count(), ErrorCode::InvalidState,
          "running state does not match the network");
  require(running.accumulated.dim() == spec.param_count(), ErrorCode::InvalidState,
          "accumulated curvature does not cover all weights");

  const Vector anchor = running.theta;
  const Real lambda = running.lambda;

  auto objective = [&](const Vector& theta) {
    Real value = nn::data_nll(spec, theta, task, lik);
    if (cfg.use_penalty) {
      const Vector delta = theta - anchor;
      value += 0.5 * (delta.dot(curvature::multiply(running.accumulated, delta)) +
                      lambda * delta.squaredNorm());
    } else {
      value += 0.5 * lambda * theta.squaredNorm();
    }
    return value;
  };
  auto gradient = [&](const Vector& theta) {
    Vector grad = data_grad(spec, theta, task, lik);
    if (cfg.use_penalty) {
      const Vector delta = theta - anchor;
      grad += curvature::multiply(running.accumulated, delta) + lambda * delta;
    } else {
      grad += lambda * theta;
    }
    return grad;
  };

  Vector theta = running.task_count == 0 ? nn::init_params(spec, cfg.opt.seed)
                                         : running.theta;
  Vector velocity = Vector::Zero(theta.size());
  Real best_value = objective(theta);
  require(std::isfinite(best_value), ErrorCode::TrainingDiverged,
          "non-finite objective at initialization");
  Vector best = theta;
  for (Index step = 0; step < cfg.opt.steps; ++step) {
    velocity = cfg.opt.momentum * velocity - cfg.opt.lr * gradient(theta);
    theta += velocity;
    const Real value = objective(theta);
    require(std::isfinite(value), ErrorCode::TrainingDiverged,
            "task training diverged to a non-finite objective");
    if (value < best_value) {
      best_value = value;
      best = theta;
    }
  }

  RunningPosterior next = running;
  next.theta = best;
  next.task_count = running.task_count + 1;
  if (cfg.use_penalty) {
    const auto task_curv = curvature::estimate(
        spec, best, task, lik, running.accumulated.kind,
        running.accumulated.structure, SubsetSpec::all());
    curvature::add_in_place(next.accumulated, task_curv);
    if (cfg.tune_gamma) {
      const Vector delta = best - anchor;
      next.lambda =
          tune_lambda(spec, task, lik, best, delta, running.accumulated,
                      next.accumulated, lambda, cfg.gamma_steps, cfg.gamma_lr);
    }
  }
  return next;
}

std::vector<nn::Batch> permuted_tasks(const nn::Batch& base, Index tasks,
                                      std::uint64_t seed) {
  require(tasks >= 1, ErrorCode::InvalidInput, "need at least one task");
  std::mt19937_64 master(seed);
  std::vector<nn::Batch> stream;
  stream.push_back(base);
  for (Index t = 1; t < tasks; ++t) {
    const std::uint64_t task_seed = master();
    std::vector<Index> perm(static_cast<std::size_t>(base.inputs.cols()));
    std::iota(perm.begin(), perm.end(), Index(0));
    std::mt19937_64 rng(task_seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    nn::Batch task = base;
    for (Index c = 0; c < base.inputs.cols(); ++c)
      task.inputs.col(c) = base.inputs.col(perm[static_cast<std::size_t>(c)]);
    stream.push_back(std::move(task));
  }
  return stream;
}

Matrix evaluate_stream(const nn::MlpSpec& spec,
                       const std::vector<RunningPosterior>& runnings,
                       const std::vector<nn::Batch>& tasks) {
  const Index t_count = static_cast<Index>(runnings.size());
  require(t_count == static_cast<Index>(tasks.size()), ErrorCode::InvalidInput,
          "need one running state per task");
  Matrix acc =
      Matrix::Constant(t_count, t_count, std::numeric_limits<Real>::quiet_NaN());
  for (Index t = 0; t < t_count; ++t) {
    const Vector& theta = runnings[static_cast<std::size_t>(t)].theta;
    for (Index tau = 0; tau <= t; ++tau) {
      const nn::Batch& task = tasks[static_cast<std::size_t>(tau)];
      require(!task.empty(), ErrorCode::MissingData, "cannot score an empty task");
      Index correct = 0;
      for (Index n = 0; n < task.size(); ++n) {
        const Vector f = nn::forward(spec, theta, task.inputs.row(n)).output();
        Index arg = 0;
        f.maxCoeff(&arg);
        if (arg == task.labels[static_cast<std::size_t>(n)]) ++correct;
      }
      acc(t, tau) = static_cast<Real>(correct) / static_cast<Real>(task.size());
    }
  }
  return acc;
}

}  // namespace lapkit::continual
