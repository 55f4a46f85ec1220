#include "lapkit/tuning.hpp"

#include "lapkit/predictive.hpp"

#include <cmath>

namespace lapkit::tuning {

namespace {

// Predictive log-likelihood of one datum under the library defaults:
// extended probit for classification, closed-form Gaussian for regression.
Real predictive_log_likelihood(const posterior::LaplacePosterior& post,
                               const nn::MlpSpec& spec, const nn::Likelihood& lik,
                               const Vector& x, Index label, const Vector& target) {
  const auto og = predictive::output_distribution(post, spec, x);
  if (lik.is_classification()) {
    Vector probs;
    if (og.mean.size() == 1) {
      const Real p = predictive::probit_binary(og.mean[0], og.cov(0, 0));
      probs.resize(2);
      probs << 1.0 - p, p;
    } else {
      probs = predictive::probit_multiclass(og);
    }
    return std::log(std::max(probs[label], 1e-12));
  }
  const auto pred = predictive::predict_regression(og, lik.sigma_noise);
  return predictive::gaussian_log_density(target, pred.mean, pred.cov);
}

Real objective_score(const posterior::LaplacePosterior& post,
                     const nn::MlpSpec& spec, const nn::Batch& train,
                     const nn::Likelihood& lik, const TuneConfig& cfg,
                     const nn::Batch* val, const nn::Batch* ood) {
  if (cfg.objective == TuneObjective::MargLik) {
    return posterior::log_marginal_likelihood(post, spec, train, lik).log_evidence;
  }
  Real score = 0.0;
  for (Index n = 0; n < val->size(); ++n) {
    const Index label =
        lik.is_classification() ? val->labels[static_cast<std::size_t>(n)] : -1;
    const Vector target =
        lik.is_classification() ? Vector() : Vector(val->targets.row(n));
    score += predictive_log_likelihood(post, spec, lik, val->inputs.row(n), label,
                                       target);
  }
  if (cfg.objective == TuneObjective::ValNllPlusOodEntropy) {
    for (Index n = 0; n < ood->size(); ++n) {
      const auto og =
          predictive::output_distribution(post, spec, ood->inputs.row(n));
      const Vector probs = og.mean.size() == 1
                               ? Vector::Constant(1, 1.0)
                               : predictive::probit_multiclass(og);
      score += cfg.lambda_ood * predictive::entropy(probs);
    }
  }
  return score;
}

struct AscentResult {
  posterior::LaplacePosterior post;
  Real log_evidence = 0.0;
  std::vector<std::pair<Real, Real>> trajectory;
};

// Backtracking (halving, max 10) ascent on log lambda; keeps the best iterate.
AscentResult ascend_log_lambda(posterior::LaplacePosterior post,
                               const nn::MlpSpec& spec, const nn::Batch& batch,
                               const nn::Likelihood& lik, Index steps, Real lr) {
  AscentResult best;
  Real current_logz =
      posterior::log_marginal_likelihood(post, spec, batch, lik).log_evidence;
  best.post = post;
  best.log_evidence = current_logz;
  best.trajectory.emplace_back(post.scalar_precision(), current_logz);

  Real x = std::log(post.scalar_precision());
  for (Index step = 0; step < steps; ++step) {
    const Real grad = marglik_grad(post, spec, batch, lik);
    Real step_size = lr;
    bool accepted = false;
    for (int halving = 0; halving < 10 && !accepted; ++halving) {
      const Real x_new = x + step_size * grad;
      auto candidate = posterior::with_prior_precision(post, std::exp(x_new));
      const Real logz_new =
          posterior::log_marginal_likelihood(candidate, spec, batch, lik)
              .log_evidence;
      if (logz_new >= current_logz) {
        x = x_new;
        post = std::move(candidate);
        current_logz = logz_new;
        accepted = true;
      } else {
        step_size *= 0.5;
      }
    }
    if (!accepted) break;
    best.trajectory.emplace_back(post.scalar_precision(), current_logz);
    if (current_logz > best.log_evidence) {
      best.log_evidence = current_logz;
      best.post = post;
    }
  }
  return best;
}

}  // namespace

GridSpec GridSpec::log_space(Real lo, Real hi, Index points) {
  require(points >= 1 && lo > 0.0 && hi >= lo, ErrorCode::InvalidInput,
          "grid needs points >= 1 and 0 < lo <= hi");
  GridSpec grid;
  if (points == 1) {
    grid.values.push_back(lo);
    return grid;
  }
  const Real log_lo = std::log(lo);
  const Real log_hi = std::log(hi);
  for (Index i = 0; i < points; ++i) {
    const Real t = static_cast<Real>(i) / static_cast<Real>(points - 1);
    grid.values.push_back(std::exp(log_lo + t * (log_hi - log_lo)));
  }
  return grid;
}

TuneResult tune_posthoc(const nn::MlpSpec& spec, const Vector& theta_map,
                        const nn::Batch& train, const nn::Likelihood& lik,
                        curvature::CurvatureKind kind,
                        const curvature::Structure& structure,
                        const curvature::SubsetSpec& subset,
                        const TuneConfig& cfg, const nn::Batch* val,
                        const nn::Batch* ood, posterior::KfacPriorMode mode) {
  require(!cfg.lambda_grid.values.empty(), ErrorCode::InvalidInput,
          "lambda grid must be non-empty");
  for (Real v : cfg.lambda_grid.values)
    require(v > 0.0, ErrorCode::InvalidInput, "lambda grid must be positive");
  if (cfg.objective != TuneObjective::MargLik)
    require(val != nullptr && !val->empty(), ErrorCode::MissingData,
            "validation objectives need a validation batch");
  if (cfg.objective == TuneObjective::ValNllPlusOodEntropy) {
    require(ood != nullptr && !ood->empty(), ErrorCode::MissingData,
            "the OOD objective needs an OOD batch");
    require(lik.is_classification(), ErrorCode::UnsupportedCombination,
            "the OOD entropy objective applies to classification only");
    require(cfg.lambda_ood > 0.0 && cfg.lambda_ood <= 1.0, ErrorCode::InvalidInput,
            "lambda_ood must lie in (0, 1]");
  }
  if (cfg.sigma_grid.has_value())
    require(!lik.is_classification(), ErrorCode::UnsupportedCombination,
            "observation-noise tuning applies to regression only");

  std::vector<Real> sigmas;
  if (cfg.sigma_grid.has_value()) {
    sigmas = cfg.sigma_grid->values;
    require(!sigmas.empty(), ErrorCode::InvalidInput, "sigma grid must be non-empty");
  } else {
    sigmas.push_back(lik.sigma_noise);
  }

  TuneResult result;
  bool have_best = false;
  Real best_score = 0.0;

  for (Real sigma : sigmas) {
    nn::Likelihood lik_sigma = lik;
    if (!lik.is_classification()) lik_sigma = nn::Likelihood::regression(sigma);
    const auto curv =
        curvature::estimate(spec, theta_map, train, lik_sigma, kind, structure, subset);
    const auto base =
        posterior::fit(theta_map, curv, nn::PriorSpec::scalar(cfg.lambda_grid.values[0]),
                       mode);
    for (Real lambda : cfg.lambda_grid.values) {
      const auto post = posterior::with_prior_precision(base, lambda);
      const Real score = objective_score(post, spec, train, lik_sigma, cfg, val, ood);
      result.scores.push_back({lambda, sigma, score});
      const bool better =
          !have_best || score > best_score ||
          (score == best_score &&
           (lambda < result.lambda ||
            (lambda == result.lambda && sigma < result.sigma)));
      if (better) {
        have_best = true;
        best_score = score;
        result.lambda = lambda;
        result.sigma = sigma;
      }
    }
  }
  return result;
}

// The gradient is fully determined by theta_map and the cached eigenvalues;
// the data enters only through the fitted posterior.
Real marglik_grad(const posterior::LaplacePosterior& post, const nn::MlpSpec&,
                  const nn::Batch&, const nn::Likelihood&) {
  const Real lambda = post.scalar_precision();
  const Vector evals = posterior::curvature_eigenvalues(post);
  Real shrink = 0.0;  // sum of lambda / (l_i + lambda)
  for (Index i = 0; i < evals.size(); ++i) shrink += lambda / (evals[i] + lambda);
  const Real d = static_cast<Real>(post.theta_map.size());
  const Real quad = post.theta_map.squaredNorm();
  return 0.5 * (d - lambda * quad) - 0.5 * shrink;
}

MarglikOptResult optimize_marglik(const nn::MlpSpec& spec, const Vector& theta_map,
                                  const nn::Batch& batch, const nn::Likelihood& lik,
                                  curvature::CurvatureKind kind,
                                  const curvature::Structure& structure,
                                  const curvature::SubsetSpec& subset,
                                  Real init_lambda, Index steps, Real lr,
                                  posterior::KfacPriorMode mode) {
  require(steps >= 1, ErrorCode::InvalidInput, "steps must be >= 1");
  const auto curv =
      curvature::estimate(spec, theta_map, batch, lik, kind, structure, subset);
  auto post =
      posterior::fit(theta_map, curv, nn::PriorSpec::scalar(init_lambda), mode);
  auto ascent = ascend_log_lambda(std::move(post), spec, batch, lik, steps, lr);

  MarglikOptResult result;
  result.lambda = ascent.post.scalar_precision();
  result.log_evidence = ascent.log_evidence;
  result.trajectory = std::move(ascent.trajectory);
  return result;
}

OnlineResult online_laplace_train(const nn::MlpSpec& spec, const nn::Batch& batch,
                                  const nn::Likelihood& lik,
                                  const OnlineConfig& cfg,
                                  curvature::CurvatureKind kind,
                                  const curvature::Structure& structure) {
  require(cfg.frequency >= 1, ErrorCode::InvalidInput, "frequency must be >= 1");
  require(cfg.map_steps >= 0 && cfg.hyper_steps >= 0, ErrorCode::InvalidInput,
          "step counts must be >= 0");
  require(cfg.init_lambda > 0.0, ErrorCode::InvalidPrior,
          "initial prior precision must be > 0");

  OnlineResult result;
  result.theta = nn::init_params(spec, cfg.seed);
  result.lambda = cfg.init_lambda;

  for (Index t = 1; t <= cfg.map_steps; ++t) {
    const auto prior = nn::PriorSpec::scalar(result.lambda);
    const Vector grad =
        nn::grad_neg_log_joint(spec, result.theta, batch, lik, prior);
    result.theta -= cfg.map_lr * grad;
    const Real loss = nn::neg_log_joint(spec, result.theta, batch, lik, prior);
    require(std::isfinite(loss), ErrorCode::TrainingDiverged,
            "online training diverged to a non-finite loss");

    if (t % cfg.frequency == 0) {
      const auto curv = curvature::estimate(spec, result.theta, batch, lik, kind,
                                            structure, curvature::SubsetSpec::all());
      auto post = posterior::fit(result.theta, curv,
                                 nn::PriorSpec::scalar(result.lambda));
      auto ascent = ascend_log_lambda(std::move(post), spec, batch, lik,
                                      cfg.hyper_steps, cfg.hyper_lr);
      result.lambda = ascent.post.scalar_precision();
      result.events.push_back({t, result.lambda, ascent.log_evidence});
    }
  }
  return result;
}

}  // namespace lapkit::tuning
