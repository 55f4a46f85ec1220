// laplace-kit: train small MLPs, fit Laplace posteriors over their weights,
// tune hyperparameters by cross-validation or marginal likelihood, and
// evaluate calibrated predictions. File-based, deterministic given --seed.

#include "lapkit/continual.hpp"
#include "lapkit/io.hpp"
#include "lapkit/metrics.hpp"
#include "lapkit/predictive.hpp"
#include "lapkit/tuning.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

using namespace lapkit;
using io::Json;

namespace {

struct CliConfig {
  std::vector<Index> dims = {2, 32, 2};
  std::string activation = "tanh";

  std::string likelihood = "categorical";
  Real sigma_noise = 0.3;

  Real prior_precision = 1.0;
  std::vector<Real> layer_precisions;  // config-file only

  std::string kind = "ggn";
  std::string structure = "kfac";
  Index rank = 10;
  std::string subset = "last_layer";
  std::string kfac_prior_mode = "exact_eigen";

  std::string pred_type = "glm";  // glm | mc | map
  std::string link;               // probit | bridge | delta | mc | exact
  Index samples = 20;

  // the loss is sum-reduced over the batch; defaults suit a few hundred rows
  Real lr = 1e-3;
  Real momentum = 0.9;
  Index steps = 1500;

  std::string objective = "marglik";
  Real lambda_ood = 0.5;
  Real grid_min = 1e-4;
  Real grid_max = 1e4;
  Index grid_points = 31;
  std::vector<Real> sigma_grid;

  std::uint64_t seed = 0;
};

// --config overrides flags: values present in the file win
void overlay_config(const std::string& path, CliConfig& cfg) {
  const Json j = io::load_json_file(path);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("dims")) cfg.dims = m.at("dims").get<std::vector<Index>>();
    if (m.contains("activation")) cfg.activation = m.at("activation");
  }
  if (j.contains("likelihood")) {
    const auto& l = j.at("likelihood");
    if (l.contains("type")) cfg.likelihood = l.at("type");
    if (l.contains("sigma_noise")) cfg.sigma_noise = l.at("sigma_noise");
  }
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    if (p.contains("precision")) cfg.prior_precision = p.at("precision");
    if (p.contains("precisions"))
      cfg.layer_precisions = p.at("precisions").get<std::vector<Real>>();
  }
  if (j.contains("curvature")) {
    const auto& c = j.at("curvature");
    if (c.contains("kind")) cfg.kind = c.at("kind");
    if (c.contains("structure")) cfg.structure = c.at("structure");
    if (c.contains("rank")) cfg.rank = c.at("rank");
    if (c.contains("subset")) cfg.subset = c.at("subset");
    if (c.contains("kfac_prior_mode")) cfg.kfac_prior_mode = c.at("kfac_prior_mode");
  }
  if (j.contains("predictive")) {
    const auto& p = j.at("predictive");
    if (p.contains("pred_type")) cfg.pred_type = p.at("pred_type");
    if (p.contains("link")) cfg.link = p.at("link");
    if (p.contains("samples")) cfg.samples = p.at("samples");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("lr")) cfg.lr = t.at("lr");
    if (t.contains("momentum")) cfg.momentum = t.at("momentum");
    if (t.contains("steps")) cfg.steps = t.at("steps");
  }
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    if (t.contains("objective")) cfg.objective = t.at("objective");
    if (t.contains("lambda_ood")) cfg.lambda_ood = t.at("lambda_ood");
    if (t.contains("grid")) {
      const auto& g = t.at("grid");
      if (g.contains("min")) cfg.grid_min = g.at("min");
      if (g.contains("max")) cfg.grid_max = g.at("max");
      if (g.contains("points")) cfg.grid_points = g.at("points");
    }
    if (t.contains("sigma_grid"))
      cfg.sigma_grid = t.at("sigma_grid").get<std::vector<Real>>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
}

nn::MlpSpec make_spec(const CliConfig& cfg) {
  return nn::MlpSpec(cfg.dims, io::parse_activation(cfg.activation));
}

nn::Likelihood make_likelihood(const CliConfig& cfg) {
  if (cfg.likelihood == "categorical") return nn::Likelihood::categorical();
  if (cfg.likelihood == "regression")
    return nn::Likelihood::regression(cfg.sigma_noise);
  fail(ErrorCode::InvalidInput, "unknown likelihood: " + cfg.likelihood);
}

nn::PriorSpec make_prior(const CliConfig& cfg) {
  if (!cfg.layer_precisions.empty())
    return nn::PriorSpec::per_layer(cfg.layer_precisions);
  return nn::PriorSpec::scalar(cfg.prior_precision);
}

curvature::Structure make_structure(const CliConfig& cfg) {
  if (cfg.structure == "full") return curvature::Structure::full();
  if (cfg.structure == "diag") return curvature::Structure::diagonal();
  if (cfg.structure == "kfac") return curvature::Structure::kfac();
  if (cfg.structure == "lowrank") return curvature::Structure::low_rank(cfg.rank);
  fail(ErrorCode::InvalidInput, "unknown structure: " + cfg.structure);
}

curvature::SubsetSpec make_subset(const CliConfig& cfg) {
  if (cfg.subset == "all") return curvature::SubsetSpec::all();
  if (cfg.subset == "last_layer") return curvature::SubsetSpec::last_layer();
  fail(ErrorCode::InvalidInput,
       "unknown subset: " + cfg.subset + " (subnetwork masks come from files)");
}

std::string effective_link(const CliConfig& cfg, const nn::Likelihood& lik) {
  if (!cfg.link.empty()) return cfg.link;
  return lik.is_classification() ? "probit" : "exact";
}

void validate_predictive(const CliConfig& cfg, const nn::Likelihood& lik) {
  const std::string link = effective_link(cfg, lik);
  if (cfg.pred_type != "glm" && cfg.pred_type != "mc" && cfg.pred_type != "map")
    fail(ErrorCode::InvalidInput, "unknown pred_type: " + cfg.pred_type);
  require(cfg.samples >= 1, ErrorCode::InvalidInput, "samples must be >= 1");
  if (cfg.pred_type != "glm") return;
  if (lik.is_classification()) {
    require(link == "probit" || link == "bridge" || link == "delta" || link == "mc",
            ErrorCode::UnsupportedCombination,
            "classification supports links probit|bridge|delta|mc");
  } else {
    require(link == "exact", ErrorCode::UnsupportedCombination,
            "regression supports only the closed-form link 'exact'");
  }
}

std::uint64_t row_seed(std::uint64_t base, Index row) {
  return base + static_cast<std::uint64_t>(row) * 0x9e3779b97f4a7c15ULL;
}

// classification probabilities for one input under the configured predictive
Vector predict_probs(const posterior::LaplacePosterior& post,
                     const nn::MlpSpec& spec, const CliConfig& cfg,
                     const nn::Likelihood& lik, const Vector& x,
                     std::uint64_t sample_seed, Index row) {
  if (cfg.pred_type == "map")
    return predictive::softmax(nn::forward(spec, post.theta_map, x).output());
  if (cfg.pred_type == "mc")
    return predictive::mc_predictive(post, spec, x, cfg.samples,
                                     row_seed(sample_seed, row));
  const auto og = predictive::output_distribution(post, spec, x);
  const std::string link = effective_link(cfg, lik);
  if (link == "probit") {
    if (og.mean.size() == 1) {
      const Real p = predictive::probit_binary(og.mean[0], og.cov(0, 0));
      return (Vector(2) << 1.0 - p, p).finished();
    }
    return predictive::probit_multiclass(og);
  }
  if (link == "bridge") return predictive::laplace_bridge(og).mean();
  if (link == "delta") return predictive::delta_method(og).probs;
  if (link == "mc")
    return predictive::mc_predictive(og, cfg.samples, row_seed(sample_seed, row));
  fail(ErrorCode::InvalidInput, "unknown link: " + link);
}

// regression predictive mean and variance (per output dim)
std::pair<Vector, Vector> predict_gaussian(const posterior::LaplacePosterior& post,
                                           const nn::MlpSpec& spec,
                                           const CliConfig& cfg,
                                           const nn::Likelihood& lik,
                                           const Vector& x) {
  if (cfg.pred_type == "map") {
    const Vector mean = nn::forward(spec, post.theta_map, x).output();
    const Real s2 = lik.sigma_noise * lik.sigma_noise;
    return {mean, Vector::Constant(mean.size(), s2)};
  }
  const auto og = predictive::output_distribution(post, spec, x);
  const auto pred = predictive::predict_regression(og, lik.sigma_noise);
  return {pred.mean, pred.cov.diagonal()};
}

Matrix predict_probs_matrix(const posterior::LaplacePosterior& post,
                            const nn::MlpSpec& spec, const CliConfig& cfg,
                            const nn::Likelihood& lik, const Matrix& inputs,
                            std::uint64_t sample_seed) {
  Matrix probs(inputs.rows(), spec.output_dim() == 1 ? 2 : spec.output_dim());
  for (Index n = 0; n < inputs.rows(); ++n)
    probs.row(n) =
        predict_probs(post, spec, cfg, lik, inputs.row(n), sample_seed, n);
  return probs;
}

Json metrics_to_json(const metrics::MetricsReport& report) {
  Json j;
  j["nll"] = report.nll;
  j["accuracy"] = report.accuracy;
  j["mean_confidence"] = report.mean_confidence;
  j["ece"] = report.ece;
  j["brier"] = report.brier;
  return j;
}

Json matrix_to_json_with_nan(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) {
      if (std::isnan(m(i, j)))
        row.push_back(nullptr);
      else
        row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int run_generate(const CliConfig& cfg, const std::string& kind, Index n,
                 Real noise, Index classes, const std::string& out) {
  std::mt19937_64 rng(io::sub_seed(cfg.seed, "data"));
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::uniform_real_distribution<Real> uniform(-3.0, 3.0);

  if (kind == "clusters") {
    require(classes >= 2, ErrorCode::InvalidInput, "clusters need >= 2 classes");
    Matrix inputs(n, 2), targets(n, 1);
    for (Index i = 0; i < n; ++i) {
      const Index y = static_cast<Index>(rng() % static_cast<std::uint64_t>(classes));
      const Real angle =
          2.0 * M_PI * static_cast<Real>(y) / static_cast<Real>(classes);
      inputs(i, 0) = 2.0 * std::cos(angle) + noise * normal(rng);
      inputs(i, 1) = 2.0 * std::sin(angle) + noise * normal(rng);
      targets(i, 0) = static_cast<Real>(y);
    }
    io::write_dataset_csv(out, inputs, targets);
  } else if (kind == "sinusoid") {
    Matrix inputs(n, 1), targets(n, 1);
    for (Index i = 0; i < n; ++i) {
      inputs(i, 0) = uniform(rng);
      targets(i, 0) = std::sin(inputs(i, 0)) + noise * normal(rng);
    }
    io::write_dataset_csv(out, inputs, targets);
  } else {
    fail(ErrorCode::InvalidInput, "unknown dataset kind: " + kind);
  }
  return 0;
}

int run_train(const CliConfig& cfg, const std::string& data,
              const std::string& out) {
  const auto spec = make_spec(cfg);
  const auto lik = make_likelihood(cfg);
  const auto batch = io::read_dataset_csv(data).to_batch(lik.is_classification());

  nn::TrainConfig train_cfg;
  train_cfg.lr = cfg.lr;
  train_cfg.momentum = cfg.momentum;
  train_cfg.steps = cfg.steps;
  train_cfg.seed = io::sub_seed(cfg.seed, "init");
  const Vector theta = nn::train_map(spec, batch, lik, make_prior(cfg), train_cfg);
  io::save_json_file(out, io::checkpoint_to_json(spec, theta));
  return 0;
}

posterior::LaplacePosterior fit_posterior(const CliConfig& cfg,
                                          const nn::MlpSpec& spec,
                                          const Vector& theta,
                                          const nn::Batch& batch,
                                          const nn::Likelihood& lik,
                                          const nn::PriorSpec& prior) {
  const auto curv = curvature::estimate(spec, theta, batch, lik,
                                        io::parse_kind(cfg.kind),
                                        make_structure(cfg), make_subset(cfg));
  return posterior::fit(theta, curv, prior,
                        io::parse_prior_mode(cfg.kfac_prior_mode));
}

int run_fit(const CliConfig& cfg, const std::string& model,
            const std::string& data, const std::string& out) {
  const auto [spec, theta] = io::checkpoint_from_json(io::load_json_file(model));
  const auto lik = make_likelihood(cfg);
  const auto batch = io::read_dataset_csv(data).to_batch(lik.is_classification());
  const auto post = fit_posterior(cfg, spec, theta, batch, lik, make_prior(cfg));
  io::save_json_file(out, io::posterior_to_json(post, spec));
  return 0;
}

int run_tune(const CliConfig& cfg, const std::string& model,
             const std::string& data, const std::string& val,
             const std::string& ood, const std::string& out) {
  const auto [spec, theta] = io::checkpoint_from_json(io::load_json_file(model));
  nn::Likelihood lik = make_likelihood(cfg);
  const auto batch = io::read_dataset_csv(data).to_batch(lik.is_classification());

  tuning::TuneConfig tune_cfg;
  if (cfg.objective == "marglik")
    tune_cfg.objective = tuning::TuneObjective::MargLik;
  else if (cfg.objective == "val_nll")
    tune_cfg.objective = tuning::TuneObjective::ValNll;
  else if (cfg.objective == "val_nll_ood")
    tune_cfg.objective = tuning::TuneObjective::ValNllPlusOodEntropy;
  else
    fail(ErrorCode::InvalidInput, "unknown objective: " + cfg.objective);
  tune_cfg.lambda_ood = cfg.lambda_ood;
  tune_cfg.lambda_grid =
      tuning::GridSpec::log_space(cfg.grid_min, cfg.grid_max, cfg.grid_points);
  if (!cfg.sigma_grid.empty())
    tune_cfg.sigma_grid = tuning::GridSpec{cfg.sigma_grid};

  std::optional<nn::Batch> val_batch, ood_batch;
  if (!val.empty())
    val_batch = io::read_dataset_csv(val).to_batch(lik.is_classification());
  if (!ood.empty())
    ood_batch = io::read_dataset_csv(ood).to_batch(lik.is_classification());

  const auto result = tuning::tune_posthoc(
      spec, theta, batch, lik, io::parse_kind(cfg.kind), make_structure(cfg),
      make_subset(cfg), tune_cfg, val_batch ? &*val_batch : nullptr,
      ood_batch ? &*ood_batch : nullptr, io::parse_prior_mode(cfg.kfac_prior_mode));

  if (!lik.is_classification() && !cfg.sigma_grid.empty())
    lik = nn::Likelihood::regression(result.sigma);
  const auto post = fit_posterior(cfg, spec, theta, batch, lik,
                                  nn::PriorSpec::scalar(result.lambda));

  Json j = io::posterior_to_json(post, spec);
  Json tune_report;
  tune_report["objective"] = cfg.objective;
  tune_report["lambda"] = result.lambda;
  if (!cfg.sigma_grid.empty()) tune_report["sigma_noise"] = result.sigma;
  Json scores = Json::array();
  for (const auto& cand : result.scores) {
    Json s;
    s["lambda"] = cand.lambda;
    s["sigma_noise"] = cand.sigma;
    s["score"] = cand.score;
    scores.push_back(std::move(s));
  }
  tune_report["scores"] = std::move(scores);
  j["tuning"] = std::move(tune_report);
  io::save_json_file(out, j);
  return 0;
}

int run_predict(const CliConfig& cfg, const std::string& posterior_path,
                const std::string& data, const std::string& out) {
  const auto [post, spec] =
      io::posterior_from_json(io::load_json_file(posterior_path));
  const auto lik = make_likelihood(cfg);
  require(spec.output_dim() >= 2 || !lik.is_classification(),
          ErrorCode::InvalidInput, "classification needs >= 2 outputs");
  validate_predictive(cfg, lik);
  const auto ds = io::read_dataset_csv(data);
  const std::uint64_t sample_seed = io::sub_seed(cfg.seed, "sample");

  Json j;
  if (lik.is_classification()) {
    j["type"] = "classification";
    const Matrix probs =
        predict_probs_matrix(post, spec, cfg, lik, ds.inputs, sample_seed);
    Json rows = Json::array();
    for (Index n = 0; n < probs.rows(); ++n) {
      Json row = Json::array();
      for (Index c = 0; c < probs.cols(); ++c) row.push_back(probs(n, c));
      rows.push_back(std::move(row));
    }
    j["probs"] = std::move(rows);
  } else {
    j["type"] = "regression";
    Json means = Json::array(), variances = Json::array();
    for (Index n = 0; n < ds.inputs.rows(); ++n) {
      const auto [mean, var] =
          predict_gaussian(post, spec, cfg, lik, ds.inputs.row(n));
      Json mrow = Json::array(), vrow = Json::array();
      for (Index c = 0; c < mean.size(); ++c) {
        mrow.push_back(mean[c]);
        vrow.push_back(var[c]);
      }
      means.push_back(std::move(mrow));
      variances.push_back(std::move(vrow));
    }
    j["mean"] = std::move(means);
    j["variance"] = std::move(variances);
  }
  io::save_json_file(out, j);
  return 0;
}

int run_evaluate(const CliConfig& cfg, const std::string& posterior_path,
                 const std::string& data, const std::string& ood,
                 const std::string& out) {
  const auto [post, spec] =
      io::posterior_from_json(io::load_json_file(posterior_path));
  const auto lik = make_likelihood(cfg);
  validate_predictive(cfg, lik);
  const auto ds = io::read_dataset_csv(data);
  const std::uint64_t sample_seed = io::sub_seed(cfg.seed, "sample");

  Json j;
  if (lik.is_classification()) {
    const auto batch = ds.to_batch(true);
    const Matrix probs =
        predict_probs_matrix(post, spec, cfg, lik, batch.inputs, sample_seed);
    j = metrics_to_json(metrics::evaluate_classification(probs, batch.labels));
    if (!ood.empty()) {
      const auto ood_ds = io::read_dataset_csv(ood);
      const Matrix ood_probs =
          predict_probs_matrix(post, spec, cfg, lik, ood_ds.inputs, sample_seed);
      std::vector<Real> id_conf, ood_conf;
      for (Index n = 0; n < probs.rows(); ++n)
        id_conf.push_back(probs.row(n).maxCoeff());
      for (Index n = 0; n < ood_probs.rows(); ++n)
        ood_conf.push_back(ood_probs.row(n).maxCoeff());
      j["auroc"] = metrics::auroc(ood_conf, id_conf);
      Real mean_ood = 0.0;
      for (Real c : ood_conf) mean_ood += c;
      j["ood_mean_confidence"] = mean_ood / static_cast<Real>(ood_conf.size());
    }
  } else {
    const auto batch = ds.to_batch(false);
    Real nll = 0.0, se = 0.0;
    for (Index n = 0; n < batch.size(); ++n) {
      const auto [mean, var] =
          predict_gaussian(post, spec, cfg, lik, batch.inputs.row(n));
      for (Index c = 0; c < mean.size(); ++c) {
        const Real diff = batch.targets(n, c) - mean[c];
        nll += 0.5 * (kLog2Pi + std::log(var[c]) + diff * diff / var[c]);
        se += diff * diff;
      }
    }
    const Real count = static_cast<Real>(batch.size() * spec.output_dim());
    j["nll"] = nll / static_cast<Real>(batch.size());
    j["rmse"] = std::sqrt(se / count);
    j["n"] = batch.size();
  }
  io::save_json_file(out, j);
  return 0;
}

int run_shift_eval(const CliConfig& cfg, const std::string& posterior_path,
                   const std::string& data, const std::vector<Real>& angles,
                   const std::string& out) {
  const auto [post, spec] =
      io::posterior_from_json(io::load_json_file(posterior_path));
  const auto lik = make_likelihood(cfg);
  require(lik.is_classification(), ErrorCode::UnsupportedCombination,
          "shift-eval is defined for classification data");
  require(spec.input_dim() == 2, ErrorCode::InvalidInput,
          "shift-eval rotates 2-D feature spaces");
  validate_predictive(cfg, lik);
  const auto batch = io::read_dataset_csv(data).to_batch(true);
  const std::uint64_t sample_seed = io::sub_seed(cfg.seed, "sample");

  std::ofstream file(out);
  require(file.good(), ErrorCode::MissingData, "cannot write " + out);
  file << "shift,nll,ece,accuracy,brier\n";
  char buffer[64];
  auto put = [&](Real v, char sep) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    file << buffer << sep;
  };
  for (Real degrees : angles) {
    const Real rad = degrees * M_PI / 180.0;
    Matrix rotated(batch.inputs.rows(), 2);
    for (Index n = 0; n < batch.inputs.rows(); ++n) {
      rotated(n, 0) =
          std::cos(rad) * batch.inputs(n, 0) - std::sin(rad) * batch.inputs(n, 1);
      rotated(n, 1) =
          std::sin(rad) * batch.inputs(n, 0) + std::cos(rad) * batch.inputs(n, 1);
    }
    const Matrix probs =
        predict_probs_matrix(post, spec, cfg, lik, rotated, sample_seed);
    const auto report = metrics::evaluate_classification(probs, batch.labels);
    put(degrees, ',');
    put(report.nll, ',');
    put(report.ece, ',');
    put(report.accuracy, ',');
    put(report.brier, '\n');
  }
  return 0;
}

int run_continual(const CliConfig& cfg, const std::string& data, Index tasks,
                  bool tune_gamma, const std::string& out) {
  const auto spec = make_spec(cfg);
  const auto lik = make_likelihood(cfg);
  require(lik.is_classification(), ErrorCode::UnsupportedCombination,
          "the continual benchmark is classification-based");
  const auto base = io::read_dataset_csv(data).to_batch(true);
  const auto stream =
      continual::permuted_tasks(base, tasks, io::sub_seed(cfg.seed, "tasks"));

  continual::ConsolidateConfig run_cfg;
  run_cfg.opt.lr = cfg.lr;
  run_cfg.opt.momentum = cfg.momentum;
  run_cfg.opt.steps = cfg.steps;
  run_cfg.opt.seed = io::sub_seed(cfg.seed, "init");
  run_cfg.tune_gamma = tune_gamma;

  const auto structure = make_structure(cfg);
  require(structure.kind == curvature::Structure::Kind::Diagonal ||
              structure.kind == curvature::Structure::Kind::Kfac,
          ErrorCode::UnsupportedCombination,
          "continual accumulation supports diag and kfac structures");

  auto run_stream = [&](bool penalized) {
    auto running = continual::make_running(spec, structure,
                                           io::parse_kind(cfg.kind),
                                           cfg.prior_precision);
    continual::ConsolidateConfig c = run_cfg;
    c.use_penalty = penalized;
    std::vector<continual::RunningPosterior> runnings;
    for (const auto& task : stream) {
      running = continual::consolidate(spec, running, task, lik, c);
      runnings.push_back(running);
    }
    return runnings;
  };

  const auto la_runnings = run_stream(true);
  const auto control_runnings = run_stream(false);
  const Matrix la_acc = continual::evaluate_stream(spec, la_runnings, stream);
  const Matrix control_acc =
      continual::evaluate_stream(spec, control_runnings, stream);

  auto mean_final = [&](const Matrix& acc) {
    return acc.row(acc.rows() - 1).sum() / static_cast<Real>(acc.cols());
  };

  Json j;
  j["tasks"] = tasks;
  j["structure"] = cfg.structure;
  j["accuracy_matrix"] = matrix_to_json_with_nan(la_acc);
  j["control_matrix"] = matrix_to_json_with_nan(control_acc);
  j["mean_final_accuracy"] = mean_final(la_acc);
  j["control_mean_final_accuracy"] = mean_final(control_acc);
  Json lambdas = Json::array();
  for (const auto& r : la_runnings) lambdas.push_back(r.lambda);
  j["lambda_per_task"] = std::move(lambdas);
  io::save_json_file(out, j);
  return 0;
}

int run_marglik(const CliConfig& cfg, const std::string& mode,
                const std::string& model, const std::string& data,
                Real init_lambda, Index opt_steps, Real opt_lr,
                const std::string& out, const std::string& out_model) {
  const auto lik = make_likelihood(cfg);
  Json j;
  if (mode == "posthoc") {
    require(!model.empty(), ErrorCode::MissingData,
            "post-hoc marglik needs --model");
    const auto [spec, theta] = io::checkpoint_from_json(io::load_json_file(model));
    const auto batch = io::read_dataset_csv(data).to_batch(lik.is_classification());
    const auto result = tuning::optimize_marglik(
        spec, theta, batch, lik, io::parse_kind(cfg.kind), make_structure(cfg),
        make_subset(cfg), init_lambda, opt_steps, opt_lr,
        io::parse_prior_mode(cfg.kfac_prior_mode));
    j["mode"] = "posthoc";
    j["lambda"] = result.lambda;
    j["log_evidence"] = result.log_evidence;
    Json trajectory = Json::array();
    for (const auto& [lam, logz] : result.trajectory) {
      Json point;
      point["lambda"] = lam;
      point["log_evidence"] = logz;
      trajectory.push_back(std::move(point));
    }
    j["trajectory"] = std::move(trajectory);
  } else if (mode == "online") {
    const auto spec = make_spec(cfg);
    const auto batch = io::read_dataset_csv(data).to_batch(lik.is_classification());
    tuning::OnlineConfig online;
    online.map_lr = cfg.lr;
    online.map_steps = cfg.steps;
    online.hyper_lr = opt_lr;
    online.hyper_steps = opt_steps;
    online.frequency = std::max<Index>(1, cfg.steps / 10);
    online.seed = io::sub_seed(cfg.seed, "init");
    online.init_lambda = init_lambda;
    const auto result = tuning::online_laplace_train(
        spec, batch, lik, online, io::parse_kind(cfg.kind), make_structure(cfg));
    j["mode"] = "online";
    j["lambda"] = result.lambda;
    Json events = Json::array();
    for (const auto& e : result.events) {
      Json point;
      point["step"] = e.step;
      point["lambda"] = e.lambda;
      point["log_evidence"] = e.log_evidence;
      events.push_back(std::move(point));
    }
    j["events"] = std::move(events);
    if (!out_model.empty())
      io::save_json_file(out_model, io::checkpoint_to_json(spec, result.theta));
  } else {
    fail(ErrorCode::InvalidInput, "unknown marglik mode: " + mode);
  }
  io::save_json_file(out, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplace approximations for small MLPs: curvature, evidence, "
               "calibrated predictions, continual learning"};
  app.require_subcommand(1);

  CliConfig cfg;
  std::string config_path;
  bool deterministic = false;

  if (const char* env = std::getenv("LAPLACE_KIT_SEED"))
    cfg.seed = std::strtoull(env, nullptr, 10);

  auto add_base = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "JSON config; values in the file override flags");
    sub->add_option("--seed", cfg.seed, "master seed (env LAPLACE_KIT_SEED)");
    sub->add_flag("--deterministic", deterministic,
                  "serial accumulation (always on; accepted for compatibility)");
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--dims", cfg.dims, "layer dims, e.g. 2,32,2")
        ->delimiter(',');
    sub->add_option("--activation", cfg.activation, "relu|tanh|identity");
  };
  auto add_likelihood = [&](CLI::App* sub) {
    sub->add_option("--likelihood", cfg.likelihood, "categorical|regression");
    sub->add_option("--sigma-noise", cfg.sigma_noise, "regression noise std");
  };
  auto add_prior = [&](CLI::App* sub) {
    sub->add_option("--prior-precision", cfg.prior_precision, "scalar prior");
  };
  auto add_curvature = [&](CLI::App* sub) {
    sub->add_option("--kind", cfg.kind, "ggn|fisher|ef");
    sub->add_option("--structure", cfg.structure, "full|diag|kfac|lowrank");
    sub->add_option("--rank", cfg.rank, "low-rank k");
    sub->add_option("--subset", cfg.subset, "all|last_layer");
    sub->add_option("--kfac-prior-mode", cfg.kfac_prior_mode,
                    "exact_eigen|sqrt_split");
  };
  auto add_predictive = [&](CLI::App* sub) {
    sub->add_option("--pred-type", cfg.pred_type, "glm|mc|map");
    sub->add_option("--link", cfg.link, "probit|bridge|delta|mc|exact");
    sub->add_option("--samples", cfg.samples, "MC samples");
  };
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--lr", cfg.lr, "learning rate");
    sub->add_option("--momentum", cfg.momentum, "momentum");
    sub->add_option("--steps", cfg.steps, "training steps");
  };
  auto add_tuning = [&](CLI::App* sub) {
    sub->add_option("--objective", cfg.objective, "marglik|val_nll|val_nll_ood");
    sub->add_option("--lambda-ood", cfg.lambda_ood, "OOD entropy weight");
    sub->add_option("--grid-min", cfg.grid_min, "lambda grid minimum");
    sub->add_option("--grid-max", cfg.grid_max, "lambda grid maximum");
    sub->add_option("--grid-points", cfg.grid_points, "lambda grid size");
    sub->add_option("--sigma-grid", cfg.sigma_grid, "observation noise grid")
        ->delimiter(',');
  };

  // generate
  auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
  std::string gen_kind = "clusters", gen_out;
  Index gen_n = 200, gen_classes = 2;
  Real gen_noise = 0.35;
  add_base(generate);
  generate->add_option("--kind", gen_kind, "clusters|sinusoid");
  generate->add_option("--n", gen_n, "number of rows");
  generate->add_option("--noise", gen_noise, "noise scale");
  generate->add_option("--classes", gen_classes, "cluster count");
  generate->add_option("--out", gen_out, "output CSV")->required();

  // train
  auto* train = app.add_subcommand("train", "MAP-train an MLP");
  std::string train_data, train_out;
  add_base(train);
  add_model(train);
  add_likelihood(train);
  add_prior(train);
  add_train(train);
  train->add_option("--data", train_data, "training CSV")->required();
  train->add_option("--out", train_out, "checkpoint JSON")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "fit a Laplace posterior post-hoc");
  std::string fit_model, fit_data, fit_out;
  add_base(fit);
  add_likelihood(fit);
  add_prior(fit);
  add_curvature(fit);
  fit->add_option("--model", fit_model, "checkpoint JSON")->required();
  fit->add_option("--data", fit_data, "training CSV")->required();
  fit->add_option("--out", fit_out, "posterior JSON")->required();

  // tune
  auto* tune = app.add_subcommand("tune", "grid-tune hyperparameters");
  std::string tune_model, tune_data, tune_val, tune_ood, tune_out;
  add_base(tune);
  add_likelihood(tune);
  add_curvature(tune);
  add_tuning(tune);
  tune->add_option("--model", tune_model, "checkpoint JSON")->required();
  tune->add_option("--data", tune_data, "training CSV")->required();
  tune->add_option("--val", tune_val, "validation CSV");
  tune->add_option("--ood", tune_ood, "OOD CSV");
  tune->add_option("--out", tune_out, "posterior JSON")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "predictive distribution");
  std::string pred_post, pred_data, pred_out;
  add_base(predict);
  add_likelihood(predict);
  add_predictive(predict);
  predict->add_option("--posterior", pred_post, "posterior JSON")->required();
  predict->add_option("--data", pred_data, "input CSV")->required();
  predict->add_option("--out", pred_out, "predictions JSON")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "metrics on a dataset");
  std::string eval_post, eval_data, eval_ood, eval_out;
  add_base(evaluate);
  add_likelihood(evaluate);
  add_predictive(evaluate);
  evaluate->add_option("--posterior", eval_post, "posterior JSON")->required();
  evaluate->add_option("--data", eval_data, "evaluation CSV")->required();
  evaluate->add_option("--ood", eval_ood, "OOD CSV for AUROC");
  evaluate->add_option("--out", eval_out, "metrics JSON")->required();

  // shift-eval
  auto* shift = app.add_subcommand("shift-eval", "rotation shift sweep");
  std::string shift_post, shift_data, shift_out;
  std::vector<Real> shift_angles = {0, 30, 60, 90, 120, 150, 180};
  add_base(shift);
  add_likelihood(shift);
  add_predictive(shift);
  shift->add_option("--posterior", shift_post, "posterior JSON")->required();
  shift->add_option("--data", shift_data, "clean CSV")->required();
  shift->add_option("--angles", shift_angles, "rotation degrees")->delimiter(',');
  shift->add_option("--out", shift_out, "sweep CSV")->required();

  // continual
  auto* cont = app.add_subcommand("continual", "permuted-feature task stream");
  std::string cont_data, cont_out;
  Index cont_tasks = 5;
  bool cont_tune_gamma = false;
  add_base(cont);
  add_model(cont);
  add_likelihood(cont);
  add_prior(cont);
  add_curvature(cont);
  add_train(cont);
  cont->add_option("--data", cont_data, "base CSV")->required();
  cont->add_option("--tasks", cont_tasks, "number of tasks");
  cont->add_flag("--tune-gamma", cont_tune_gamma, "retune lambda per task");
  cont->add_option("--out", cont_out, "result JSON")->required();

  // marglik
  auto* marglik = app.add_subcommand("marglik", "evidence optimization");
  std::string ml_mode = "posthoc", ml_model, ml_data, ml_out, ml_out_model;
  Real ml_init_lambda = 1.0, ml_lr = 0.2;
  Index ml_steps = 50;
  add_base(marglik);
  add_model(marglik);
  add_likelihood(marglik);
  add_curvature(marglik);
  add_train(marglik);
  marglik->add_option("--mode", ml_mode, "posthoc|online");
  marglik->add_option("--model", ml_model, "checkpoint JSON (posthoc)");
  marglik->add_option("--data", ml_data, "training CSV")->required();
  marglik->add_option("--init-lambda", ml_init_lambda, "starting precision");
  marglik->add_option("--opt-steps", ml_steps, "ascent steps");
  marglik->add_option("--opt-lr", ml_lr, "ascent rate in log lambda");
  marglik->add_option("--out", ml_out, "report JSON")->required();
  marglik->add_option("--out-model", ml_out_model, "checkpoint JSON (online)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!config_path.empty()) overlay_config(config_path, cfg);

    if (generate->parsed())
      return run_generate(cfg, gen_kind, gen_n, gen_noise, gen_classes, gen_out);
    if (train->parsed()) return run_train(cfg, train_data, train_out);
    if (fit->parsed()) return run_fit(cfg, fit_model, fit_data, fit_out);
    if (tune->parsed())
      return run_tune(cfg, tune_model, tune_data, tune_val, tune_ood, tune_out);
    if (predict->parsed()) return run_predict(cfg, pred_post, pred_data, pred_out);
    if (evaluate->parsed())
      return run_evaluate(cfg, eval_post, eval_data, eval_ood, eval_out);
    if (shift->parsed())
      return run_shift_eval(cfg, shift_post, shift_data, shift_angles, shift_out);
    if (cont->parsed())
      return run_continual(cfg, cont_data, cont_tasks, cont_tune_gamma, cont_out);
    if (marglik->parsed())
      return run_marglik(cfg, ml_mode, ml_model, ml_data, ml_init_lambda,
                         ml_steps, ml_lr, ml_out, ml_out_model);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numeric() ? 3 : 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
