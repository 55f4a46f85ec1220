#include "lapkit/nn.hpp"

#include "lapkit/linalg.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace lapkit::nn {

namespace {

using RowMajorMap = Eigen::Map<
    const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Row-major view of a layer's weight block within the flat parameter vector.
RowMajorMap weight_view(const Vector& theta, const LayerShape& shape) {
  return RowMajorMap(theta.data() + shape.weight_offset, shape.out, shape.in);
}

Real activate(Activation act, Real s) {
  switch (act) {
    case Activation::ReLU:
      return s > 0.0 ? s : 0.0;
    case Activation::Tanh:
      return std::tanh(s);
    case Activation::Identity:
      return s;
  }
  return s;
}

// ReLU subgradient at 0 is fixed to 0.
Real activate_grad(Activation act, Real s) {
  switch (act) {
    case Activation::ReLU:
      return s > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const Real t = std::tanh(s);
      return 1.0 - t * t;
    }
    case Activation::Identity:
      return 1.0;
  }
  return 1.0;
}

Vector softmax(const Vector& f) {
  const Vector shifted = f.array() - f.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

Real log_sum_exp(const Vector& f) {
  const Real m = f.maxCoeff();
  return m + std::log((f.array() - m).exp().sum());
}

void check_batch(const MlpSpec& spec, const Batch& batch, const Likelihood& lik) {
  if (batch.empty()) return;
  require(batch.inputs.cols() == spec.input_dim(), ErrorCode::InvalidInput,
          "batch input width does not match the network input dim");
  if (lik.is_classification()) {
    require(static_cast<Index>(batch.labels.size()) == batch.size(),
            ErrorCode::InvalidInput, "label count does not match batch size");
    for (Index y : batch.labels)
      require(y >= 0 && y < spec.output_dim(), ErrorCode::InvalidInput,
              "class label out of range");
  } else {
    require(batch.targets.rows() == batch.size() &&
                batch.targets.cols() == spec.output_dim(),
            ErrorCode::InvalidInput, "target shape does not match batch/output");
  }
}

Index label_of(const Batch& batch, Index n, const Likelihood& lik) {
  return lik.is_classification() ? batch.labels[static_cast<std::size_t>(n)] : -1;
}

Vector target_of(const Batch& batch, Index n, const Likelihood& lik) {
  return lik.is_classification() ? Vector() : Vector(batch.targets.row(n));
}

}  // namespace

MlpSpec::MlpSpec(std::vector<Index> dims, Activation act, bool bias)
    : layer_dims(std::move(dims)), hidden_activation(act), uses_bias(bias) {
  require(layer_dims.size() >= 2, ErrorCode::InvalidInput,
          "an MLP needs at least input and output dims");
  for (Index d : layer_dims)
    require(d >= 1, ErrorCode::InvalidInput, "layer dims must be >= 1");
}

Index MlpSpec::param_count() const {
  Index total = 0;
  for (Index l = 0; l < num_layers(); ++l) total += layer(l).param_count();
  return total;
}

LayerShape MlpSpec::layer(Index l) const {
  require(l >= 0 && l < num_layers(), ErrorCode::InvalidInput,
          "layer index out of range");
  LayerShape shape;
  Index offset = 0;
  for (Index k = 0; k <= l; ++k) {
    shape.in = layer_dims[static_cast<std::size_t>(k)];
    shape.out = layer_dims[static_cast<std::size_t>(k) + 1];
    shape.has_bias = uses_bias;
    shape.weight_offset = offset;
    shape.bias_offset = offset + shape.weight_count();
    offset += shape.param_count();
  }
  return shape;
}

Vector init_params(const MlpSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector theta(spec.param_count());
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    const Real k = 1.0 / std::sqrt(static_cast<Real>(shape.in));
    std::uniform_real_distribution<Real> uniform(-k, k);
    for (Index i = shape.begin(); i < shape.end(); ++i) theta[i] = uniform(rng);
  }
  return theta;
}

ForwardTrace forward(const MlpSpec& spec, const Vector& theta, const Vector& x) {
  require(theta.size() == spec.param_count(), ErrorCode::InvalidInput,
          "parameter vector has wrong length");
  require(x.size() == spec.input_dim(), ErrorCode::InvalidInput,
          "input has wrong length");

  ForwardTrace trace;
  trace.activations.push_back(x);
  Vector a = x;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    Vector s = weight_view(theta, shape) * a;
    if (shape.has_bias) s += theta.segment(shape.bias_offset, shape.out);
    trace.preactivations.push_back(s);
    if (l + 1 < spec.num_layers()) {
      a = s.unaryExpr([&](Real v) { return activate(spec.hidden_activation, v); });
      trace.activations.push_back(a);
    }
  }
  return trace;
}

Real nll(const Likelihood& lik, const Vector& f, Index label, const Vector& target) {
  if (lik.is_classification()) {
    return log_sum_exp(f) - f[label];
  }
  const Real sigma2 = lik.sigma_noise * lik.sigma_noise;
  const Real c = static_cast<Real>(f.size());
  return 0.5 * (target - f).squaredNorm() / sigma2 +
         0.5 * c * (kLog2Pi + std::log(sigma2));
}

Vector nll_grad(const Likelihood& lik, const Vector& f, Index label,
                const Vector& target) {
  if (lik.is_classification()) {
    Vector g = softmax(f);
    g[label] -= 1.0;
    return g;
  }
  return (f - target) / (lik.sigma_noise * lik.sigma_noise);
}

Real data_nll(const MlpSpec& spec, const Vector& theta, const Batch& batch,
              const Likelihood& lik) {
  check_batch(spec, batch, lik);
  Real total = 0.0;
  for (Index n = 0; n < batch.size(); ++n) {
    const ForwardTrace trace = forward(spec, theta, batch.inputs.row(n));
    total += nll(lik, trace.output(), label_of(batch, n, lik),
                 target_of(batch, n, lik));
  }
  return total;
}

Real neg_log_joint(const MlpSpec& spec, const Vector& theta, const Batch& batch,
                   const Likelihood& lik, const PriorSpec& prior) {
  const Real like = data_nll(spec, theta, batch, lik);

  // The prior log-normalizer accumulates log(lambda_d) one dimension at a
  // time; the posterior log-determinant uses the same accumulation so the
  // empty-data evidence cancels exactly.
  Real quad = 0.0;
  Real prior_logdet = 0.0;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    const Real lambda = prior.precision_for_layer(l);
    const Real log_lambda = std::log(lambda);
    for (Index i = shape.begin(); i < shape.end(); ++i) {
      quad += lambda * theta[i] * theta[i];
      prior_logdet += log_lambda;
    }
  }
  const Real d = static_cast<Real>(spec.param_count());
  const Real prior_const = 0.5 * d * kLog2Pi - 0.5 * prior_logdet;
  return like + 0.5 * quad + prior_const;
}

std::vector<Matrix> backprop_directions(const MlpSpec& spec, const Vector& theta,
                                        const ForwardTrace& trace,
                                        const Matrix& directions) {
  const Index num_layers = spec.num_layers();
  require(directions.rows() == spec.output_dim(), ErrorCode::InvalidInput,
          "direction rows must match the output dim");

  std::vector<Matrix> deltas(static_cast<std::size_t>(num_layers));
  Matrix delta = directions;
  deltas[static_cast<std::size_t>(num_layers - 1)] = delta;
  for (Index l = num_layers - 1; l > 0; --l) {
    const LayerShape shape = spec.layer(l);
    Matrix back = weight_view(theta, shape).transpose() * delta;
    const Vector& s = trace.preactivations[static_cast<std::size_t>(l - 1)];
    for (Index i = 0; i < back.rows(); ++i)
      back.row(i) *= activate_grad(spec.hidden_activation, s[i]);
    delta = back;
    deltas[static_cast<std::size_t>(l - 1)] = delta;
  }
  return deltas;
}

Matrix param_gradients(const MlpSpec& spec, const ForwardTrace& trace,
                       const std::vector<Matrix>& deltas) {
  const Index k = deltas.empty() ? 0 : deltas.front().cols();
  Matrix grads = Matrix::Zero(spec.param_count(), k);
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    const Matrix& delta = deltas[static_cast<std::size_t>(l)];
    const Vector& a = trace.activations[static_cast<std::size_t>(l)];
    for (Index i = 0; i < shape.out; ++i)
      for (Index j = 0; j < shape.in; ++j)
        grads.row(shape.weight_offset + i * shape.in + j) = delta.row(i) * a[j];
    if (shape.has_bias)
      grads.middleRows(shape.bias_offset, shape.out) = delta;
  }
  return grads;
}

Vector grad_neg_log_joint(const MlpSpec& spec, const Vector& theta,
                          const Batch& batch, const Likelihood& lik,
                          const PriorSpec& prior) {
  check_batch(spec, batch, lik);
  Vector grad = Vector::Zero(spec.param_count());
  for (Index n = 0; n < batch.size(); ++n) {
    const ForwardTrace trace = forward(spec, theta, batch.inputs.row(n));
    const Vector g = nll_grad(lik, trace.output(), label_of(batch, n, lik),
                              target_of(batch, n, lik));
    const auto deltas = backprop_directions(spec, theta, trace, g);
    grad += param_gradients(spec, trace, deltas).col(0);
  }
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    const Real lambda = prior.precision_for_layer(l);
    grad.segment(shape.begin(), shape.param_count()) +=
        lambda * theta.segment(shape.begin(), shape.param_count());
  }
  return grad;
}

Vector train_map(const MlpSpec& spec, const Batch& batch, const Likelihood& lik,
                 const PriorSpec& prior, const TrainConfig& cfg) {
  require(cfg.steps >= 0, ErrorCode::InvalidInput, "steps must be >= 0");
  Vector theta = init_params(spec, cfg.seed);
  Vector velocity = Vector::Zero(theta.size());

  Real best_loss = neg_log_joint(spec, theta, batch, lik, prior);
  require(std::isfinite(best_loss), ErrorCode::TrainingDiverged,
          "non-finite loss at initialization");
  Vector best = theta;

  for (Index step = 0; step < cfg.steps; ++step) {
    const Vector grad = grad_neg_log_joint(spec, theta, batch, lik, prior);
    velocity = cfg.momentum * velocity - cfg.lr * grad;
    theta += velocity;
    const Real loss = neg_log_joint(spec, theta, batch, lik, prior);
    require(std::isfinite(loss), ErrorCode::TrainingDiverged,
            "training diverged to a non-finite loss");
    if (loss < best_loss) {
      best_loss = loss;
      best = theta;
    }
  }
  return best;
}

Matrix jacobian(const MlpSpec& spec, const Vector& theta, const Vector& x) {
  const ForwardTrace trace = forward(spec, theta, x);
  const Matrix identity = Matrix::Identity(spec.output_dim(), spec.output_dim());
  return param_gradients(spec, trace,
                         backprop_directions(spec, theta, trace, identity));
}

Matrix output_hessian(const Likelihood& lik, const Vector& f) {
  require(f.allFinite(), ErrorCode::InvalidInput, "output must be finite");
  if (lik.is_classification()) {
    const Vector p = softmax(f);
    return Matrix(p.asDiagonal()) - p * p.transpose();
  }
  const Real sigma2 = lik.sigma_noise * lik.sigma_noise;
  return Matrix::Identity(f.size(), f.size()) / sigma2;
}

Matrix output_hessian_sqrt(const Likelihood& lik, const Vector& f) {
  if (!lik.is_classification()) {
    return Matrix::Identity(f.size(), f.size()) / lik.sigma_noise;
  }
  const auto eig = linalg::sym_eig(output_hessian(lik, f));
  const Vector clamped = eig.eigenvalues.cwiseMax(0.0);
  return eig.eigenvectors * clamped.cwiseSqrt().asDiagonal() *
         eig.eigenvectors.transpose();
}

std::vector<LayerStats> backprop_stats(const MlpSpec& spec, const Vector& theta,
                                       const Vector& x, Index label,
                                       const Vector& target,
                                       const Likelihood& lik) {
  const ForwardTrace trace = forward(spec, theta, x);
  const Vector g = nll_grad(lik, trace.output(), label, target);
  const auto deltas = backprop_directions(spec, theta, trace, g);

  std::vector<LayerStats> stats;
  stats.reserve(static_cast<std::size_t>(spec.num_layers()));
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const LayerShape shape = spec.layer(l);
    const Vector& a = trace.activations[static_cast<std::size_t>(l)];
    Vector a_aug(shape.in + (shape.has_bias ? 1 : 0));
    a_aug.head(shape.in) = a;
    if (shape.has_bias) a_aug[shape.in] = 1.0;
    stats.push_back({a_aug, deltas[static_cast<std::size_t>(l)].col(0)});
  }
  return stats;
}

}  // namespace lapkit::nn
