#pragma once

#include "lapkit/types.hpp"

#include <cstdint>
#include <vector>

namespace lapkit::nn {

enum class Activation { ReLU, Tanh, Identity };

/// Parameter block of one fully connected layer within the flat vector.
/// Layout per layer: W row-major (out x in), then the bias.
struct LayerShape {
  Index in = 0;
  Index out = 0;
  Index weight_offset = 0;
  Index bias_offset = 0;  // == weight_offset + in*out
  bool has_bias = true;

  Index weight_count() const { return in * out; }
  Index param_count() const { return weight_count() + (has_bias ? out : 0); }
  Index begin() const { return weight_offset; }
  Index end() const { return weight_offset + param_count(); }
};

/// Fully connected feed-forward network shape: dims [M, h1, ..., C].
struct MlpSpec {
  std::vector<Index> layer_dims;
  Activation hidden_activation = Activation::Tanh;
  bool uses_bias = true;

  MlpSpec() = default;
  MlpSpec(std::vector<Index> dims, Activation act = Activation::Tanh,
          bool bias = true);

  Index num_layers() const { return static_cast<Index>(layer_dims.size()) - 1; }
  Index input_dim() const { return layer_dims.front(); }
  Index output_dim() const { return layer_dims.back(); }
  Index param_count() const;
  LayerShape layer(Index l) const;
};

struct Likelihood {
  enum class Kind { Categorical, GaussianRegression };

  Kind kind = Kind::Categorical;
  Real sigma_noise = 1.0;  // observation noise std dev (regression only)

  static Likelihood categorical() { return {Kind::Categorical, 1.0}; }
  static Likelihood regression(Real sigma) {
    require(sigma > 0.0, ErrorCode::InvalidInput, "sigma_noise must be > 0");
    return {Kind::GaussianRegression, sigma};
  }
  bool is_classification() const { return kind == Kind::Categorical; }
};

/// Zero-mean Gaussian prior, either one precision for all weights or one
/// per layer (biases share their layer's precision).
struct PriorSpec {
  enum class Kind { Scalar, PerLayer };

  Kind kind = Kind::Scalar;
  Real precision = 1.0;
  std::vector<Real> layer_precisions;

  static PriorSpec scalar(Real lambda) {
    require(lambda > 0.0, ErrorCode::InvalidPrior, "prior precision must be > 0");
    PriorSpec p;
    p.kind = Kind::Scalar;
    p.precision = lambda;
    return p;
  }
  static PriorSpec per_layer(std::vector<Real> lambdas) {
    for (Real l : lambdas)
      require(l > 0.0, ErrorCode::InvalidPrior, "prior precision must be > 0");
    PriorSpec p;
    p.kind = Kind::PerLayer;
    p.layer_precisions = std::move(lambdas);
    return p;
  }

  Real precision_for_layer(Index l) const {
    if (kind == Kind::Scalar) return precision;
    require(l >= 0 && l < static_cast<Index>(layer_precisions.size()),
            ErrorCode::InvalidPrior, "per-layer prior has wrong length");
    return layer_precisions[static_cast<std::size_t>(l)];
  }
};

/// Supervised batch. Classification targets live in `labels`, regression
/// targets in `targets` (N x C).
struct Batch {
  Matrix inputs;  // N x M
  std::vector<Index> labels;
  Matrix targets;

  Index size() const { return inputs.rows(); }
  bool empty() const { return inputs.rows() == 0; }
};

struct ForwardTrace {
  std::vector<Vector> activations;     // a^(0..L-1); a^(0) is the input
  std::vector<Vector> preactivations;  // s^(1..L); s^(L) is the output

  const Vector& output() const { return preactivations.back(); }
};

/// Full-batch gradient descent settings for MAP training.
struct TrainConfig {
  Real lr = 0.05;
  Real momentum = 0.9;
  Index steps = 1000;
  std::uint64_t seed = 0;
};

/// Activation-and-gradient pair for one layer's Kronecker statistics:
/// `a` is the (bias-augmented) layer input, `g` the preactivation gradient
/// of the negative log-likelihood.
struct LayerStats {
  Vector a;
  Vector g;
};

/// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, drawn layer by
/// layer, weights row-major then bias.
Vector init_params(const MlpSpec& spec, std::uint64_t seed);

ForwardTrace forward(const MlpSpec& spec, const Vector& theta, const Vector& x);

/// Negative log-likelihood of one output/target pair, all constants included.
Real nll(const Likelihood& lik, const Vector& f, Index label, const Vector& target);

/// d nll / d f for one output/target pair.
Vector nll_grad(const Likelihood& lik, const Vector& f, Index label,
                const Vector& target);

/// Sum of per-datum negative log-likelihoods over a batch.
Real data_nll(const MlpSpec& spec, const Vector& theta, const Batch& batch,
              const Likelihood& lik);

/// L(D; theta) = -log p(D|theta) - log p(theta), every normalizing constant
/// included so that exp(-L) is the unnormalized posterior.
Real neg_log_joint(const MlpSpec& spec, const Vector& theta, const Batch& batch,
                   const Likelihood& lik, const PriorSpec& prior);

Vector grad_neg_log_joint(const MlpSpec& spec, const Vector& theta,
                          const Batch& batch, const Likelihood& lik,
                          const PriorSpec& prior);

/// Full-batch gradient descent with classical momentum; returns the iterate
/// with the lowest observed neg_log_joint. Deterministic given cfg.seed.
Vector train_map(const MlpSpec& spec, const Batch& batch, const Likelihood& lik,
                 const PriorSpec& prior, const TrainConfig& cfg);

/// D x C Jacobian of the network output w.r.t. the parameters.
Matrix jacobian(const MlpSpec& spec, const Vector& theta, const Vector& x);

/// C x C negative Hessian of the log-likelihood w.r.t. the output:
/// diag(p) - p p^T for categorical, I/sigma^2 for regression. Always PSD.
Matrix output_hessian(const Likelihood& lik, const Vector& f);

/// Symmetric PSD square root M with M M^T = output_hessian.
Matrix output_hessian_sqrt(const Likelihood& lik, const Vector& f);

/// Per-layer (a^(l-1), g^(l)) pairs whose outer products reassemble the
/// exact per-sample gradient of the negative log-likelihood.
std::vector<LayerStats> backprop_stats(const MlpSpec& spec, const Vector& theta,
                                       const Vector& x, Index label,
                                       const Vector& target,
                                       const Likelihood& lik);

/// Per-layer preactivation gradients for K output-side directions: given
/// V (C x K), deltas[l] (out_l x K) holds in column k the gradient of
/// v_k . f w.r.t. the layer-l preactivation.
std::vector<Matrix> backprop_directions(const MlpSpec& spec, const Vector& theta,
                                        const ForwardTrace& trace,
                                        const Matrix& directions);

/// Scatters layer deltas into parameter-space gradient columns (D x K).
Matrix param_gradients(const MlpSpec& spec, const ForwardTrace& trace,
                       const std::vector<Matrix>& deltas);

}  // namespace lapkit::nn
