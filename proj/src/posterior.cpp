#include "lapkit/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lapkit::posterior {

namespace {

using curvature::CurvatureEstimate;
using curvature::KfacLayerBlock;
using curvature::Structure;
using curvature::SubsetSpec;

Index layer_of(const std::vector<nn::LayerShape>& layers, Index param_index) {
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (param_index >= layers[l].begin() && param_index < layers[l].end())
      return static_cast<Index>(l);
  fail(ErrorCode::InvalidPrior, "parameter index outside every layer");
}

Vector build_prior_diag(const CurvatureEstimate& curv, const nn::PriorSpec& prior) {
  const Index ds = curv.dim();
  Vector diag(ds);
  if (prior.kind == nn::PriorSpec::Kind::Scalar) {
    diag.setConstant(prior.precision);
    return diag;
  }
  require(!curv.layers.empty(), ErrorCode::InvalidPrior,
          "per-layer prior needs layer shapes on the curvature estimate");
  for (Index i = 0; i < ds; ++i) {
    const Index l = layer_of(curv.layers, curv.param_indices[static_cast<std::size_t>(i)]);
    diag[i] = prior.precision_for_layer(l);
  }
  return diag;
}

Real block_lambda(const LaplacePosterior& post, const KfacLayerBlock& block) {
  return post.prior.precision_for_layer(block.layer);
}

// Scatters a subset-order vector onto a full-length theta copy.
Vector scatter(const LaplacePosterior& post, const Vector& subset_values) {
  Vector theta = post.theta_map;
  for (Index i = 0; i < subset_values.size(); ++i)
    theta[post.curvature.param_indices[static_cast<std::size_t>(i)]] +=
        subset_values[i];
  return theta;
}

Matrix normal_matrix(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<Real> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

}  // namespace

LaplacePosterior fit(const Vector& theta_map, const CurvatureEstimate& curv,
                     const nn::PriorSpec& prior, KfacPriorMode mode) {
  if (prior.kind == nn::PriorSpec::Kind::PerLayer) {
    require(curv.subset.kind != SubsetSpec::Kind::Subnetwork,
            ErrorCode::InvalidPrior,
            "per-layer priors support only the All and LastLayer subsets");
    require(curv.structure.kind != Structure::Kind::LowRank,
            ErrorCode::UnsupportedCombination,
            "per-layer priors are not supported with low-rank structure");
  }
  for (Index i : curv.param_indices)
    require(i >= 0 && i < theta_map.size(), ErrorCode::InvalidInput,
            "subset index outside theta");

  LaplacePosterior post;
  post.theta_map = theta_map;
  post.prior = prior;
  post.curvature = curv;
  post.kfac_prior_mode = mode;
  post.prior_diag = build_prior_diag(curv, prior);

  switch (curv.structure.kind) {
    case Structure::Kind::Full:
      if (prior.kind == nn::PriorSpec::Kind::PerLayer) {
        Matrix shifted = curv.full;
        shifted.diagonal() += post.prior_diag;
        post.full_eig = linalg::sym_eig(shifted);
        post.prior_folded = true;
      } else {
        post.full_eig = linalg::sym_eig(curv.full);
      }
      break;
    case Structure::Kind::Kfac:
      for (const auto& block : curv.kfac) {
        const auto ea = linalg::sym_eig(block.a_factor);
        const auto eg = linalg::sym_eig(block.g_factor);
        post.kfac_eig.push_back(
            {ea.eigenvectors, ea.eigenvalues, eg.eigenvectors, eg.eigenvalues});
      }
      break;
    case Structure::Kind::Diagonal:
    case Structure::Kind::LowRank:
      break;  // the payload is its own cache
  }
  return post;
}

LaplacePosterior with_prior_precision(const LaplacePosterior& post, Real lambda) {
  require(post.prior.kind == nn::PriorSpec::Kind::Scalar && !post.prior_folded,
          ErrorCode::InvalidPrior,
          "prior swap requires a scalar, unfolded prior");
  LaplacePosterior out = post;
  out.prior = nn::PriorSpec::scalar(lambda);
  out.prior_diag.setConstant(lambda);
  return out;
}

Real logdet_precision(const LaplacePosterior& post) {
  const auto& curv = post.curvature;
  Real acc = 0.0;
  switch (curv.structure.kind) {
    case Structure::Kind::Full: {
      if (post.prior_folded) {
        for (Index i = 0; i < post.full_eig.eigenvalues.size(); ++i)
          acc += std::log(post.full_eig.eigenvalues[i]);
      } else {
        const Real lambda = post.scalar_precision();
        for (Index i = 0; i < post.full_eig.eigenvalues.size(); ++i)
          acc += std::log(post.full_eig.eigenvalues[i] + lambda);
      }
      return acc;
    }
    case Structure::Kind::Diagonal: {
      for (Index i = 0; i < curv.diagonal.size(); ++i)
        acc += std::log(curv.diagonal[i] + post.prior_diag[i]);
      return acc;
    }
    case Structure::Kind::LowRank: {
      const Real lambda = post.scalar_precision();
      const Index k = curv.lr_eigenvalues.size();
      for (Index i = 0; i < k; ++i)
        acc += std::log(curv.lr_eigenvalues[i] + lambda);
      for (Index i = k; i < curv.dim(); ++i) acc += std::log(lambda);
      return acc;
    }
    case Structure::Kind::Kfac: {
      for (std::size_t b = 0; b < curv.kfac.size(); ++b) {
        const auto& cache = post.kfac_eig[b];
        const Real lambda = block_lambda(post, curv.kfac[b]);
        if (post.kfac_prior_mode == KfacPriorMode::ExactEigen) {
          for (Index j = 0; j < cache.ea.size(); ++j)
            for (Index i = 0; i < cache.eg.size(); ++i)
              acc += std::log(cache.ea[j] * cache.eg[i] + lambda);
        } else {
          const Real root = std::sqrt(lambda);
          Real logdet_a = 0.0, logdet_g = 0.0;
          for (Index j = 0; j < cache.ea.size(); ++j)
            logdet_a += std::log(cache.ea[j] + root);
          for (Index i = 0; i < cache.eg.size(); ++i)
            logdet_g += std::log(cache.eg[i] + root);
          acc += static_cast<Real>(cache.eg.size()) * logdet_a +
                 static_cast<Real>(cache.ea.size()) * logdet_g;
        }
      }
      return acc;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

Vector curvature_eigenvalues(const LaplacePosterior& post) {
  require(post.prior.kind == nn::PriorSpec::Kind::Scalar && !post.prior_folded,
          ErrorCode::UnsupportedMode,
          "curvature eigenvalues need a scalar, unfolded prior");
  const auto& curv = post.curvature;
  switch (curv.structure.kind) {
    case Structure::Kind::Full:
      return post.full_eig.eigenvalues;
    case Structure::Kind::Diagonal:
      return curv.diagonal;
    case Structure::Kind::LowRank: {
      Vector out = Vector::Zero(curv.dim());
      out.head(curv.lr_eigenvalues.size()) = curv.lr_eigenvalues;
      return out;
    }
    case Structure::Kind::Kfac: {
      require(post.kfac_prior_mode == KfacPriorMode::ExactEigen,
              ErrorCode::UnsupportedMode,
              "SqrtSplit Kfac has no exact precision eigenvalues");
      Vector out(curv.dim());
      Index at = 0;
      for (const auto& cache : post.kfac_eig)
        for (Index j = 0; j < cache.ea.size(); ++j)
          for (Index i = 0; i < cache.eg.size(); ++i)
            out[at++] = cache.ea[j] * cache.eg[i];
      return out;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

Real scaled_trace_covariance(const LaplacePosterior& post) {
  const Real lambda = post.scalar_precision();
  const Vector evals = curvature_eigenvalues(post);
  Real acc = 0.0;
  for (Index i = 0; i < evals.size(); ++i) acc += lambda / (evals[i] + lambda);
  return acc;
}

Vector marginal_variances(const LaplacePosterior& post) {
  const auto& curv = post.curvature;
  switch (curv.structure.kind) {
    case Structure::Kind::Full: {
      Vector inv(post.full_eig.eigenvalues.size());
      for (Index i = 0; i < inv.size(); ++i)
        inv[i] = 1.0 / (post.full_eig.eigenvalues[i] +
                        (post.prior_folded ? 0.0 : post.scalar_precision()));
      return post.full_eig.eigenvectors.array().square().matrix() * inv;
    }
    case Structure::Kind::Diagonal:
      return (curv.diagonal + post.prior_diag).cwiseInverse();
    case Structure::Kind::LowRank: {
      const Real lambda = post.scalar_precision();
      const Vector inv =
          (curv.lr_eigenvalues.array() + lambda).inverse().matrix();
      const Matrix q2 = curv.lr_basis.array().square().matrix();
      Vector vars = q2 * inv;
      const Vector residual = Vector::Ones(curv.dim()) - q2.rowwise().sum();
      vars += residual / lambda;
      return vars;
    }
    case Structure::Kind::Kfac: {
      Vector vars(curv.dim());
      for (std::size_t b = 0; b < curv.kfac.size(); ++b) {
        const auto& block = curv.kfac[b];
        const auto& cache = post.kfac_eig[b];
        const Real lambda = block_lambda(post, block);
        Matrix var_mat(block.g_dim(), block.a_dim());
        if (post.kfac_prior_mode == KfacPriorMode::ExactEigen) {
          Matrix weights(cache.eg.size(), cache.ea.size());
          for (Index i = 0; i < cache.eg.size(); ++i)
            for (Index j = 0; j < cache.ea.size(); ++j)
              weights(i, j) = 1.0 / (cache.ea[j] * cache.eg[i] + lambda);
          var_mat = cache.qg.array().square().matrix() * weights *
                    cache.qa.array().square().matrix().transpose();
        } else {
          const Real root = std::sqrt(lambda);
          const Vector diag_u_inv = cache.qg.array().square().matrix() *
                                    (cache.eg.array() + root).inverse().matrix();
          const Vector diag_v_inv = cache.qa.array().square().matrix() *
                                    (cache.ea.array() + root).inverse().matrix();
          var_mat = diag_u_inv * diag_v_inv.transpose();
        }
        vars.segment(block.subset_offset, block.block_dim()) =
            curvature::from_layer_matrix(block, var_mat);
      }
      return vars;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

SubsetSpec select_subnetwork(const Vector& variances, Index s) {
  const Index d = variances.size();
  require(s >= 1 && s <= d, ErrorCode::InvalidSize,
          "subnetwork size must lie in [1, D]");
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (variances[a] != variances[b]) return variances[a] > variances[b];
    return a < b;
  });
  std::vector<bool> mask(static_cast<std::size_t>(d), false);
  for (Index i = 0; i < s; ++i)
    mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return SubsetSpec::subnetwork(std::move(mask));
}

std::vector<Vector> sample(const LaplacePosterior& post, Index count,
                           std::uint64_t seed) {
  const auto& curv = post.curvature;
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));

  for (Index n = 0; n < count; ++n) {
    Vector subset_values;
    switch (curv.structure.kind) {
      case Structure::Kind::Full: {
        Vector eps(curv.dim());
        for (Index i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
        const Real lambda = post.prior_folded ? 0.0 : post.scalar_precision();
        const Vector scale =
            (post.full_eig.eigenvalues.array() + lambda).rsqrt().matrix();
        subset_values = post.full_eig.eigenvectors * scale.cwiseProduct(eps);
        break;
      }
      case Structure::Kind::Diagonal: {
        subset_values.resize(curv.dim());
        for (Index i = 0; i < curv.dim(); ++i)
          subset_values[i] =
              normal(rng) / std::sqrt(curv.diagonal[i] + post.prior_diag[i]);
        break;
      }
      case Structure::Kind::LowRank: {
        const Real lambda = post.scalar_precision();
        const Index k = curv.lr_eigenvalues.size();
        Vector eps_k(k);
        for (Index i = 0; i < k; ++i) eps_k[i] = normal(rng);
        Vector eps_d(curv.dim());
        for (Index i = 0; i < curv.dim(); ++i) eps_d[i] = normal(rng);
        const Vector scaled =
            (curv.lr_eigenvalues.array() + lambda).rsqrt().matrix().cwiseProduct(
                eps_k);
        const Vector complement =
            (eps_d - curv.lr_basis * (curv.lr_basis.transpose() * eps_d)) /
            std::sqrt(lambda);
        subset_values = curv.lr_basis * scaled + complement;
        break;
      }
      case Structure::Kind::Kfac: {
        subset_values.resize(curv.dim());
        for (std::size_t b = 0; b < curv.kfac.size(); ++b) {
          const auto& block = curv.kfac[b];
          const auto& cache = post.kfac_eig[b];
          const Real lambda = block_lambda(post, block);
          const Matrix eps = normal_matrix(rng, block.g_dim(), block.a_dim());
          Matrix delta;
          if (post.kfac_prior_mode == KfacPriorMode::ExactEigen) {
            Matrix scaled(eps.rows(), eps.cols());
            for (Index i = 0; i < scaled.rows(); ++i)
              for (Index j = 0; j < scaled.cols(); ++j)
                scaled(i, j) = eps(i, j) /
                               std::sqrt(cache.ea[j] * cache.eg[i] + lambda);
            delta = cache.qg * scaled * cache.qa.transpose();
          } else {
            const Real root = std::sqrt(lambda);
            const Matrix u_inv_half =
                cache.qg * (cache.eg.array() + root).rsqrt().matrix().asDiagonal() *
                cache.qg.transpose();
            const Matrix v_inv_half =
                cache.qa * (cache.ea.array() + root).rsqrt().matrix().asDiagonal() *
                cache.qa.transpose();
            delta = u_inv_half * eps * v_inv_half;
          }
          subset_values.segment(block.subset_offset, block.block_dim()) =
              curvature::from_layer_matrix(block, delta);
        }
        break;
      }
    }
    out.push_back(scatter(post, subset_values));
  }
  return out;
}

Matrix quadratic_form(const LaplacePosterior& post, const Matrix& j_subset) {
  const auto& curv = post.curvature;
  require(j_subset.rows() == curv.dim(), ErrorCode::InvalidInput,
          "jacobian rows must equal the subset dim");
  const Index k = j_subset.cols();
  switch (curv.structure.kind) {
    case Structure::Kind::Full: {
      const Real lambda = post.prior_folded ? 0.0 : post.scalar_precision();
      const Matrix b = post.full_eig.eigenvectors.transpose() * j_subset;
      const Vector inv =
          (post.full_eig.eigenvalues.array() + lambda).inverse().matrix();
      return b.transpose() * inv.asDiagonal() * b;
    }
    case Structure::Kind::Diagonal: {
      const Vector inv = (curv.diagonal + post.prior_diag).cwiseInverse();
      return j_subset.transpose() * inv.asDiagonal() * j_subset;
    }
    case Structure::Kind::LowRank: {
      const Real lambda = post.scalar_precision();
      const Matrix t = curv.lr_basis.transpose() * j_subset;
      const Vector inv =
          (curv.lr_eigenvalues.array() + lambda).inverse().matrix();
      return t.transpose() * inv.asDiagonal() * t +
             (j_subset.transpose() * j_subset - t.transpose() * t) / lambda;
    }
    case Structure::Kind::Kfac: {
      Matrix out = Matrix::Zero(k, k);
      for (std::size_t b = 0; b < curv.kfac.size(); ++b) {
        const auto& block = curv.kfac[b];
        const auto& cache = post.kfac_eig[b];
        const Real lambda = block_lambda(post, block);
        Matrix weights(block.g_dim(), block.a_dim());
        if (post.kfac_prior_mode == KfacPriorMode::ExactEigen) {
          for (Index i = 0; i < weights.rows(); ++i)
            for (Index j = 0; j < weights.cols(); ++j)
              weights(i, j) = 1.0 / (cache.ea[j] * cache.eg[i] + lambda);
        } else {
          const Real root = std::sqrt(lambda);
          for (Index i = 0; i < weights.rows(); ++i)
            for (Index j = 0; j < weights.cols(); ++j)
              weights(i, j) = 1.0 / ((cache.eg[i] + root) * (cache.ea[j] + root));
        }
        std::vector<Matrix> rotated;
        rotated.reserve(static_cast<std::size_t>(k));
        for (Index c = 0; c < k; ++c) {
          const Matrix m = curvature::to_layer_matrix(
              block, j_subset.col(c).segment(block.subset_offset, block.block_dim()));
          rotated.push_back(cache.qg.transpose() * m * cache.qa);
        }
        for (Index c = 0; c < k; ++c)
          for (Index c2 = c; c2 < k; ++c2) {
            const Real v = (rotated[static_cast<std::size_t>(c)].array() *
                            rotated[static_cast<std::size_t>(c2)].array() *
                            weights.array())
                               .sum();
            out(c, c2) += v;
            if (c2 != c) out(c2, c) += v;
          }
      }
      return out;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

EvidenceReport log_marginal_likelihood(const LaplacePosterior& post,
                                       const nn::MlpSpec& spec,
                                       const nn::Batch& batch,
                                       const nn::Likelihood& lik) {
  EvidenceReport report;
  report.neg_loss_at_map =
      -nn::neg_log_joint(spec, post.theta_map, batch, lik, post.prior);
  report.half_logdet_sigma = -0.5 * logdet_precision(post);
  report.d_half_log_2pi = 0.5 * static_cast<Real>(post.dim()) * kLog2Pi;
  // grouped so the empty-data evidence cancels to exactly zero
  report.log_evidence =
      report.neg_loss_at_map + (report.d_half_log_2pi + report.half_logdet_sigma);
  return report;
}

Matrix materialize_precision(const LaplacePosterior& post, Index cap) {
  const auto& curv = post.curvature;
  require(curv.dim() <= cap, ErrorCode::TooLarge,
          "subset dim exceeds the materialization cap");
  if (curv.structure.kind == Structure::Kind::Kfac &&
      post.kfac_prior_mode == KfacPriorMode::SqrtSplit) {
    Matrix out = Matrix::Zero(curv.dim(), curv.dim());
    for (const auto& block : curv.kfac) {
      const Real root = std::sqrt(block_lambda(post, block));
      Matrix a = block.a_factor;
      a.diagonal().array() += root;
      Matrix g = block.g_factor;
      g.diagonal().array() += root;
      out.block(block.subset_offset, block.subset_offset, block.block_dim(),
                block.block_dim()) = curvature::dense_block(block, a, g);
    }
    return out;
  }
  Matrix out = curvature::materialize(curv, cap);
  out.diagonal() += post.prior_diag;
  return out;
}

Matrix materialize_covariance(const LaplacePosterior& post, Index cap) {
  const Matrix precision = materialize_precision(post, cap);
  return linalg::psd_solve(precision,
                           Matrix::Identity(precision.rows(), precision.cols()));
}

}  // namespace lapkit::posterior
