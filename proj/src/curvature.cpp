#include "lapkit/curvature.hpp"

#include "lapkit/linalg.hpp"

#include <algorithm>
#include <random>

namespace lapkit::curvature {

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<Index>& indices) {
  Matrix out(static_cast<Index>(indices.size()), m.cols());
  for (Index r = 0; r < out.rows(); ++r)
    out.row(r) = m.row(indices[static_cast<std::size_t>(r)]);
  return out;
}

// Output-side directions whose backprop accumulates the requested curvature:
// columns of the PSD square root of the output Hessian for GGN/Fisher, the
// observed-label gradient for the empirical Fisher.
Matrix curvature_directions(const nn::Likelihood& lik, const Vector& f,
                            Index label, const Vector& target,
                            CurvatureKind kind) {
  if (kind == CurvatureKind::EmpiricalFisher)
    return nn::nll_grad(lik, f, label, target);
  return nn::output_hessian_sqrt(lik, f);
}

std::vector<KfacLayerBlock> make_blocks(const nn::MlpSpec& spec,
                                        const SubsetSpec& subset) {
  std::vector<KfacLayerBlock> blocks;
  const Index first =
      subset.kind == SubsetSpec::Kind::LastLayer ? spec.num_layers() - 1 : 0;
  Index offset = 0;
  for (Index l = first; l < spec.num_layers(); ++l) {
    KfacLayerBlock block;
    block.layer = l;
    block.shape = spec.layer(l);
    block.subset_offset = offset;
    block.a_factor = Matrix::Zero(block.a_dim(), block.a_dim());
    block.g_factor = Matrix::Zero(block.g_dim(), block.g_dim());
    offset += block.block_dim();
    blocks.push_back(std::move(block));
  }
  return blocks;
}

Vector augmented_activation(const nn::LayerShape& shape, const Vector& a) {
  Vector a_aug(shape.in + (shape.has_bias ? 1 : 0));
  a_aug.head(shape.in) = a;
  if (shape.has_bias) a_aug[shape.in] = 1.0;
  return a_aug;
}

// Row (output unit) and column (augmented input unit) of a subset-order
// layer slice position.
inline Index slice_row(const KfacLayerBlock& b, Index p) {
  return p < b.shape.weight_count() ? p / b.shape.in : p - b.shape.weight_count();
}
inline Index slice_col(const KfacLayerBlock& b, Index p) {
  return p < b.shape.weight_count() ? p % b.shape.in : b.shape.in;
}

}  // namespace

SubsetSpec SubsetSpec::subnetwork(std::vector<bool> mask) {
  bool any = false;
  for (bool b : mask) any |= b;
  require(any, ErrorCode::InvalidInput, "subnetwork mask needs >= 1 true entry");
  return {Kind::Subnetwork, std::move(mask)};
}

std::vector<Index> SubsetSpec::resolve(const nn::MlpSpec& spec) const {
  const Index d = spec.param_count();
  std::vector<Index> indices;
  switch (kind) {
    case Kind::All:
      indices.resize(static_cast<std::size_t>(d));
      for (Index i = 0; i < d; ++i) indices[static_cast<std::size_t>(i)] = i;
      break;
    case Kind::LastLayer: {
      const nn::LayerShape shape = spec.layer(spec.num_layers() - 1);
      for (Index i = shape.begin(); i < shape.end(); ++i) indices.push_back(i);
      break;
    }
    case Kind::Subnetwork:
      require(static_cast<Index>(mask.size()) == d, ErrorCode::InvalidInput,
              "subnetwork mask length must equal the parameter count");
      for (Index i = 0; i < d; ++i)
        if (mask[static_cast<std::size_t>(i)]) indices.push_back(i);
      require(!indices.empty(), ErrorCode::InvalidInput,
              "subnetwork mask needs >= 1 true entry");
      break;
  }
  return indices;
}

CurvatureEstimate estimate(const nn::MlpSpec& spec, const Vector& theta,
                           const nn::Batch& batch, const nn::Likelihood& lik,
                           CurvatureKind kind, const Structure& structure,
                           const SubsetSpec& subset) {
  CurvatureEstimate ce;
  ce.kind = kind;
  ce.structure = structure;
  ce.subset = subset;
  ce.param_indices = subset.resolve(spec);
  for (Index l = 0; l < spec.num_layers(); ++l) ce.layers.push_back(spec.layer(l));
  const Index ds = ce.dim();

  if (structure.kind == Structure::Kind::Kfac) {
    require(subset.kind != SubsetSpec::Kind::Subnetwork,
            ErrorCode::UnsupportedCombination,
            "Kfac supports only the All and LastLayer subsets");
  }
  if (structure.kind == Structure::Kind::LowRank) {
    require(structure.rank >= 1 && structure.rank <= ds, ErrorCode::InvalidRank,
            "low-rank k must lie in [1, subset dim]");
  }

  const bool classifier = lik.is_classification();
  auto label_of = [&](Index n) {
    return classifier ? batch.labels[static_cast<std::size_t>(n)] : Index(-1);
  };
  auto target_of = [&](Index n) {
    return classifier ? Vector() : Vector(batch.targets.row(n));
  };

  switch (structure.kind) {
    case Structure::Kind::Full:
    case Structure::Kind::LowRank: {
      Matrix h = Matrix::Zero(ds, ds);
      for (Index n = 0; n < batch.size(); ++n) {
        const auto trace = nn::forward(spec, theta, batch.inputs.row(n));
        const Matrix v = curvature_directions(lik, trace.output(), label_of(n),
                                              target_of(n), kind);
        const Matrix grads = nn::param_gradients(
            spec, trace, nn::backprop_directions(spec, theta, trace, v));
        const Matrix gs = gather_rows(grads, ce.param_indices);
        h += gs * gs.transpose();
      }
      ce.full = std::move(h);
      if (structure.kind == Structure::Kind::LowRank) {
        CurvatureEstimate full_ce = ce;
        full_ce.structure = Structure::full();
        ce = low_rank_truncate(full_ce, structure.rank);
      }
      break;
    }
    case Structure::Kind::Diagonal: {
      Vector diag = Vector::Zero(ds);
      for (Index n = 0; n < batch.size(); ++n) {
        const auto trace = nn::forward(spec, theta, batch.inputs.row(n));
        const Matrix v = curvature_directions(lik, trace.output(), label_of(n),
                                              target_of(n), kind);
        const Matrix grads = nn::param_gradients(
            spec, trace, nn::backprop_directions(spec, theta, trace, v));
        const Matrix gs = gather_rows(grads, ce.param_indices);
        diag += gs.rowwise().squaredNorm();
      }
      ce.diagonal = std::move(diag);
      break;
    }
    case Structure::Kind::Kfac: {
      auto blocks = make_blocks(spec, subset);
      for (Index n = 0; n < batch.size(); ++n) {
        const auto trace = nn::forward(spec, theta, batch.inputs.row(n));
        const Matrix v = curvature_directions(lik, trace.output(), label_of(n),
                                              target_of(n), kind);
        const auto deltas = nn::backprop_directions(spec, theta, trace, v);
        for (auto& block : blocks) {
          const Vector a_aug = augmented_activation(
              block.shape, trace.activations[static_cast<std::size_t>(block.layer)]);
          const Matrix& delta = deltas[static_cast<std::size_t>(block.layer)];
          block.a_factor += a_aug * a_aug.transpose();
          block.g_factor += delta * delta.transpose();
        }
      }
      ce.kfac = std::move(blocks);
      break;
    }
  }
  return ce;
}

CurvatureEstimate low_rank_truncate(const CurvatureEstimate& full_estimate,
                                    Index k) {
  require(full_estimate.structure.kind == Structure::Kind::Full,
          ErrorCode::InvalidInput, "low_rank_truncate expects a Full estimate");
  const Index ds = full_estimate.dim();
  require(k >= 1 && k <= ds, ErrorCode::InvalidRank,
          "low-rank k must lie in [1, subset dim]");

  const auto eig = linalg::sym_eig(full_estimate.full);

  CurvatureEstimate ce = full_estimate;
  ce.structure = Structure::low_rank(k);
  ce.full = Matrix();
  ce.lr_basis.resize(ds, k);
  ce.lr_eigenvalues.resize(k);
  for (Index i = 0; i < k; ++i) {
    // eigenvalues come back ascending; store the top-k descending
    ce.lr_basis.col(i) = eig.eigenvectors.col(ds - 1 - i);
    ce.lr_eigenvalues[i] = std::max(Real(0), eig.eigenvalues[ds - 1 - i]);
  }
  return ce;
}

Matrix to_layer_matrix(const KfacLayerBlock& block, const Vector& slice) {
  require(slice.size() == block.block_dim(), ErrorCode::InvalidInput,
          "layer slice has wrong length");
  Matrix m(block.g_dim(), block.a_dim());
  for (Index p = 0; p < slice.size(); ++p)
    m(slice_row(block, p), slice_col(block, p)) = slice[p];
  return m;
}

Vector from_layer_matrix(const KfacLayerBlock& block, const Matrix& m) {
  Vector slice(block.block_dim());
  for (Index p = 0; p < slice.size(); ++p)
    slice[p] = m(slice_row(block, p), slice_col(block, p));
  return slice;
}

Matrix dense_block(const KfacLayerBlock& block, const Matrix& a, const Matrix& g) {
  const Index n = block.block_dim();
  Matrix out(n, n);
  for (Index p = 0; p < n; ++p)
    for (Index q = 0; q < n; ++q)
      out(p, q) = a(slice_col(block, p), slice_col(block, q)) *
                  g(slice_row(block, p), slice_row(block, q));
  return out;
}

Matrix materialize(const CurvatureEstimate& ce, Index cap) {
  require(ce.dim() <= cap, ErrorCode::TooLarge,
          "subset dim exceeds the materialization cap");
  switch (ce.structure.kind) {
    case Structure::Kind::Full:
      return ce.full;
    case Structure::Kind::Diagonal:
      return Matrix(ce.diagonal.asDiagonal());
    case Structure::Kind::LowRank:
      return ce.lr_basis * ce.lr_eigenvalues.asDiagonal() * ce.lr_basis.transpose();
    case Structure::Kind::Kfac: {
      Matrix out = Matrix::Zero(ce.dim(), ce.dim());
      for (const auto& block : ce.kfac)
        out.block(block.subset_offset, block.subset_offset, block.block_dim(),
                  block.block_dim()) =
            dense_block(block, block.a_factor, block.g_factor);
      return out;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

Vector multiply(const CurvatureEstimate& ce, const Vector& v) {
  require(v.size() == ce.dim(), ErrorCode::InvalidInput,
          "vector length must equal the subset dim");
  switch (ce.structure.kind) {
    case Structure::Kind::Full:
      return ce.full * v;
    case Structure::Kind::Diagonal:
      return ce.diagonal.cwiseProduct(v);
    case Structure::Kind::LowRank:
      return ce.lr_basis *
             (ce.lr_eigenvalues.asDiagonal() * (ce.lr_basis.transpose() * v));
    case Structure::Kind::Kfac: {
      Vector out(v.size());
      for (const auto& block : ce.kfac) {
        const Matrix m =
            to_layer_matrix(block, v.segment(block.subset_offset, block.block_dim()));
        out.segment(block.subset_offset, block.block_dim()) =
            from_layer_matrix(block, block.g_factor * m * block.a_factor);
      }
      return out;
    }
  }
  fail(ErrorCode::InvalidState, "unknown structure");
}

void add_in_place(CurvatureEstimate& acc, const CurvatureEstimate& term) {
  require(acc.structure.kind == term.structure.kind &&
              acc.kind == term.kind && acc.dim() == term.dim(),
          ErrorCode::InvalidState, "curvature estimates are not addable");
  switch (acc.structure.kind) {
    case Structure::Kind::Full:
      acc.full += term.full;
      return;
    case Structure::Kind::Diagonal:
      acc.diagonal += term.diagonal;
      return;
    case Structure::Kind::Kfac:
      require(acc.kfac.size() == term.kfac.size(), ErrorCode::InvalidState,
              "Kfac block counts differ");
      for (std::size_t i = 0; i < acc.kfac.size(); ++i) {
        acc.kfac[i].a_factor += term.kfac[i].a_factor;
        acc.kfac[i].g_factor += term.kfac[i].g_factor;
      }
      return;
    case Structure::Kind::LowRank:
      fail(ErrorCode::InvalidState, "low-rank estimates are not addable");
  }
}

Matrix mc_fisher(const nn::MlpSpec& spec, const Vector& theta,
                 const nn::Batch& batch, const nn::Likelihood& lik,
                 const SubsetSpec& subset, Index samples_per_datum,
                 std::uint64_t seed) {
  require(samples_per_datum >= 1, ErrorCode::InvalidInput,
          "samples_per_datum must be >= 1");
  const auto indices = subset.resolve(spec);
  const Index ds = static_cast<Index>(indices.size());
  Matrix f = Matrix::Zero(ds, ds);
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> normal(0.0, 1.0);

  for (Index n = 0; n < batch.size(); ++n) {
    const auto trace = nn::forward(spec, theta, batch.inputs.row(n));
    const Vector out = trace.output();
    for (Index s = 0; s < samples_per_datum; ++s) {
      Vector g;
      if (lik.is_classification()) {
        const Vector shifted = out.array() - out.maxCoeff();
        Vector p = shifted.array().exp();
        p /= p.sum();
        std::discrete_distribution<int> cat(p.data(), p.data() + p.size());
        g = nn::nll_grad(lik, out, cat(rng), Vector());
      } else {
        Vector y = out;
        for (Index c = 0; c < y.size(); ++c) y[c] += lik.sigma_noise * normal(rng);
        g = nn::nll_grad(lik, out, -1, y);
      }
      const Matrix grads = nn::param_gradients(
          spec, trace, nn::backprop_directions(spec, theta, trace, g));
      const Matrix gs = gather_rows(grads, indices);
      f += (gs * gs.transpose()) / static_cast<Real>(samples_per_datum);
    }
  }
  return f;
}

}  // namespace lapkit::curvature
