#pragma once

#include "lapkit/nn.hpp"
#include "lapkit/types.hpp"

#include <cstdint>
#include <vector>

namespace lapkit::curvature {

/// Fisher and GGN are computed by the same exact routine (they coincide for
/// the supported likelihoods); EmpiricalFisher uses the observed labels.
enum class CurvatureKind { Ggn, Fisher, EmpiricalFisher };

struct Structure {
  enum class Kind { Full, Diagonal, Kfac, LowRank };

  Kind kind = Kind::Full;
  Index rank = 0;  // LowRank only

  static Structure full() { return {Kind::Full, 0}; }
  static Structure diagonal() { return {Kind::Diagonal, 0}; }
  static Structure kfac() { return {Kind::Kfac, 0}; }
  static Structure low_rank(Index k) {
    require(k >= 1, ErrorCode::InvalidRank, "rank must be >= 1");
    return {Kind::LowRank, k};
  }
};

/// Which weights the curvature (and the Laplace posterior built on it) covers.
struct SubsetSpec {
  enum class Kind { All, LastLayer, Subnetwork };

  Kind kind = Kind::All;
  std::vector<bool> mask;  // Subnetwork only, length D

  static SubsetSpec all() { return {Kind::All, {}}; }
  static SubsetSpec last_layer() { return {Kind::LastLayer, {}}; }
  static SubsetSpec subnetwork(std::vector<bool> mask);

  /// Covered parameter indices, ascending, in full-theta coordinates.
  std::vector<Index> resolve(const nn::MlpSpec& spec) const;
};

/// One layer's Kronecker factors. `a_factor` is built from bias-augmented
/// inputs ((in+1)^2 entries), `g_factor` from preactivation gradients.
struct KfacLayerBlock {
  Index layer = 0;
  nn::LayerShape shape;
  Index subset_offset = 0;  // block start within subset coordinates
  Matrix a_factor;
  Matrix g_factor;

  Index a_dim() const { return shape.in + (shape.has_bias ? 1 : 0); }
  Index g_dim() const { return shape.out; }
  Index block_dim() const { return a_dim() * g_dim(); }
};

/// Structured PSD approximation to the summed log-likelihood Hessian over a
/// weight subset. Exactly one payload is populated, per `structure`.
struct CurvatureEstimate {
  CurvatureKind kind = CurvatureKind::Ggn;
  Structure structure = Structure::full();
  SubsetSpec subset = SubsetSpec::all();
  std::vector<Index> param_indices;       // subset order -> full-theta index
  std::vector<nn::LayerShape> layers;     // full-net layer shapes

  Matrix full;                        // Full: D_s x D_s
  Vector diagonal;                    // Diagonal: D_s
  std::vector<KfacLayerBlock> kfac;   // Kfac: one block per layer
  Matrix lr_basis;                    // LowRank: D_s x k, orthonormal columns
  Vector lr_eigenvalues;              // LowRank: k, descending, >= 0

  Index dim() const { return static_cast<Index>(param_indices.size()); }
};

/// Estimates the log-likelihood Hessian term at theta. Factors and payloads
/// are sums over the batch (additive over dataset partitions). An empty
/// batch yields zero curvature.
CurvatureEstimate estimate(const nn::MlpSpec& spec, const Vector& theta,
                           const nn::Batch& batch, const nn::Likelihood& lik,
                           CurvatureKind kind, const Structure& structure,
                           const SubsetSpec& subset);

/// Optimal rank-k truncation of a Full estimate (top-k eigenpairs).
CurvatureEstimate low_rank_truncate(const CurvatureEstimate& full_estimate,
                                    Index k);

/// Dense D_s x D_s matrix for any structure; refuses above `cap` dims.
Matrix materialize(const CurvatureEstimate& ce, Index cap = 4096);

/// H * v over subset coordinates (v given in subset order).
Vector multiply(const CurvatureEstimate& ce, const Vector& v);

/// Factor-/element-wise accumulation; structures and subsets must match.
void add_in_place(CurvatureEstimate& acc, const CurvatureEstimate& term);

/// Monte Carlo Fisher with sampled labels, dense over the subset. Kept as a
/// cross-check for the exact GGN/Fisher route.
Matrix mc_fisher(const nn::MlpSpec& spec, const Vector& theta,
                 const nn::Batch& batch, const nn::Likelihood& lik,
                 const SubsetSpec& subset, Index samples_per_datum,
                 std::uint64_t seed);

/// Maps a subset-order layer slice to matrix layout (g_dim x a_dim): weight
/// (i,j) sits at slice[i*in + j], the bias column (if any) at the end.
Matrix to_layer_matrix(const KfacLayerBlock& block, const Vector& slice);

/// Inverse of to_layer_matrix.
Vector from_layer_matrix(const KfacLayerBlock& block, const Matrix& m);

/// Dense kron(A, G) for one layer block, permuted into subset-order layout.
Matrix dense_block(const KfacLayerBlock& block, const Matrix& a, const Matrix& g);

}  // namespace lapkit::curvature
