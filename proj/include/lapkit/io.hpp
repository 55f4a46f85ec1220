#pragma once

#include "lapkit/nn.hpp"
#include "lapkit/posterior.hpp"
#include "lapkit/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lapkit::io {

using Json = nlohmann::ordered_json;

/// CSV dataset: feature columns x0..x{M-1}, then either one integer class
/// column y or real columns y / y0..y{C-1}.
struct Dataset {
  Matrix inputs;
  Matrix targets;  // raw y columns as reals

  Index size() const { return inputs.rows(); }
  /// Interprets the y columns per likelihood; integer check for labels.
  nn::Batch to_batch(bool classification) const;
};

Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Matrix& inputs,
                       const Matrix& targets);

Json checkpoint_to_json(const nn::MlpSpec& spec, const Vector& theta);
std::pair<nn::MlpSpec, Vector> checkpoint_from_json(const Json& j);

Json posterior_to_json(const posterior::LaplacePosterior& post,
                       const nn::MlpSpec& spec);
std::pair<posterior::LaplacePosterior, nn::MlpSpec> posterior_from_json(
    const Json& j);

Json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const Json& j);

/// Named sub-seed derivation: splitmix64(master ^ fnv1a64(role)).
std::uint64_t sub_seed(std::uint64_t master, std::string_view role);

// enum <-> string (shared by artifacts and the CLI)
std::string activation_name(nn::Activation a);
nn::Activation parse_activation(const std::string& s);
std::string structure_name(const curvature::Structure& s);
std::string kind_name(curvature::CurvatureKind k);
curvature::CurvatureKind parse_kind(const std::string& s);
std::string subset_name(const curvature::SubsetSpec& s);
std::string prior_mode_name(posterior::KfacPriorMode m);
posterior::KfacPriorMode parse_prior_mode(const std::string& s);

}  // namespace lapkit::io
