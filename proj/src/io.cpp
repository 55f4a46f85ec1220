#include "lapkit/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace lapkit::io {

namespace {

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  const Index rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    require(static_cast<Index>(j.at(i).size()) == cols, ErrorCode::InvalidInput,
            "ragged matrix in JSON");
    for (Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<Real>();
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<Real>();
  return v;
}

Json prior_to_json(const nn::PriorSpec& prior) {
  Json j;
  if (prior.kind == nn::PriorSpec::Kind::Scalar) {
    j["type"] = "scalar";
    j["precision"] = prior.precision;
  } else {
    j["type"] = "per_layer";
    j["precisions"] = prior.layer_precisions;
  }
  return j;
}

nn::PriorSpec prior_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "scalar") return nn::PriorSpec::scalar(j.at("precision").get<Real>());
  if (type == "per_layer")
    return nn::PriorSpec::per_layer(j.at("precisions").get<std::vector<Real>>());
  fail(ErrorCode::InvalidInput, "unknown prior type: " + type);
}

nn::MlpSpec spec_from_json(const Json& j) {
  std::vector<Index> dims;
  for (const auto& d : j.at("dims")) dims.push_back(d.get<Index>());
  const nn::Activation act = parse_activation(j.at("activation").get<std::string>());
  const bool bias = j.value("uses_bias", true);
  return nn::MlpSpec(std::move(dims), act, bias);
}

Json spec_to_json(const nn::MlpSpec& spec) {
  Json j;
  j["dims"] = spec.layer_dims;
  j["activation"] = activation_name(spec.hidden_activation);
  if (!spec.uses_bias) j["uses_bias"] = false;
  return j;
}

}  // namespace

nn::Batch Dataset::to_batch(bool classification) const {
  nn::Batch batch;
  batch.inputs = inputs;
  if (classification) {
    require(targets.cols() == 1, ErrorCode::InvalidInput,
            "classification needs a single y column");
    for (Index n = 0; n < targets.rows(); ++n) {
      const Real y = targets(n, 0);
      const Real rounded = std::round(y);
      require(std::abs(y - rounded) <= 1e-9 && rounded >= 0.0,
              ErrorCode::InvalidInput, "class labels must be non-negative integers");
      batch.labels.push_back(static_cast<Index>(rounded));
    }
    batch.targets = Matrix(0, 0);
  } else {
    batch.targets = targets;
  }
  return batch;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::MissingData, "cannot open dataset: " + path);

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::InvalidInput,
          "dataset has no header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  Index x_cols = 0;
  while (x_cols < static_cast<Index>(header.size()) &&
         header[static_cast<std::size_t>(x_cols)] ==
             "x" + std::to_string(x_cols))
    ++x_cols;
  const Index y_cols = static_cast<Index>(header.size()) - x_cols;
  require(x_cols >= 1 && y_cols >= 1, ErrorCode::InvalidInput,
          "dataset header must be x0..x{M-1} followed by y column(s)");

  std::vector<std::vector<Real>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<Real> row;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    require(static_cast<Index>(row.size()) == x_cols + y_cols,
            ErrorCode::InvalidInput, "dataset row width mismatch");
    rows.push_back(std::move(row));
  }

  Dataset ds;
  ds.inputs.resize(static_cast<Index>(rows.size()), x_cols);
  ds.targets.resize(static_cast<Index>(rows.size()), y_cols);
  for (Index n = 0; n < ds.inputs.rows(); ++n) {
    const auto& row = rows[static_cast<std::size_t>(n)];
    for (Index c = 0; c < x_cols; ++c) ds.inputs(n, c) = row[static_cast<std::size_t>(c)];
    for (Index c = 0; c < y_cols; ++c)
      ds.targets(n, c) = row[static_cast<std::size_t>(x_cols + c)];
  }
  return ds;
}

void write_dataset_csv(const std::string& path, const Matrix& inputs,
                       const Matrix& targets) {
  require(inputs.rows() == targets.rows(), ErrorCode::InvalidInput,
          "inputs and targets must have matching row counts");
  std::ofstream out(path);
  require(out.good(), ErrorCode::MissingData, "cannot write dataset: " + path);

  for (Index c = 0; c < inputs.cols(); ++c) out << "x" << c << ",";
  if (targets.cols() == 1) {
    out << "y\n";
  } else {
    for (Index c = 0; c < targets.cols(); ++c)
      out << "y" << c << (c + 1 < targets.cols() ? "," : "\n");
  }

  char buffer[64];
  auto put = [&](Real v, char sep) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    out << buffer << sep;
  };
  for (Index n = 0; n < inputs.rows(); ++n) {
    for (Index c = 0; c < inputs.cols(); ++c) put(inputs(n, c), ',');
    for (Index c = 0; c < targets.cols(); ++c)
      put(targets(n, c), c + 1 < targets.cols() ? ',' : '\n');
  }
}

Json checkpoint_to_json(const nn::MlpSpec& spec, const Vector& theta) {
  require(theta.size() == spec.param_count(), ErrorCode::InvalidInput,
          "theta length does not match the spec");
  Json j;
  j["version"] = 1;
  j["spec"] = spec_to_json(spec);
  j["theta"] = vector_to_json(theta);
  return j;
}

std::pair<nn::MlpSpec, Vector> checkpoint_from_json(const Json& j) {
  require(j.at("version").get<int>() == 1, ErrorCode::InvalidInput,
          "unsupported checkpoint version");
  nn::MlpSpec spec = spec_from_json(j.at("spec"));
  Vector theta = vector_from_json(j.at("theta"));
  require(theta.size() == spec.param_count(), ErrorCode::InvalidInput,
          "checkpoint theta length does not match the spec");
  return {std::move(spec), std::move(theta)};
}

Json posterior_to_json(const posterior::LaplacePosterior& post,
                       const nn::MlpSpec& spec) {
  const auto& curv = post.curvature;
  Json j;
  j["version"] = 1;
  j["model"] = spec_to_json(spec);
  Json subset;
  subset["kind"] = subset_name(curv.subset);
  if (curv.subset.kind == curvature::SubsetSpec::Kind::Subnetwork) {
    Json mask = Json::array();
    for (bool b : curv.subset.mask) mask.push_back(b ? 1 : 0);
    subset["mask"] = std::move(mask);
  }
  j["subset"] = std::move(subset);
  j["structure"] = structure_name(curv.structure);
  if (curv.structure.kind == curvature::Structure::Kind::LowRank)
    j["rank"] = curv.structure.rank;
  j["kind"] = kind_name(curv.kind);
  j["prior"] = prior_to_json(post.prior);
  j["kfac_prior_mode"] = prior_mode_name(post.kfac_prior_mode);
  j["theta_map"] = vector_to_json(post.theta_map);

  Json payload;
  switch (curv.structure.kind) {
    case curvature::Structure::Kind::Full:
      payload["full"] = matrix_to_json(curv.full);
      break;
    case curvature::Structure::Kind::Diagonal:
      payload["diagonal"] = vector_to_json(curv.diagonal);
      break;
    case curvature::Structure::Kind::Kfac: {
      Json blocks = Json::array();
      for (const auto& block : curv.kfac) {
        Json b;
        b["layer"] = block.layer;
        b["a"] = matrix_to_json(block.a_factor);
        b["g"] = matrix_to_json(block.g_factor);
        blocks.push_back(std::move(b));
      }
      payload["kfac"] = std::move(blocks);
      break;
    }
    case curvature::Structure::Kind::LowRank:
      payload["basis"] = matrix_to_json(curv.lr_basis);
      payload["eigenvalues"] = vector_to_json(curv.lr_eigenvalues);
      break;
  }
  j["payload"] = std::move(payload);
  return j;
}

std::pair<posterior::LaplacePosterior, nn::MlpSpec> posterior_from_json(
    const Json& j) {
  require(j.at("version").get<int>() == 1, ErrorCode::InvalidInput,
          "unsupported posterior version");
  nn::MlpSpec spec = spec_from_json(j.at("model"));

  curvature::SubsetSpec subset = curvature::SubsetSpec::all();
  const std::string subset_kind = j.at("subset").at("kind").get<std::string>();
  if (subset_kind == "all") {
    subset = curvature::SubsetSpec::all();
  } else if (subset_kind == "last_layer") {
    subset = curvature::SubsetSpec::last_layer();
  } else if (subset_kind == "subnetwork") {
    std::vector<bool> mask;
    for (const auto& b : j.at("subset").at("mask")) mask.push_back(b.get<int>() != 0);
    subset = curvature::SubsetSpec::subnetwork(std::move(mask));
  } else {
    fail(ErrorCode::InvalidInput, "unknown subset kind: " + subset_kind);
  }

  const std::string structure = j.at("structure").get<std::string>();
  curvature::CurvatureEstimate curv;
  curv.kind = parse_kind(j.at("kind").get<std::string>());
  curv.subset = subset;
  curv.param_indices = subset.resolve(spec);
  for (Index l = 0; l < spec.num_layers(); ++l) curv.layers.push_back(spec.layer(l));

  const Json& payload = j.at("payload");
  if (structure == "full") {
    curv.structure = curvature::Structure::full();
    curv.full = matrix_from_json(payload.at("full"));
    require(curv.full.rows() == curv.dim(), ErrorCode::InvalidInput,
            "full payload shape mismatch");
  } else if (structure == "diag") {
    curv.structure = curvature::Structure::diagonal();
    curv.diagonal = vector_from_json(payload.at("diagonal"));
    require(curv.diagonal.size() == curv.dim(), ErrorCode::InvalidInput,
            "diagonal payload shape mismatch");
  } else if (structure == "kfac") {
    curv.structure = curvature::Structure::kfac();
    const Index first = subset.kind == curvature::SubsetSpec::Kind::LastLayer
                            ? spec.num_layers() - 1
                            : Index(0);
    Index offset = 0;
    for (const auto& bj : payload.at("kfac")) {
      curvature::KfacLayerBlock block;
      block.layer = bj.at("layer").get<Index>();
      require(block.layer >= first && block.layer < spec.num_layers(),
              ErrorCode::InvalidInput, "kfac block layer out of range");
      block.shape = spec.layer(block.layer);
      block.subset_offset = offset;
      block.a_factor = matrix_from_json(bj.at("a"));
      block.g_factor = matrix_from_json(bj.at("g"));
      require(block.a_factor.rows() == block.a_dim() &&
                  block.g_factor.rows() == block.g_dim(),
              ErrorCode::InvalidInput, "kfac factor shape mismatch");
      offset += block.block_dim();
      curv.kfac.push_back(std::move(block));
    }
    require(offset == curv.dim(), ErrorCode::InvalidInput,
            "kfac blocks do not cover the subset");
  } else if (structure == "lowrank") {
    curv.structure = curvature::Structure::low_rank(j.at("rank").get<Index>());
    curv.lr_basis = matrix_from_json(payload.at("basis"));
    curv.lr_eigenvalues = vector_from_json(payload.at("eigenvalues"));
    require(curv.lr_basis.rows() == curv.dim() &&
                curv.lr_basis.cols() == curv.structure.rank &&
                curv.lr_eigenvalues.size() == curv.structure.rank,
            ErrorCode::InvalidInput, "low-rank payload shape mismatch");
  } else {
    fail(ErrorCode::InvalidInput, "unknown structure: " + structure);
  }

  const Vector theta_map = vector_from_json(j.at("theta_map"));
  require(theta_map.size() == spec.param_count(), ErrorCode::InvalidInput,
          "theta_map length does not match the spec");
  const auto prior = prior_from_json(j.at("prior"));
  const auto mode = parse_prior_mode(j.at("kfac_prior_mode").get<std::string>());
  return {posterior::fit(theta_map, curv, prior, mode), std::move(spec)};
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::MissingData, "cannot open file: " + path);
  Json j;
  in >> j;
  return j;
}

void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::MissingData, "cannot write file: " + path);
  out << j.dump(2) << "\n";
}

std::uint64_t sub_seed(std::uint64_t master, std::string_view role) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : role) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  std::uint64_t x = master ^ h;
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::ReLU:
      return "relu";
    case nn::Activation::Tanh:
      return "tanh";
    case nn::Activation::Identity:
      return "identity";
  }
  return "tanh";
}

nn::Activation parse_activation(const std::string& s) {
  if (s == "relu") return nn::Activation::ReLU;
  if (s == "tanh") return nn::Activation::Tanh;
  if (s == "identity") return nn::Activation::Identity;
  fail(ErrorCode::InvalidInput, "unknown activation: " + s);
}

std::string structure_name(const curvature::Structure& s) {
  switch (s.kind) {
    case curvature::Structure::Kind::Full:
      return "full";
    case curvature::Structure::Kind::Diagonal:
      return "diag";
    case curvature::Structure::Kind::Kfac:
      return "kfac";
    case curvature::Structure::Kind::LowRank:
      return "lowrank";
  }
  return "full";
}

std::string kind_name(curvature::CurvatureKind k) {
  switch (k) {
    case curvature::CurvatureKind::Ggn:
      return "ggn";
    case curvature::CurvatureKind::Fisher:
      return "fisher";
    case curvature::CurvatureKind::EmpiricalFisher:
      return "ef";
  }
  return "ggn";
}

curvature::CurvatureKind parse_kind(const std::string& s) {
  if (s == "ggn") return curvature::CurvatureKind::Ggn;
  if (s == "fisher") return curvature::CurvatureKind::Fisher;
  if (s == "ef") return curvature::CurvatureKind::EmpiricalFisher;
  fail(ErrorCode::InvalidInput, "unknown curvature kind: " + s);
}

std::string subset_name(const curvature::SubsetSpec& s) {
  switch (s.kind) {
    case curvature::SubsetSpec::Kind::All:
      return "all";
    case curvature::SubsetSpec::Kind::LastLayer:
      return "last_layer";
    case curvature::SubsetSpec::Kind::Subnetwork:
      return "subnetwork";
  }
  return "all";
}

std::string prior_mode_name(posterior::KfacPriorMode m) {
  return m == posterior::KfacPriorMode::ExactEigen ? "exact_eigen" : "sqrt_split";
}

posterior::KfacPriorMode parse_prior_mode(const std::string& s) {
  if (s == "exact_eigen") return posterior::KfacPriorMode::ExactEigen;
  if (s == "sqrt_split") return posterior::KfacPriorMode::SqrtSplit;
  fail(ErrorCode::InvalidInput, "unknown kfac prior mode: " + s);
}

}  // namespace lapkit::io
