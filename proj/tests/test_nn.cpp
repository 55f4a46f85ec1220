#include "lapkit/nn.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lapkit;
using namespace lapkit::nn;

namespace {

Batch make_regression_batch(const Matrix& x, const Matrix& y) {
  return Batch{x, {}, y};
}

Batch empty_batch(const MlpSpec& spec) {
  return Batch{Matrix(0, spec.input_dim()), {}, Matrix(0, spec.output_dim())};
}

}  // namespace

TEST_CASE("forward: zero weights, identity layer, determinism") {
  const MlpSpec spec({3, 4, 2}, Activation::Tanh);
  const Vector x = (Vector(3) << 0.5, -1.0, 2.0).finished();

  CHECK(forward(spec, Vector::Zero(spec.param_count()), x).output().norm() == 0.0);

  // single affine layer with W = I, b = 0 reproduces the input
  const MlpSpec id_spec({3, 3}, Activation::Identity);
  Vector theta = Vector::Zero(id_spec.param_count());
  for (Index i = 0; i < 3; ++i) theta[i * 3 + i] = 1.0;
  CHECK((forward(id_spec, theta, x).output() - x).norm() == 0.0);

  const Vector theta_rand = init_params(spec, 42);
  const Vector out1 = forward(spec, theta_rand, x).output();
  const Vector out2 = forward(spec, theta_rand, x).output();
  CHECK((out1 - out2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("neg_log_joint: prior-only, zero-residual, hand-summed cases") {
  const MlpSpec spec({2, 3, 2});
  const Real lambda = 0.7;
  const Real d = static_cast<Real>(spec.param_count());
  const Real expected = 0.5 * d * std::log(2.0 * M_PI / lambda);
  CHECK(neg_log_joint(spec, Vector::Zero(spec.param_count()), empty_batch(spec),
                      Likelihood::categorical(), PriorSpec::scalar(lambda)) ==
        doctest::Approx(expected).epsilon(1e-13));

  // regression with zero residual: only the Gaussian normalizer and the prior
  const MlpSpec lin({1, 1}, Activation::Identity);
  const Real sigma = 0.4;
  Vector theta(2);
  theta << 0.0, 1.3;  // w = 0, b = y
  Matrix x(1, 1), y(1, 1);
  x << 2.0;
  y << 1.3;
  const Real lam = 2.0;
  const Real prior_term = 0.5 * lam * theta.squaredNorm() +
                          std::log(2.0 * M_PI / lam);  // (D/2) = 1 here
  CHECK(neg_log_joint(lin, theta, make_regression_batch(x, y),
                      Likelihood::regression(sigma), PriorSpec::scalar(lam)) ==
        doctest::Approx(0.5 * std::log(2.0 * M_PI * sigma * sigma) + prior_term)
            .epsilon(1e-12));

  // classification toy against a hand-summed cross-entropy
  const MlpSpec clf({2, 3}, Activation::Identity);
  std::mt19937_64 rng(3);
  const Vector theta_c = testutil::random_vector(rng, clf.param_count());
  Matrix inputs(2, 2);
  inputs << 0.3, -0.7, 1.1, 0.2;
  Batch batch{inputs, {2, 0}, Matrix(0, 0)};
  Real hand = 0.0;
  for (Index n = 0; n < 2; ++n) {
    const Vector f = forward(clf, theta_c, inputs.row(n)).output();
    Real sum_exp = 0.0;
    for (Index c = 0; c < 3; ++c) sum_exp += std::exp(f[c]);
    hand += std::log(sum_exp) - f[batch.labels[static_cast<std::size_t>(n)]];
  }
  const Real lam_c = 1.5;
  hand += 0.5 * lam_c * theta_c.squaredNorm() +
          0.5 * static_cast<Real>(clf.param_count()) * std::log(2.0 * M_PI / lam_c);
  CHECK(neg_log_joint(clf, theta_c, batch, Likelihood::categorical(),
                      PriorSpec::scalar(lam_c)) ==
        doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("neg_log_joint is invariant under batch order") {
  const MlpSpec spec({2, 4, 3});
  std::mt19937_64 rng(5);
  const Vector theta = init_params(spec, 8);
  Matrix inputs = testutil::random_matrix(rng, 6, 2);
  Batch batch{inputs, {0, 1, 2, 0, 1, 2}, Matrix(0, 0)};

  Matrix reversed(6, 2);
  std::vector<Index> rev_labels;
  for (Index n = 0; n < 6; ++n) {
    reversed.row(n) = inputs.row(5 - n);
    rev_labels.push_back(batch.labels[static_cast<std::size_t>(5 - n)]);
  }
  Batch flipped{reversed, rev_labels, Matrix(0, 0)};
  const auto lik = Likelihood::categorical();
  const auto prior = PriorSpec::scalar(1.0);
  CHECK(neg_log_joint(spec, theta, batch, lik, prior) ==
        doctest::Approx(neg_log_joint(spec, theta, flipped, lik, prior))
            .epsilon(1e-13));
}

TEST_CASE("grad_neg_log_joint: prior-only gradient and FD oracle") {
  const MlpSpec spec({2, 3, 2});
  std::mt19937_64 rng(9);
  const Vector theta = testutil::random_vector(rng, spec.param_count());
  const Real lambda = 1.7;

  const Vector g_prior =
      grad_neg_log_joint(spec, theta, empty_batch(spec),
                         Likelihood::categorical(), PriorSpec::scalar(lambda));
  CHECK((g_prior - lambda * theta).cwiseAbs().maxCoeff() <= 1e-14);

  // finite-difference match on a 2-layer tanh net
  const MlpSpec net({3, 5, 2}, Activation::Tanh);
  const Vector theta_n = init_params(net, 17);
  Matrix inputs = testutil::random_matrix(rng, 4, 3);
  Batch batch{inputs, {0, 1, 1, 0}, Matrix(0, 0)};
  const auto lik = Likelihood::categorical();
  const auto prior = PriorSpec::scalar(0.5);
  const Vector grad = grad_neg_log_joint(net, theta_n, batch, lik, prior);
  const Vector fd = testutil::fd_gradient(
      [&](const Vector& t) { return neg_log_joint(net, t, batch, lik, prior); },
      theta_n);
  CHECK((grad - fd).norm() / std::max(1.0, fd.norm()) <= 1e-5);
}

TEST_CASE("gradient vanishes at the ridge closed-form MAP") {
  std::mt19937_64 rng(21);
  const Matrix x = testutil::random_matrix(rng, 20, 2);
  const Vector w_true = (Vector(2) << 1.5, -0.5).finished();
  const Vector y = x * w_true + 0.1 * testutil::random_vector(rng, 20);
  const Real sigma = 0.3, lambda = 2.0;

  const Vector theta_star = testutil::ridge_solution(x, y, sigma, lambda);
  const MlpSpec lin({2, 1}, Activation::Identity, /*bias=*/false);
  const Vector grad =
      grad_neg_log_joint(lin, theta_star, make_regression_batch(x, y),
                         Likelihood::regression(sigma), PriorSpec::scalar(lambda));
  CHECK(grad.norm() <= 1e-8);
}

TEST_CASE("FD gradient property on random small nets") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 6; ++trial) {
    const Index in = 2 + static_cast<Index>(rng() % 3);
    const Index hidden = 3 + static_cast<Index>(rng() % 5);
    const Index out = 2 + static_cast<Index>(rng() % 2);
    const MlpSpec net({in, hidden, out},
                      trial % 2 == 0 ? Activation::Tanh : Activation::Identity);
    REQUIRE(net.param_count() <= 500);
    const Vector theta = init_params(net, rng());
    Matrix inputs = testutil::random_matrix(rng, 5, in);
    std::vector<Index> labels;
    for (Index n = 0; n < 5; ++n) labels.push_back(static_cast<Index>(rng() % out));
    Batch batch{inputs, labels, Matrix(0, 0)};
    const auto lik = Likelihood::categorical();
    const auto prior = PriorSpec::scalar(0.8);
    const Vector grad = grad_neg_log_joint(net, theta, batch, lik, prior);
    const Vector fd = testutil::fd_gradient(
        [&](const Vector& t) { return neg_log_joint(net, t, batch, lik, prior); },
        theta);
    CHECK((grad - fd).norm() / std::max(1.0, fd.norm()) <= 1e-5);
  }
}

TEST_CASE("train_map: ridge oracle, prior mode, determinism") {
  std::mt19937_64 rng(41);
  Matrix x = testutil::random_matrix(rng, 50, 1);
  const Vector noise = testutil::random_vector(rng, 50, 0.1);
  Matrix y = 2.0 * x + noise;

  const MlpSpec lin({1, 1}, Activation::Identity, /*bias=*/false);
  const Real sigma = 0.3, lambda = 1e-3;
  TrainConfig cfg;
  cfg.lr = 1.5e-3;
  cfg.momentum = 0.9;
  cfg.steps = 3000;
  cfg.seed = 1;
  const Vector theta = train_map(lin, make_regression_batch(x, y),
                                 Likelihood::regression(sigma),
                                 PriorSpec::scalar(lambda), cfg);
  const Vector ridge = testutil::ridge_solution(x, y, sigma, lambda);
  CHECK(std::abs(theta[0] - ridge[0]) <= 1e-4);

  // prior-only training pulls theta to the prior mode
  const MlpSpec spec({2, 3, 2});
  TrainConfig cfg2;
  cfg2.lr = 0.1;
  cfg2.momentum = 0.9;
  cfg2.steps = 500;
  cfg2.seed = 7;
  const Vector theta0 = train_map(spec, empty_batch(spec),
                                  Likelihood::categorical(), PriorSpec::scalar(1.0),
                                  cfg2);
  CHECK(theta0.cwiseAbs().maxCoeff() <= 1e-6);

  const Vector again = train_map(spec, empty_batch(spec), Likelihood::categorical(),
                                 PriorSpec::scalar(1.0), cfg2);
  CHECK((theta0 - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian: linear block structure, FD oracle, ReLU stability") {
  // f = W x: the block of output i holds x in the W row i positions
  const MlpSpec lin({3, 2}, Activation::Identity, /*bias=*/false);
  std::mt19937_64 rng(55);
  const Vector theta = testutil::random_vector(rng, lin.param_count());
  const Vector x = testutil::random_vector(rng, 3);
  const Matrix j = jacobian(lin, theta, x);
  for (Index i = 0; i < 2; ++i)
    for (Index k = 0; k < 3; ++k)
      for (Index c = 0; c < 2; ++c)
        CHECK(j(i * 3 + k, c) == doctest::Approx(c == i ? x[k] : 0.0));

  const MlpSpec net({2, 4, 4, 2}, Activation::Tanh);
  const Vector theta_n = init_params(net, 77);
  const Vector x_n = testutil::random_vector(rng, 2);
  const Matrix jac = jacobian(net, theta_n, x_n);
  for (Index c = 0; c < 2; ++c) {
    const Vector fd = testutil::fd_gradient(
        [&](const Vector& t) { return forward(net, t, x_n).output()[c]; },
        theta_n);
    CHECK((jac.col(c) - fd).norm() / std::max(1.0, fd.norm()) <= 1e-5);
  }

  const MlpSpec relu({2, 6, 2}, Activation::ReLU);
  const Vector theta_r = init_params(relu, 13);
  const Vector x_r = (Vector(2) << 0.9, -0.4).finished();
  const Matrix j1 = jacobian(relu, theta_r, x_r);
  Vector x_p = x_r;
  x_p[0] += 1e-9;
  const Matrix j2 = jacobian(relu, theta_r, x_p);
  CHECK((j1 - j2).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("identity-activation network behaves as its affine collapse") {
  const MlpSpec net({2, 3, 2}, Activation::Identity);
  std::mt19937_64 rng(61);
  const Vector theta = init_params(net, 3);

  // collapse: f(x) = W2 (W1 x + b1) + b2
  Matrix w1(3, 2), w2(2, 3);
  Vector b1(3), b2(2);
  Index at = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) w1(i, j) = theta[at++];
  for (Index i = 0; i < 3; ++i) b1[i] = theta[at++];
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) w2(i, j) = theta[at++];
  for (Index i = 0; i < 2; ++i) b2[i] = theta[at++];

  for (int trial = 0; trial < 3; ++trial) {
    const Vector x = testutil::random_vector(rng, 2);
    const Vector expected = w2 * (w1 * x + b1) + b2;
    CHECK((forward(net, theta, x).output() - expected).cwiseAbs().maxCoeff() <=
          1e-12);
  }
}

TEST_CASE("output_hessian: uniform softmax, regression, FD oracle, PSD") {
  const auto lik = Likelihood::categorical();
  const Matrix h = output_hessian(lik, Vector::Zero(2));
  CHECK(h(0, 0) == doctest::Approx(0.25));
  CHECK(h(0, 1) == doctest::Approx(-0.25));
  CHECK(h(1, 0) == doctest::Approx(-0.25));
  CHECK(h(1, 1) == doctest::Approx(0.25));

  const Matrix hr = output_hessian(Likelihood::regression(1.0), Vector::Zero(1));
  CHECK(hr(0, 0) == doctest::Approx(1.0));

  std::mt19937_64 rng(71);
  const Vector f = testutil::random_vector(rng, 3);
  // -log softmax(f)[y] has the same Hessian for every y
  const Matrix fd = testutil::fd_hessian(
      [&](const Vector& v) {
        Real sum_exp = 0.0;
        for (Index c = 0; c < 3; ++c) sum_exp += std::exp(v[c]);
        return std::log(sum_exp) - v[0];
      },
      f);
  CHECK((output_hessian(lik, f) - fd).cwiseAbs().maxCoeff() <= 1e-5);

  for (int trial = 0; trial < 10; ++trial) {
    const Vector logits = testutil::random_vector(rng, 4, 2.0);
    const Matrix oh = output_hessian(lik, logits);
    CHECK(oh.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(oh);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("backprop_stats reassemble the exact likelihood gradient") {
  const MlpSpec net({3, 4, 3}, Activation::Tanh);
  const Vector theta = init_params(net, 99);
  std::mt19937_64 rng(101);
  const Vector x = testutil::random_vector(rng, 3);
  const Index label = 1;
  const auto lik = Likelihood::categorical();

  const auto stats = backprop_stats(net, theta, x, label, Vector(), lik);
  REQUIRE(stats.size() == 2);

  // reassembled outer products against grad(neg_log_joint) minus the prior
  Matrix inputs(1, 3);
  inputs.row(0) = x;
  Batch batch{inputs, {label}, Matrix(0, 0)};
  const Real lambda = 1.0;
  const Vector like_grad =
      grad_neg_log_joint(net, theta, batch, lik, PriorSpec::scalar(lambda)) -
      lambda * theta;
  for (Index l = 0; l < 2; ++l) {
    const LayerShape shape = net.layer(l);
    const auto& st = stats[static_cast<std::size_t>(l)];
    REQUIRE(st.a.size() == shape.in + 1);
    CHECK(st.a[shape.in] == 1.0);
    for (Index i = 0; i < shape.out; ++i) {
      for (Index j = 0; j < shape.in; ++j)
        CHECK(st.g[i] * st.a[j] ==
              doctest::Approx(like_grad[shape.weight_offset + i * shape.in + j])
                  .epsilon(1e-10));
      CHECK(st.g[i] ==
            doctest::Approx(like_grad[shape.bias_offset + i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("backprop_stats corner cases") {
  // zero input, zero parameters: a-statistics carry only the augmentation 1
  const MlpSpec net({2, 3, 2}, Activation::Tanh);
  const auto stats = backprop_stats(net, Vector::Zero(net.param_count()),
                                    Vector::Zero(2), 0, Vector(),
                                    Likelihood::categorical());
  CHECK(stats[0].a.head(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(stats[0].a[2] == 1.0);

  // single linear layer: a = [x;1], g = softmax(f) - onehot(y)
  const MlpSpec lin({2, 3}, Activation::Identity);
  std::mt19937_64 rng(103);
  const Vector theta = testutil::random_vector(rng, lin.param_count());
  const Vector x = testutil::random_vector(rng, 2);
  const Index y = 2;
  const auto st = backprop_stats(lin, theta, x, y, Vector(),
                                 Likelihood::categorical());
  CHECK((st[0].a.head(2) - x).cwiseAbs().maxCoeff() == 0.0);
  const Vector f = forward(lin, theta, x).output();
  Real sum_exp = 0.0;
  for (Index c = 0; c < 3; ++c) sum_exp += std::exp(f[c]);
  for (Index c = 0; c < 3; ++c) {
    const Real expected = std::exp(f[c]) / sum_exp - (c == y ? 1.0 : 0.0);
    CHECK(st[0].g[c] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("invalid shapes are rejected") {
  const MlpSpec spec({2, 2});
  try {
    forward(spec, Vector::Zero(spec.param_count()), Vector::Zero(3));
    FAIL("expected InvalidInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidInput);
  }
}
