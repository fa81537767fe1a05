#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "driftflow/mlp.hpp"
#include "driftflow/rng.hpp"

using namespace driftflow;

namespace {

MlpShape small_shape() {
  MlpShape s;
  s.latent_dim = 2;
  s.out_dim = 2;
  s.embed_dim = 16;
  s.hidden = 16;
  s.layers = 3;
  return s;
}

Matrix latents(std::uint64_t seed, Eigen::Index n, int d) {
  CounterRng rng(seed);
  return standard_normal(rng, n, d);
}

double act(double t) { return t / (1.0 + std::exp(-1.702 * t)); }

}  // namespace

TEST(MlpShape, Validation) {
  MlpShape s = small_shape();
  s.embed_dim = 8;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_shape();
  s.layers = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Embedding, FrequencyLayout) {
  MlpShape s = small_shape();
  s.embed_dim = 18;
  s.hidden = 18;
  const auto f = embedding_frequencies(s);
  ASSERT_EQ(f.size(), 4u);  // floor(18 / (2 * 2))
  for (size_t k = 0; k < f.size(); ++k) EXPECT_DOUBLE_EQ(f[k], std::ldexp(1.0, static_cast<int>(k)) * std::numbers::pi / 8);
  MlpParams p(s);
  Matrix eps(1, 2);
  eps << 0.3, -1.1;
  const Matrix h = sin_embed(p, eps);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 4; ++k) {
      EXPECT_DOUBLE_EQ(h(0, 2 * (j * 4 + k)), std::sin(f[k] * eps(0, j)));
      EXPECT_DOUBLE_EQ(h(0, 2 * (j * 4 + k) + 1), std::cos(f[k] * eps(0, j)));
    }
  // two leftover slots hold the raw latent
  EXPECT_EQ(h(0, 16), 0.3);
  EXPECT_EQ(h(0, 17), -1.1);
}

TEST(Init, UniformFanInAndZeroBias) {
  const MlpShape s = small_shape();
  const MlpParams p = init_mlp(s, 3);
  const double bound = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  for (int l = 0; l < s.layers; ++l) {
    EXPECT_LE(p.weight(l).cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(p.weight(l).cwiseAbs().maxCoeff(), 0.5 * bound);
    EXPECT_EQ(p.bias(l).norm(), 0.0);
  }
  EXPECT_LE(p.out_weight().cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.out_bias().norm(), 0.0);
  const MlpParams q = init_mlp(s, 3);
  EXPECT_TRUE((p.flat().array() == q.flat().array()).all());
}

TEST(Forward, ZeroParametersGiveZeroOutput) {
  const MlpParams p(small_shape());
  EXPECT_EQ(forward(p, latents(1, 10, 2)).norm(), 0.0);
}

TEST(Forward, SingleBlockHandComputation) {
  MlpShape s;
  s.latent_dim = 1;
  s.out_dim = 1;
  s.embed_dim = 2;
  s.hidden = 2;
  s.layers = 1;
  MlpParams p(s);  // F = 1: features sin(pi z / 8), cos(pi z / 8)
  p.weight(0) << 0.5, -0.25, 1.0, 0.75;
  p.bias(0) << 0.1, -0.2;
  p.out_weight() << 2.0, -1.0;
  p.out_bias() << 0.3;
  const double z = 0.7;
  const double h0[2] = {std::sin(std::numbers::pi / 8 * z), std::cos(std::numbers::pi / 8 * z)};
  const double a0 = 0.5 * h0[0] - 0.25 * h0[1] + 0.1;
  const double a1 = 1.0 * h0[0] + 0.75 * h0[1] - 0.2;
  const double h1[2] = {h0[0] + act(a0), h0[1] + act(a1)};
  const double expect = 2.0 * h1[0] - 1.0 * h1[1] + 0.3;
  Matrix eps(1, 1);
  eps << z;
  EXPECT_NEAR(forward(p, eps)(0, 0), expect, 1e-15);
}

TEST(Forward, Deterministic) {
  const MlpParams p = init_mlp(small_shape(), 5);
  const Matrix eps = latents(6, 50, 2);
  EXPECT_TRUE((forward(p, eps).array() == forward(p, eps).array()).all());
}

TEST(Forward, ZeroHiddenWeightsReduceToSkipPath) {
  MlpParams p = init_mlp(small_shape(), 7);
  for (int l = 0; l < p.shape().layers; ++l) p.weight(l).setZero();
  const Matrix eps = latents(8, 20, 2);
  const Matrix expect = (sin_embed(p, eps) * p.out_weight().transpose()).rowwise() + p.out_bias().transpose();
  EXPECT_LT((forward(p, eps) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Forward, ShapeMismatchThrows) {
  const MlpParams p = init_mlp(small_shape(), 1);
  EXPECT_THROW(forward(p, latents(1, 4, 3)), std::invalid_argument);
}

TEST(LossAndGrad, ZeroDriftIsStationary) {
  const MlpParams p = init_mlp(small_shape(), 9);
  const LossGrad lg = loss_and_grad(p, latents(10, 32, 2), Matrix::Zero(32, 2));
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_EQ(lg.grad.norm(), 0.0);
}

TEST(LossAndGrad, SingleParticleArithmetic) {
  MlpShape s = small_shape();
  s.out_dim = 1;
  const MlpParams p = init_mlp(s, 11);
  Matrix V(1, 1);
  V << 3.0;
  const LossGrad lg = loss_and_grad(p, latents(12, 1, 2), V);
  EXPECT_DOUBLE_EQ(lg.loss, 9.0);
  // the output bias gradient equals dL/dx
  EXPECT_DOUBLE_EQ(lg.grad[p.bias_offset(s.layers)], -6.0);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  const MlpShape s = small_shape();
  MlpParams p = init_mlp(s, 13);
  // nonzero biases so every parameter family is exercised
  CounterRng rng(14);
  for (int l = 0; l < s.layers; ++l)
    for (auto& b : p.bias(l)) b = 0.1 * rng.normal();
  const Matrix eps = latents(15, 24, 2);
  const Matrix V = latents(16, 24, 2);
  const LossGrad lg = loss_and_grad(p, eps, V);
  // Stop-gradient loss with the transport target frozen at the current parameters.
  const Matrix target = forward(p, eps) + V;
  auto surrogate = [&](const MlpParams& q) { return (forward(q, eps) - target).rowwise().squaredNorm().mean(); };
  const double h = 1e-5;
  for (int t = 0; t < 50; ++t) {
    const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.size())));
    MlpParams a = p, b = p;
    a.flat()[k] += h;
    b.flat()[k] -= h;
    const double fd = (surrogate(a) - surrogate(b)) / (2 * h);
    const double g = lg.grad[k];
    EXPECT_LT(std::abs(fd - g) / std::max(std::abs(g), 1e-6), 1e-5) << "parameter " << k;
  }
}

TEST(LossAndGrad, TapeMatchesDirect) {
  const MlpParams p = init_mlp(small_shape(), 17);
  const Matrix eps = latents(18, 16, 2), V = latents(19, 16, 2);
  MlpTape tape;
  const Matrix x = forward(p, eps, tape);
  EXPECT_TRUE((x.array() == forward(p, eps).array()).all());
  const LossGrad a = loss_and_grad(p, tape, V), b = loss_and_grad(p, eps, V);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_TRUE((a.grad.array() == b.grad.array()).all());
}

TEST(LossAndGrad, DoesNotTouchDrift) {
  const MlpParams p = init_mlp(small_shape(), 20);
  const Matrix V = latents(21, 8, 2);
  const Matrix copy = V;
  loss_and_grad(p, latents(22, 8, 2), V);
  EXPECT_TRUE((V.array() == copy.array()).all());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Vector theta = Vector::LinSpaced(5, -1, 1);
  const Vector before = theta;
  AdamState st;
  st.m = Vector::Zero(5);
  st.v = Vector::Zero(5);
  adam_step(theta, st, Vector::Zero(5), 0.1);
  EXPECT_TRUE((theta.array() == before.array()).all());
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Vector theta = Vector::Constant(1, 2.0);
  AdamState st;
  st.m = Vector::Zero(1);
  st.v = Vector::Zero(1);
  adam_step(theta, st, Vector::Constant(1, 1.0), 0.1);
  EXPECT_NEAR(theta[0], 2.0 - 0.1, 1e-8);
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
  // Scalar simulation of the recursion as an oracle.
  Vector theta = Vector::Constant(1, 0.0);
  AdamState st;
  st.m = Vector::Zero(1);
  st.v = Vector::Zero(1);
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 100; ++t) {
    const double prev = theta[0];
    adam_step(theta, st, Vector::Constant(1, 0.5), 0.01);
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_LT(theta[0], prev);
    EXPECT_NEAR(theta[0], x, 1e-14);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  Vector theta = Vector::Zero(3);
  AdamState st;
  st.m = Vector::Zero(2);
  st.v = Vector::Zero(2);
  EXPECT_THROW(adam_step(theta, st, Vector::Zero(3), 0.1), std::invalid_argument);
}

TEST(MlpJson, RoundTrip) {
  const MlpParams p = init_mlp(small_shape(), 23);
  const MlpParams q = mlp_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_TRUE((p.flat().array() == q.flat().array()).all());
  EXPECT_EQ(q.shape().layers, p.shape().layers);
  EXPECT_EQ(q.frequencies(), p.frequencies());
}
