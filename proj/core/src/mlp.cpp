#include "driftflow/mlp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "driftflow/rng.hpp"

namespace driftflow {

namespace {

constexpr double kGeluSlope = 1.702;

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

void MlpShape::validate() const {
  if (latent_dim < 1 || out_dim < 1 || hidden < 1 || layers < 0)
    throw std::invalid_argument("MLP dimensions must be positive");
  if (embed_dim != hidden)
    throw std::invalid_argument("embedding width must equal the residual width");
  if (embed_dim < latent_dim) throw std::invalid_argument("embedding narrower than latent dimension");
}

MlpParams::MlpParams(const MlpShape& shape) : shape_(shape), freqs_(embedding_frequencies(shape)) {
  shape.validate();
  const Eigen::Index w = shape.hidden;
  theta_ = Vector::Zero(shape.layers * (w * w + w) + shape.out_dim * w + shape.out_dim);
}

Eigen::Index MlpParams::weight_offset(int layer) const {
  const Eigen::Index w = shape_.hidden;
  return static_cast<Eigen::Index>(layer) * (w * w + w);
}

Eigen::Index MlpParams::bias_offset(int layer) const {
  const Eigen::Index w = shape_.hidden;
  if (layer == shape_.layers) return weight_offset(layer) + shape_.out_dim * w;
  return weight_offset(layer) + w * w;
}

MlpParams::MatMap MlpParams::weight(int l) {
  return MatMap(theta_.data() + weight_offset(l), shape_.hidden, shape_.hidden);
}
MlpParams::ConstMatMap MlpParams::weight(int l) const {
  return ConstMatMap(theta_.data() + weight_offset(l), shape_.hidden, shape_.hidden);
}
MlpParams::VecMap MlpParams::bias(int l) { return VecMap(theta_.data() + bias_offset(l), shape_.hidden); }
MlpParams::ConstVecMap MlpParams::bias(int l) const {
  return ConstVecMap(theta_.data() + bias_offset(l), shape_.hidden);
}
MlpParams::MatMap MlpParams::out_weight() {
  return MatMap(theta_.data() + weight_offset(shape_.layers), shape_.out_dim, shape_.hidden);
}
MlpParams::ConstMatMap MlpParams::out_weight() const {
  return ConstMatMap(theta_.data() + weight_offset(shape_.layers), shape_.out_dim, shape_.hidden);
}
MlpParams::VecMap MlpParams::out_bias() {
  return VecMap(theta_.data() + bias_offset(shape_.layers), shape_.out_dim);
}
MlpParams::ConstVecMap MlpParams::out_bias() const {
  return ConstVecMap(theta_.data() + bias_offset(shape_.layers), shape_.out_dim);
}

std::vector<double> embedding_frequencies(const MlpShape& shape) {
  const int F = shape.embed_dim / (2 * shape.latent_dim);
  std::vector<double> f(F);
  for (int k = 0; k < F; ++k) f[k] = std::ldexp(std::numbers::pi / 8.0, k);
  return f;
}

MlpParams init_mlp(const MlpShape& shape, std::uint64_t seed) {
  MlpParams p(shape);
  CounterRng rng(seed);
  const double a_hidden = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  for (int l = 0; l <= shape.layers; ++l) {
    auto fill = [&](auto W) {
      for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = rng.uniform(-a_hidden, a_hidden);
    };
    if (l < shape.layers)
      fill(p.weight(l));
    else
      fill(p.out_weight());
  }
  return p;
}

Matrix sin_embed(const MlpParams& params, const Matrix& eps) {
  const auto& s = params.shape();
  if (eps.cols() != s.latent_dim) throw std::invalid_argument("latent batch has wrong dimension");
  const auto& freqs = params.frequencies();
  const int F = static_cast<int>(freqs.size());
  const int used = 2 * s.latent_dim * F;
  Matrix h(eps.rows(), s.embed_dim);
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    for (int j = 0; j < s.latent_dim; ++j) {
      for (int k = 0; k < F; ++k) {
        const double t = freqs[k] * eps(i, j);
        h(i, 2 * (j * F + k)) = std::sin(t);
        h(i, 2 * (j * F + k) + 1) = std::cos(t);
      }
    }
    for (int slot = used; slot < s.embed_dim; ++slot) h(i, slot) = eps(i, (slot - used) % s.latent_dim);
  }
  return h;
}

namespace {

Matrix run_forward(const MlpParams& p, const Matrix& eps, MlpTape* trace) {
  const auto& s = p.shape();
  Matrix h = sin_embed(p, eps);
  if (trace) trace->h.push_back(h);
  for (int l = 0; l < s.layers; ++l) {
    Matrix pre = h * p.weight(l).transpose();
    pre.rowwise() += p.bias(l).transpose();
    h.array() += pre.array() * (kGeluSlope * pre.array()).unaryExpr(&sigmoid);
    if (trace) {
      trace->pre.push_back(std::move(pre));
      trace->h.push_back(h);
    }
  }
  Matrix out = h * p.out_weight().transpose();
  out.rowwise() += p.out_bias().transpose();
  return out;
}

}  // namespace

Matrix forward(const MlpParams& params, const Matrix& eps) { return run_forward(params, eps, nullptr); }

Matrix forward(const MlpParams& params, const Matrix& eps, MlpTape& tape) {
  tape = {};
  return run_forward(params, eps, &tape);
}

LossGrad loss_and_grad(const MlpParams& params, const Matrix& eps, const Matrix& V) {
  MlpTape tape;
  forward(params, eps, tape);
  return loss_and_grad(params, tape, V);
}

LossGrad loss_and_grad(const MlpParams& params, const MlpTape& tr, const Matrix& V) {
  const auto& s = params.shape();
  if (tr.h.size() != static_cast<size_t>(s.layers) + 1) throw std::invalid_argument("tape does not match parameters");
  if (V.rows() != tr.h.back().rows() || V.cols() != s.out_dim)
    throw std::invalid_argument("drift target shape does not match generator output");
  const double n = static_cast<double>(V.rows());

  LossGrad res;
  res.loss = V.rowwise().squaredNorm().sum() / n;
  res.grad = Vector::Zero(params.size());
  MlpParams gp(s);  // gradient buffer with the same layout

  const Matrix g_out = (-2.0 / n) * V;
  gp.out_weight() = g_out.transpose() * tr.h.back();
  gp.out_bias() = g_out.colwise().sum().transpose();
  Matrix g = g_out * params.out_weight();  // dL/dh_L

  for (int l = s.layers - 1; l >= 0; --l) {
    const auto& pre = tr.pre[l];
    const Eigen::ArrayXXd sg = (kGeluSlope * pre.array()).unaryExpr(&sigmoid);
    const Eigen::ArrayXXd dact = sg + kGeluSlope * pre.array() * sg * (1.0 - sg);
    const Matrix g_pre = (g.array() * dact).matrix();
    gp.weight(l) = g_pre.transpose() * tr.h[l];
    gp.bias(l) = g_pre.colwise().sum().transpose();
    g += g_pre * params.weight(l);
  }
  res.grad = std::move(gp.flat());
  return res;
}

AdamState AdamState::for_params(const MlpParams& params) {
  AdamState s;
  s.m = Vector::Zero(params.size());
  s.v = Vector::Zero(params.size());
  return s;
}

void adam_step(Vector& theta, AdamState& st, const Vector& grad, double lr) {
  if (grad.size() != theta.size() || st.m.size() != theta.size() || st.v.size() != theta.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++st.step;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  theta.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

nlohmann::json to_json(const MlpParams& params) {
  const auto& s = params.shape();
  nlohmann::json j;
  j["format"] = "driftflow-mlp-v1";
  j["shape"] = {{"latent_dim", s.latent_dim}, {"out_dim", s.out_dim}, {"embed_dim", s.embed_dim},
                {"hidden", s.hidden},         {"layers", s.layers}};
  j["num_params"] = params.size();
  j["frequencies"] = params.frequencies();
  j["theta"] = std::vector<double>(params.flat().data(), params.flat().data() + params.size());
  return j;
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  const auto& js = j.at("shape");
  MlpShape s;
  s.latent_dim = js.at("latent_dim").get<int>();
  s.out_dim = js.at("out_dim").get<int>();
  s.embed_dim = js.at("embed_dim").get<int>();
  s.hidden = js.at("hidden").get<int>();
  s.layers = js.at("layers").get<int>();
  MlpParams p(s);
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(theta.size()) != p.size())
    throw std::invalid_argument("checkpoint parameter count does not match its shape header");
  p.flat() = Eigen::Map<const Vector>(theta.data(), p.size());
  return p;
}

}  // namespace driftflow
