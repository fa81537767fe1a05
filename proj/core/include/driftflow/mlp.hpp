#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "driftflow/types.hpp"

namespace driftflow {

struct MlpShape {
  int latent_dim = 2;
  int out_dim = 2;
  int embed_dim = 128;  // sinusoidal embedding width; equals the residual width
  int hidden = 128;
  int layers = 5;  // residual blocks

  void validate() const;
};

/// Residual MLP generator
///
///   h_0     = embed(eps)
///   h_{l+1} = h_l + act(W_l h_l + b_l),  l = 0..layers-1
///   x       = W_out h_L + b_out
///
/// with act(t) = t * sigmoid(1.702 t). All parameters live in one flat
/// vector so optimizers and gradient checks can treat them uniformly; layer
/// views are Eigen maps into it.
class MlpParams {
 public:
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Vector>;
  using ConstVecMap = Eigen::Map<const Vector>;

  MlpParams() = default;
  explicit MlpParams(const MlpShape& shape);

  const MlpShape& shape() const { return shape_; }
  const std::vector<double>& frequencies() const { return freqs_; }

  Vector& flat() { return theta_; }
  const Vector& flat() const { return theta_; }
  Eigen::Index size() const { return theta_.size(); }

  MatMap weight(int layer);
  ConstMatMap weight(int layer) const;
  VecMap bias(int layer);
  ConstVecMap bias(int layer) const;
  MatMap out_weight();
  ConstMatMap out_weight() const;
  VecMap out_bias();
  ConstVecMap out_bias() const;

  /// Offsets into flat() for a layer's weights (layer == layers means output).
  Eigen::Index weight_offset(int layer) const;
  Eigen::Index bias_offset(int layer) const;

 private:
  MlpShape shape_{};
  std::vector<double> freqs_;
  Vector theta_;
};

/// Frequencies used by the sinusoidal embedding: omega_k = 2^k * pi / 8.
std::vector<double> embedding_frequencies(const MlpShape& shape);

/// Weights uniform(+-1/sqrt(fan_in)), biases zero.
MlpParams init_mlp(const MlpShape& shape, std::uint64_t seed);

/// For coordinate j and frequency k the features sin(omega_k z_j), cos(omega_k z_j)
/// occupy slots 2(jF + k) and 2(jF + k) + 1; remaining slots hold raw
/// coordinates z_{s mod latent_dim}.
Matrix sin_embed(const MlpParams& params, const Matrix& eps);

Matrix forward(const MlpParams& params, const Matrix& eps);

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // same layout as MlpParams::flat()
};

/// Stop-gradient drifting loss L = (1/N) sum_i |x_i - sg(x_i + V_i)|^2 and its
/// parameter gradient. V is a constant target; dL/dx_i = -(2/N) V_i.
LossGrad loss_and_grad(const MlpParams& params, const Matrix& eps, const Matrix& V);

/// Activations saved by a forward pass for a later backward pass.
struct MlpTape {
  std::vector<Matrix> h;    // h_0 .. h_L
  std::vector<Matrix> pre;  // pre-activation of each block
};

/// forward() that also records the tape.
Matrix forward(const MlpParams& params, const Matrix& eps, MlpTape& tape);
/// Gradient of the stop-gradient loss from a recorded tape.
LossGrad loss_and_grad(const MlpParams& params, const MlpTape& tape, const Matrix& V);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& params);
};

/// Bias-corrected Adam update on a flat parameter vector.
void adam_step(Vector& theta, AdamState& state, const Vector& grad, double lr);
inline void adam_step(MlpParams& params, AdamState& state, const Vector& grad, double lr) {
  adam_step(params.flat(), state, grad, lr);
}

nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace driftflow
