#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace mpcil::policy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Feed-forward network with ReLU hidden layers and an affine tanh output map
/// that keeps the control strictly inside [u_lb, u_ub]. All arithmetic is
/// 64-bit: the Q-loss gradients that flow through here feed solver pipelines
/// with 1e-6 tolerances.
struct MlpPolicy {
  std::vector<int> widths;        // n_x, hidden..., n_u
  std::vector<MatrixXd> weights;  // layer l: widths[l+1] x widths[l]
  std::vector<VectorXd> biases;
  VectorXd u_lb, u_ub;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }
};

/// Weight-shaped gradient accumulator.
struct Gradients {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;

  void setZero();
  void add_scaled(const Gradients& other, double scale);
  double max_abs() const;
};

Gradients zero_like(const MlpPolicy& policy);

/// He-uniform hidden layers (bound sqrt(6/fan_in)), uniform +-sqrt(1/fan_in)
/// output layer, zero biases.
MlpPolicy make_mlp(const std::vector<int>& widths, const VectorXd& u_lb, const VectorXd& u_ub,
                   std::uint64_t seed);

VectorXd forward(const MlpPolicy& policy, const VectorXd& x);

/// Mean over the batch of dpi/dw' * upstream; `upstreams[i]` is the loss
/// gradient with respect to the policy output at `inputs[i]`.
Gradients backward(const MlpPolicy& policy, const std::vector<VectorXd>& inputs,
                   const std::vector<VectorXd>& upstreams);

/// Single-sample contribution added into `accum` with weight `scale`.
void backward_accumulate(const MlpPolicy& policy, const VectorXd& x, const VectorXd& upstream,
                         double scale, Gradients& accum);

struct AdamState {
  std::vector<MatrixXd> m_w, v_w;
  std::vector<VectorXd> m_b, v_b;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(const MlpPolicy& policy, double lr);

/// Bias-corrected Adam step in place.
void adam_update(MlpPolicy& policy, AdamState& state, const Gradients& grad);

/// Textual weights file, bit-exact round trip:
///   mlp v1 <n_x> <d> <w_1..w_d> <n_u> <u_lb...> <u_ub...>
/// followed by one block per layer (weight rows, then the bias line), blocks
/// separated by blank lines. Throws ParseError with a line number on
/// malformed input.
void save_weights(const MlpPolicy& policy, const std::string& path);
MlpPolicy load_weights(const std::string& path);

/// Adam state persistence for checkpointing, same numeric format.
void save_adam(const AdamState& state, const std::string& path);
AdamState load_adam(const std::string& path, const MlpPolicy& policy);

}  // namespace mpcil::policy
