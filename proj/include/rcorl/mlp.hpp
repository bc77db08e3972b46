#pragma once

#include "rcorl/container.hpp"
#include "rcorl/types.hpp"

#include <string>
#include <vector>

namespace rcorl {

enum class Activation { kRelu, kTanh, kIdentity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Dense feedforward network. weights[k] is layer_dims[k+1] x layer_dims[k],
// biases[k] has length layer_dims[k+1]. Hidden layers share one activation,
// the output layer has its own (identity or tanh).
struct Mlp {
  std::vector<int> layer_dims;
  std::vector<Mat> weights;
  std::vector<Vec> biases;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kIdentity;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }
};

/// Seeded init, uniform in +-1/sqrt(fan_in) per layer (weights then bias,
/// weight entries filled in column-major order).
Mlp make_mlp(const std::vector<int>& layer_dims, Activation hidden, Activation output, Rng& rng);

/// Throws if parameter shapes are inconsistent or non-finite.
void validate_mlp(const Mlp& net);

Vec mlp_forward(const Mlp& net, const Vec& input);
Mat mlp_forward(const Mlp& net, const Mat& inputs);  // one sample per column

struct MlpGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

MlpGrads zero_grads(const Mlp& net);

struct AdamState {
  std::vector<Mat> m_weights, v_weights;
  std::vector<Vec> m_biases, v_biases;
  long step_count = 0;
  double learning_rate = 3e-4;
  double beta_m = 0.9;
  double beta_v = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam(const Mlp& net, double learning_rate);

/// Standard Adam with bias correction; increments step_count. Throws a
/// numeric error naming the layer if a gradient entry is non-finite.
void adam_step(Mlp& params, const MlpGrads& grads, AdamState& state);

/// target <- tau * online + (1 - tau) * target, per parameter.
void soft_update(Mlp& target, const Mlp& online, double tau);

// Parameter serialization into the shared container format.
void append_mlp_arrays(std::vector<NamedArray>& arrays, const Mlp& net, const std::string& prefix);
json mlp_manifest(const Mlp& net);
Mlp mlp_from_container(const Container& c, const json& manifest, const std::string& prefix);

}  // namespace rcorl
