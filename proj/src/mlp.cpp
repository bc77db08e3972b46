#include "rcorl/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace rcorl {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  throw std::logic_error("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + name);
}

namespace {

void apply_activation(Mat& h, Activation a) {
  switch (a) {
    case Activation::kRelu: h = h.array().max(0.0); break;
    case Activation::kTanh: h = h.array().tanh(); break;
    case Activation::kIdentity: break;
  }
}

}  // namespace

Mlp make_mlp(const std::vector<int>& layer_dims, Activation hidden, Activation output, Rng& rng) {
  if (layer_dims.size() < 2) throw std::invalid_argument("make_mlp: need at least 2 layer dims");
  for (int d : layer_dims)
    if (d <= 0) throw std::invalid_argument("make_mlp: layer dims must be positive");
  if (output != Activation::kIdentity && output != Activation::kTanh)
    throw std::invalid_argument("make_mlp: output activation must be identity or tanh");
  if (hidden != Activation::kRelu && hidden != Activation::kTanh)
    throw std::invalid_argument("make_mlp: hidden activation must be relu or tanh");

  Mlp net;
  net.layer_dims = layer_dims;
  net.hidden_activation = hidden;
  net.output_activation = output;
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_dims[k]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat w(layer_dims[k + 1], layer_dims[k]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    Vec b(layer_dims[k + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = dist(rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

void validate_mlp(const Mlp& net) {
  if (net.layer_dims.size() < 2 || net.weights.size() != net.layer_dims.size() - 1 ||
      net.biases.size() != net.weights.size())
    throw std::invalid_argument("mlp: inconsistent layer structure");
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    if (net.weights[k].rows() != net.layer_dims[k + 1] || net.weights[k].cols() != net.layer_dims[k])
      throw std::invalid_argument("mlp: weight shape mismatch at layer " + std::to_string(k));
    if (net.biases[k].size() != net.layer_dims[k + 1])
      throw std::invalid_argument("mlp: bias shape mismatch at layer " + std::to_string(k));
    if (!net.weights[k].allFinite() || !net.biases[k].allFinite())
      throw std::invalid_argument("mlp: non-finite parameters at layer " + std::to_string(k));
  }
}

Mat mlp_forward(const Mlp& net, const Mat& inputs) {
  if (inputs.rows() != net.input_dim())
    throw std::invalid_argument("mlp_forward: input dim " + std::to_string(inputs.rows()) +
                                ", expected " + std::to_string(net.input_dim()));
  Mat h = inputs;
  for (int k = 0; k < net.layer_count(); ++k) {
    Mat z = (net.weights[k] * h).colwise() + net.biases[k];
    h = std::move(z);
    apply_activation(h, k + 1 < net.layer_count() ? net.hidden_activation : net.output_activation);
  }
  return h;
}

Vec mlp_forward(const Mlp& net, const Vec& input) {
  return Vec(mlp_forward(net, Mat(input)));
}

MlpGrads zero_grads(const Mlp& net) {
  MlpGrads g;
  for (int k = 0; k < net.layer_count(); ++k) {
    g.weights.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
    g.biases.push_back(Vec::Zero(net.biases[k].size()));
  }
  return g;
}

AdamState make_adam(const Mlp& net, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (int k = 0; k < net.layer_count(); ++k) {
    s.m_weights.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
    s.v_weights.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
    s.m_biases.push_back(Vec::Zero(net.biases[k].size()));
    s.v_biases.push_back(Vec::Zero(net.biases[k].size()));
  }
  return s;
}

namespace {

template <typename T>
void adam_update(T& p, const T& g, T& m, T& v, const AdamState& s, double mhat_scale,
                 double vhat_scale) {
  m = s.beta_m * m + (1.0 - s.beta_m) * g;
  v = s.beta_v * v + (1.0 - s.beta_v) * g.array().square().matrix();
  p.array() -= s.learning_rate * (m.array() * mhat_scale) /
               ((v.array() * vhat_scale).sqrt() + s.epsilon);
}

}  // namespace

void adam_step(Mlp& params, const MlpGrads& grads, AdamState& state) {
  if (grads.weights.size() != params.weights.size())
    throw std::invalid_argument("adam_step: gradient layer count mismatch");
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    if (!grads.weights[k].allFinite() || !grads.biases[k].allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in layer " + std::to_string(k));
    if (grads.weights[k].rows() != params.weights[k].rows() ||
        grads.weights[k].cols() != params.weights[k].cols() ||
        grads.biases[k].size() != params.biases[k].size())
      throw std::invalid_argument("adam_step: gradient shape mismatch in layer " + std::to_string(k));
  }
  state.step_count += 1;
  const double mhat_scale = 1.0 / (1.0 - std::pow(state.beta_m, double(state.step_count)));
  const double vhat_scale = 1.0 / (1.0 - std::pow(state.beta_v, double(state.step_count)));
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    adam_update(params.weights[k], grads.weights[k], state.m_weights[k], state.v_weights[k], state,
                mhat_scale, vhat_scale);
    adam_update(params.biases[k], grads.biases[k], state.m_biases[k], state.v_biases[k], state,
                mhat_scale, vhat_scale);
  }
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (target.layer_dims != online.layer_dims)
    throw std::invalid_argument("soft_update: architecture mismatch");
  for (std::size_t k = 0; k < target.weights.size(); ++k) {
    target.weights[k] = tau * online.weights[k] + (1.0 - tau) * target.weights[k];
    target.biases[k] = tau * online.biases[k] + (1.0 - tau) * target.biases[k];
  }
}

void append_mlp_arrays(std::vector<NamedArray>& arrays, const Mlp& net, const std::string& prefix) {
  for (int k = 0; k < net.layer_count(); ++k) {
    arrays.push_back({prefix + "_w" + std::to_string(k), net.weights[k]});
    arrays.push_back({prefix + "_b" + std::to_string(k), Mat(net.biases[k])});
  }
}

json mlp_manifest(const Mlp& net) {
  json j;
  j["layer_dims"] = net.layer_dims;
  j["hidden_activation"] = activation_name(net.hidden_activation);
  j["output_activation"] = activation_name(net.output_activation);
  return j;
}

Mlp mlp_from_container(const Container& c, const json& manifest, const std::string& prefix) {
  Mlp net;
  net.layer_dims = manifest.at("layer_dims").get<std::vector<int>>();
  net.hidden_activation = activation_from_name(manifest.at("hidden_activation").get<std::string>());
  net.output_activation = activation_from_name(manifest.at("output_activation").get<std::string>());
  for (std::size_t k = 0; k + 1 < net.layer_dims.size(); ++k) {
    net.weights.push_back(c.array(prefix + "_w" + std::to_string(k)));
    net.biases.push_back(c.array(prefix + "_b" + std::to_string(k)).col(0));
  }
  validate_mlp(net);
  return net;
}

}  // namespace rcorl
