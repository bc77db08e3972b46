#include "rcorl/policy.hpp"

#include <stdexcept>

namespace rcorl {

Mat ContinuousPolicy::act(const Mat& rich_states) const {
  Mat x = apply_norm(obs_norm, observe(spec, rich_states));
  if (predictor) x = mlp_forward(*predictor, x);
  return mlp_forward(actor, x);
}

Vec ContinuousPolicy::act(const Vec& rich_state) const { return Vec(act(Mat(rich_state))); }

Mat DiscretePolicy::q_values(const Mat& rich_states) const {
  return mlp_forward(qnet, apply_norm(obs_norm, observe(spec, rich_states)));
}

Vec DiscretePolicy::q_values(const Vec& rich_state) const {
  return Vec(q_values(Mat(rich_state)));
}

int DiscretePolicy::act(const Vec& rich_state) const { return greedy_action(q_values(rich_state)); }

int greedy_action(const Vec& q) {
  if (q.size() == 0) throw std::invalid_argument("greedy_action: empty value vector");
  int best = 0;
  for (int i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

int epsilon_greedy(const Vec& q, double epsilon, Rng& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(q.size()) - 1);
    return pick(rng);
  }
  return greedy_action(q);
}

namespace {

void append_norm(std::vector<NamedArray>& arrays, const NormStats& norm,
                 const std::string& prefix) {
  arrays.push_back({prefix + "_mean", Mat(norm.mean)});
  arrays.push_back({prefix + "_std", Mat(norm.std)});
}

NormStats norm_from(const Container& c, const std::string& prefix) {
  return {c.array(prefix + "_mean").col(0), c.array(prefix + "_std").col(0)};
}

}  // namespace

void save_policy(const std::filesystem::path& path, const Policy& policy) {
  json manifest;
  manifest["file_kind"] = "policy";
  std::vector<NamedArray> arrays;
  if (const auto* p = std::get_if<ContinuousPolicy>(&policy)) {
    manifest["policy_type"] = "continuous";
    manifest["env"] = env_info_to_json(p->env);
    manifest["feature_spec"] = feature_spec_to_json(p->spec);
    manifest["actor"] = mlp_manifest(p->actor);
    manifest["has_predictor"] = p->predictor.has_value();
    if (p->predictor) manifest["predictor"] = mlp_manifest(*p->predictor);
    append_norm(arrays, p->obs_norm, "obs_norm");
    append_mlp_arrays(arrays, p->actor, "actor");
    if (p->predictor) append_mlp_arrays(arrays, *p->predictor, "predictor");
  } else {
    const auto& d = std::get<DiscretePolicy>(policy);
    manifest["policy_type"] = "discrete";
    manifest["env"] = env_info_to_json(d.env);
    manifest["feature_spec"] = feature_spec_to_json(d.spec);
    manifest["qnet"] = mlp_manifest(d.qnet);
    append_norm(arrays, d.obs_norm, "obs_norm");
    append_mlp_arrays(arrays, d.qnet, "qnet");
  }
  write_container(path, manifest, arrays);
}

Policy load_policy(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.manifest.value("file_kind", "") != "policy")
    throw std::runtime_error("load_policy: not a policy file: " + path.string());
  const std::string type = c.manifest.at("policy_type").get<std::string>();
  if (type == "continuous") {
    ContinuousPolicy p;
    p.env = env_info_from_json(c.manifest.at("env"));
    p.spec = feature_spec_from_json(c.manifest.at("feature_spec"));
    p.obs_norm = norm_from(c, "obs_norm");
    p.actor = mlp_from_container(c, c.manifest.at("actor"), "actor");
    if (c.manifest.value("has_predictor", false))
      p.predictor = mlp_from_container(c, c.manifest.at("predictor"), "predictor");
    return p;
  }
  if (type == "discrete") {
    DiscretePolicy p;
    p.env = env_info_from_json(c.manifest.at("env"));
    p.spec = feature_spec_from_json(c.manifest.at("feature_spec"));
    p.obs_norm = norm_from(c, "obs_norm");
    p.qnet = mlp_from_container(c, c.manifest.at("qnet"), "qnet");
    return p;
  }
  throw std::runtime_error("load_policy: unknown policy type: " + type);
}

}  // namespace rcorl
