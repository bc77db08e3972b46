#include "rcorl/eval.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <stdexcept>

#include "rcorl/tape.hpp"

namespace rcorl {

namespace {

double continuous_episode(const ContinuousPolicy& p, Rng& rng) {
  PointReachEnv env;
  Vec s = env.reset(rng);
  double total = 0.0;
  while (true) {
    auto out = env.step(p.act(s));
    total += out.reward;
    if (out.done || out.truncated) return total;
    s = out.state;
  }
}

double discrete_episode(const DiscretePolicy& p, double epsilon, Rng& rng) {
  GridPixEnv env;
  Vec s = env.reset(rng);
  double total = 0.0;
  while (true) {
    const int a = epsilon > 0.0 ? epsilon_greedy(p.q_values(s), epsilon, rng) : p.act(s);
    auto out = env.step(a);
    total += out.reward;
    if (out.done || out.truncated) return total;
    s = out.state;
  }
}

}  // namespace

double rollout_return(const Policy& policy, int episodes, std::uint64_t seed, double epsilon) {
  if (episodes <= 0) throw std::invalid_argument("rollout_return: episodes must be positive");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, "episode-" + std::to_string(e)));
    if (const auto* c = std::get_if<ContinuousPolicy>(&policy)) {
      if (c->env.name != "point_reach")
        throw std::invalid_argument("rollout_return: continuous policy on " + c->env.name);
      total += continuous_episode(*c, rng);
    } else {
      const auto& d = std::get<DiscretePolicy>(policy);
      if (d.env.name != "grid_pix")
        throw std::invalid_argument("rollout_return: discrete policy on " + d.env.name);
      total += discrete_episode(d, epsilon, rng);
    }
  }
  return total / double(episodes);
}

double random_rollout_return(const std::string& env_name, int episodes, std::uint64_t seed) {
  if (episodes <= 0) throw std::invalid_argument("random_rollout_return: episodes must be positive");
  const EnvInfo info = env_info(env_name);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, "episode-" + std::to_string(e)));
    if (!info.discrete) {
      PointReachEnv env;
      env.reset(rng);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      while (true) {
        Vec a(2);
        a << u(rng), u(rng);
        auto out = env.step(a);
        total += out.reward;
        if (out.done || out.truncated) break;
      }
    } else {
      GridPixEnv env;
      env.reset(rng);
      std::uniform_int_distribution<int> pick(0, info.num_actions - 1);
      while (true) {
        auto out = env.step(pick(rng));
        total += out.reward;
        if (out.done || out.truncated) break;
      }
    }
  }
  return total / double(episodes);
}

double normalized_score(double score, const ReferenceScores& refs) {
  if (!(refs.expert > refs.random))
    throw std::invalid_argument("normalized_score: expert reference must exceed random");
  return 100.0 * (score - refs.random) / (refs.expert - refs.random);
}

json reference_scores_to_json(const ReferenceScores& refs) {
  json j;
  j["random"] = refs.random;
  j["expert"] = refs.expert;
  return j;
}

ReferenceScores reference_scores_from_json(const json& j) {
  return {j.at("random").get<double>(), j.at("expert").get<double>()};
}

void save_reference_scores(const std::filesystem::path& path, const ReferenceScores& refs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << reference_scores_to_json(refs).dump(2) << "\n";
}

ReferenceScores load_reference_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return reference_scores_from_json(json::parse(in));
}

namespace {

// Regression inputs, action-encoded but not yet assembled into features:
// normalized states alongside raw continuous actions or one-hot discrete
// actions, for the data pairs, the (s', pi(s')) pairs, and episode starts.
struct FqeProblem {
  Mat s, s_next, s_init;
  Mat a, a_next, a_init;
  Vec rewards, not_done;
  bool discrete = false;
};

Mat encode_actions_discrete(const DiscretePolicy& p, const Mat& rich_states) {
  Mat onehot = Mat::Zero(p.env.num_actions, rich_states.cols());
  Mat q = p.q_values(rich_states);
  for (Eigen::Index j = 0; j < rich_states.cols(); ++j)
    onehot(greedy_action(q.col(j)), j) = 1.0;
  return onehot;
}

FqeProblem build_fqe_problem(const OfflineDataset& d, const Policy& policy) {
  FqeProblem prob;
  // The regression runs on the same view the policy deploys with, so the
  // estimate reflects what is learnable from the constrained observation.
  const FeatureSpec& spec =
      std::visit([](const auto& p) -> const FeatureSpec& { return p.spec; }, policy);
  Mat obs = observe(spec, d.states);
  const NormStats norm = compute_norm_stats(obs);
  prob.s = apply_norm(norm, obs);
  prob.s_next = apply_norm(norm, observe(spec, d.next_states));

  std::vector<int> init_idx;
  for (Eigen::Index j = 0; j < d.size(); ++j)
    if (d.firsts[j] == 1.0) init_idx.push_back(static_cast<int>(j));
  Mat init_rich(d.states.rows(), static_cast<Eigen::Index>(init_idx.size()));
  for (std::size_t j = 0; j < init_idx.size(); ++j)
    init_rich.col(static_cast<Eigen::Index>(j)) = d.states.col(init_idx[j]);
  prob.s_init = apply_norm(norm, observe(spec, init_rich));

  if (const auto* c = std::get_if<ContinuousPolicy>(&policy)) {
    prob.a = d.actions;
    prob.a_next = c->act(d.next_states);
    prob.a_init = c->act(init_rich);
  } else {
    prob.discrete = true;
    const auto& dp = std::get<DiscretePolicy>(policy);
    prob.a = Mat::Zero(dp.env.num_actions, d.size());
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      const int a = static_cast<int>(d.actions(0, j));
      if (a < 0 || a >= dp.env.num_actions)
        throw std::invalid_argument("fqe: dataset action index out of range");
      prob.a(a, j) = 1.0;
    }
    prob.a_next = encode_actions_discrete(dp, d.next_states);
    prob.a_init = encode_actions_discrete(dp, init_rich);
  }
  prob.rewards = d.rewards;
  prob.not_done = 1.0 - d.dones.array();
  return prob;
}

Mat stack_rows(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

// Linear feature map. Continuous: [s; a; 1], one shared weight vector.
// Discrete: one (state, bias) block per action, gated by the action's one-hot
// entry — i.e. an independent linear head per action. With one-hot states this
// class contains every tabular Q, which is what makes the exact-solve mode an
// oracle on small MDPs.
Mat linear_features(const Mat& s, const Mat& a, bool discrete) {
  if (!discrete) {
    Mat x(s.rows() + a.rows() + 1, s.cols());
    x.topRows(s.rows()) = s;
    x.middleRows(s.rows(), a.rows()) = a;
    x.row(s.rows() + a.rows()).setOnes();
    return x;
  }
  const auto d = s.rows(), num_actions = a.rows();
  Mat x = Mat::Zero((d + 1) * num_actions, s.cols());
  for (Eigen::Index k = 0; k < num_actions; ++k) {
    x.middleRows(k * (d + 1), d) = s.array().rowwise() * a.row(k).array();
    x.row(k * (d + 1) + d) = a.row(k);
  }
  return x;
}

FqeResult fqe_linear(const FqeProblem& prob, const FqeConfig& cfg) {
  const Mat x = linear_features(prob.s, prob.a, prob.discrete);
  const Mat x_next = linear_features(prob.s_next, prob.a_next, prob.discrete);
  const Mat x_init = linear_features(prob.s_init, prob.a_init, prob.discrete);
  Vec w = Vec::Zero(x.rows());

  FqeResult out;
  for (int k = 0; k < cfg.iterations; ++k) {
    Vec q_next = x_next.transpose() * w;
    Vec y = prob.rewards.array() + cfg.gamma * prob.not_done.array() * q_next.array();
    w = Mat(x.transpose()).colPivHouseholderQr().solve(y);
    out.iterations_run = k + 1;
    if ((x.transpose() * w).cwiseAbs().maxCoeff() > cfg.divergence_guard) {
      out.diverged = true;
      break;
    }
  }
  out.initial_value = x_init.cols() == 0 ? 0.0 : (x_init.transpose() * w).mean();
  return out;
}

FqeResult fqe_mlp(const FqeProblem& prob, const FqeConfig& cfg) {
  const Mat x = stack_rows(prob.s, prob.a);
  const Mat x_next = stack_rows(prob.s_next, prob.a_next);
  const Mat x_init = stack_rows(prob.s_init, prob.a_init);

  Rng rng(derive_seed(cfg.seed, "fqe"));
  std::vector<int> dims;
  dims.push_back(static_cast<int>(x.rows()));
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(1);
  Mlp qnet = make_mlp(dims, Activation::kRelu, Activation::kIdentity, rng);
  qnet.weights.back().setZero();  // Q starts as the zero function
  qnet.biases.back().setZero();
  AdamState opt = make_adam(qnet, cfg.learning_rate);

  const auto n = x.cols();
  FqeResult out;
  for (int k = 0; k < cfg.iterations; ++k) {
    Mlp frozen = qnet;
    Mat q_next = mlp_forward(frozen, x_next);
    Mat y = prob.rewards.transpose().array() +
            cfg.gamma * prob.not_done.transpose().array() * q_next.row(0).array();
    const int steps = std::max<int>(
        1, cfg.epochs_per_iteration * static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size));
    for (int t = 0; t < steps; ++t) {
      auto idx = sample_indices(n, cfg.batch_size, rng);
      Mat xb(x.rows(), cfg.batch_size), yb(1, cfg.batch_size);
      for (int j = 0; j < cfg.batch_size; ++j) {
        xb.col(j) = x.col(idx[static_cast<std::size_t>(j)]);
        yb(0, j) = y(0, idx[static_cast<std::size_t>(j)]);
      }
      Tape tape;
      auto ref = mlp_on_tape(tape, qnet, tape.constant(xb));
      auto loss = tape.entry_sum(tape.sq_diff(ref.output, tape.constant(yb)),
                                 Mat::Constant(1, cfg.batch_size, 1.0 / cfg.batch_size));
      tape.backward(loss);
      adam_step(qnet, collect_grads(tape, ref, qnet), opt);
    }
    out.iterations_run = k + 1;
    if (mlp_forward(qnet, x).cwiseAbs().maxCoeff() > cfg.divergence_guard) {
      out.diverged = true;
      break;
    }
  }
  out.initial_value = x_init.cols() == 0 ? 0.0 : mlp_forward(qnet, x_init).mean();
  return out;
}

}  // namespace

FqeResult fqe_evaluate(const OfflineDataset& data, const Policy& policy, const FqeConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("fqe: empty dataset");
  FqeProblem prob = build_fqe_problem(data, policy);
  return cfg.hidden.empty() ? fqe_linear(prob, cfg) : fqe_mlp(prob, cfg);
}

}  // namespace rcorl
