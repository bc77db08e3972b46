#include "rcorl/cql.hpp"

#include <algorithm>
#include <stdexcept>

#include "rcorl/eval.hpp"
#include "rcorl/tape.hpp"

namespace rcorl {

DiscreteAgent make_discrete_agent(int obs_dim, int num_actions, const CqlConfig& cfg,
                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, "discrete-agent"));
  std::vector<int> dims{obs_dim};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(num_actions);
  DiscreteAgent ag;
  ag.qnet = make_mlp(dims, Activation::kRelu, Activation::kIdentity, rng);
  ag.qnet_target = ag.qnet;
  ag.opt = make_adam(ag.qnet, cfg.learning_rate);
  return ag;
}

namespace {

std::vector<int> column_argmax(const Mat& q) {
  std::vector<int> out(static_cast<std::size_t>(q.cols()));
  for (Eigen::Index j = 0; j < q.cols(); ++j) out[static_cast<std::size_t>(j)] = greedy_action(q.col(j));
  return out;
}

Mat gather_entries(const Mat& q, const std::vector<int>& rows) {
  Mat out(1, q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const int r = rows[static_cast<std::size_t>(j)];
    if (r < 0 || r >= q.rows()) throw std::invalid_argument("action index out of range");
    out(0, j) = q(r, j);
  }
  return out;
}

}  // namespace

Mat double_dqn_target(const Mlp& online, const Mlp& target, const Batch& b, double gamma) {
  Mat q_online_next = mlp_forward(online, b.next_states);
  Mat q_target_next = mlp_forward(target, b.next_states);
  Mat boot = gather_entries(q_target_next, column_argmax(q_online_next));
  return b.rewards.array() + gamma * (1.0 - b.dones.array()) * boot.array();
}

Mat blended_target(const Mlp& online, const Mlp& target,
                   const std::vector<int>& teacher_next_actions, const Batch& b, double gamma,
                   double beta) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("blended_target: beta must be in [0,1]");
  if (beta == 0.0) return double_dqn_target(online, target, b, gamma);
  if (teacher_next_actions.size() != static_cast<std::size_t>(b.states.cols()))
    throw std::invalid_argument("blended_target: one teacher action per batch column required");
  Mat q_online_next = mlp_forward(online, b.next_states);
  Mat q_target_next = mlp_forward(target, b.next_states);
  Mat own = gather_entries(q_target_next, column_argmax(q_online_next));
  Mat teach = gather_entries(q_target_next, teacher_next_actions);
  Mat boot = (1.0 - beta) * own + beta * teach;
  return b.rewards.array() + gamma * (1.0 - b.dones.array()) * boot.array();
}

double cql_penalty_value(const Mat& q_all, const std::vector<int>& data_actions) {
  Tape t;
  auto q = t.constant(q_all);
  Mat lse = t.value(t.logsumexp_cols(q));
  Mat q_data = gather_entries(q_all, data_actions);
  return (lse - q_data).mean();
}

void cql_train_step(DiscreteAgent& ag, const Batch& b, const Mat& targets, const CqlConfig& cfg) {
  const auto n = b.states.cols();
  const int num_actions = ag.qnet.output_dim();
  if (targets.rows() != 1 || targets.cols() != n)
    throw std::invalid_argument("cql_train_step: targets must be 1 x batch");

  Mat onehot = Mat::Zero(num_actions, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = static_cast<int>(b.actions(0, j));
    if (a < 0 || a >= num_actions)
      throw std::invalid_argument("cql_train_step: action index out of range");
    onehot(a, j) = 1.0;
  }

  Tape t;
  auto q_ref = mlp_on_tape(t, ag.qnet, t.constant(b.states));
  auto q_data = t.mask_colsum(q_ref.output, onehot);
  Mat mean_n = Mat::Constant(1, n, 1.0 / double(n));
  auto td = t.entry_sum(t.sq_diff(q_data, t.constant(targets)), mean_n);
  auto gap = t.add_weighted(1.0, t.logsumexp_cols(q_ref.output), -1.0, q_data);
  auto loss = t.add_weighted(1.0, td, cfg.alpha_cql, t.entry_sum(gap, mean_n));
  t.backward(loss);
  adam_step(ag.qnet, collect_grads(t, q_ref, ag.qnet), ag.opt);

  ag.updates += 1;
  if (ag.updates % cfg.target_interval == 0) ag.qnet_target = ag.qnet;
}

namespace {

DiscretePolicy online_pixel_policy(const Mlp& qnet, const FeatureSpec& spec, int obs_dim) {
  DiscretePolicy p;
  p.env = env_info("grid_pix");
  p.spec = spec;
  p.obs_norm = identity_norm(obs_dim);
  p.qnet = qnet;
  return p;
}

// Plain double-DQN update (no conservative penalty) for online training.
void dqn_train_step(DiscreteAgent& ag, const Batch& b, const CqlConfig& cfg) {
  Mat y = double_dqn_target(ag.qnet, ag.qnet_target, b, cfg.gamma);
  const auto n = b.states.cols();
  const int num_actions = ag.qnet.output_dim();
  Mat onehot = Mat::Zero(num_actions, n);
  for (Eigen::Index j = 0; j < n; ++j) onehot(static_cast<int>(b.actions(0, j)), j) = 1.0;

  Tape t;
  auto q_ref = mlp_on_tape(t, ag.qnet, t.constant(b.states));
  auto q_data = t.mask_colsum(q_ref.output, onehot);
  auto loss = t.entry_sum(t.sq_diff(q_data, t.constant(y)), Mat::Constant(1, n, 1.0 / double(n)));
  t.backward(loss);
  adam_step(ag.qnet, collect_grads(t, q_ref, ag.qnet), ag.opt);

  ag.updates += 1;
  if (ag.updates % cfg.target_interval == 0) ag.qnet_target = ag.qnet;
}

}  // namespace

DiscreteOnlineResult dqn_online_train(const CqlConfig& cfg, const FeatureSpec& spec,
                                      int total_steps, int eval_every, int eval_episodes,
                                      std::uint64_t seed) {
  const int sdim = GridPixEnv::kStateDim;
  const int odim = observed_dim(spec, sdim);
  const int warmup = std::min(1000, total_steps / 10);

  DiscreteAgent ag = make_discrete_agent(odim, GridPixEnv::kNumActions, cfg, seed);
  ReplayBuffer buf(sdim, 1, total_steps);
  Rng env_rng(derive_seed(seed, "env"));
  Rng act_rng(derive_seed(seed, "act"));
  Rng train_rng(derive_seed(seed, "train"));

  DiscreteOnlineResult out;
  GridPixEnv env;
  Vec s = env.reset(env_rng);
  bool first = true;

  for (int step = 0; step < total_steps; ++step) {
    const double frac = std::min(1.0, double(step) / double(std::max(1, cfg.eps_decay_steps)));
    const double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
    const int a = epsilon_greedy(mlp_forward(ag.qnet, observe(spec, s)), eps, act_rng);

    auto r = env.step(a);
    // Rich states in the buffer; the agent trains on the observed projection.
    buf.add(s, Vec::Constant(1, double(a)), r.reward, r.state, r.done, first);
    first = r.done || r.truncated;
    s = first ? env.reset(env_rng) : r.state;

    if (step >= warmup) {
      Batch b = buf.sample(cfg.batch_size, train_rng);
      b.states = observe(spec, b.states);
      b.next_states = observe(spec, b.next_states);
      dqn_train_step(ag, b, cfg);
    }

    if ((step + 1) % eval_every == 0) {
      const double score =
          rollout_return(online_pixel_policy(ag.qnet, spec, odim), eval_episodes,
                         derive_seed(seed, "eval-" + std::to_string(step + 1)), cfg.eval_epsilon);
      out.checkpoints.push_back({step + 1, score, ag.qnet});
      out.trace.steps.push_back(step + 1);
      out.trace.scores.push_back(score);
    }
  }

  out.policy = online_pixel_policy(ag.qnet, spec, odim);
  out.replay = buf.snapshot(total_steps);
  out.replay.manifest["env"] = env_info_to_json(env_info("grid_pix"));
  out.replay.manifest["feature_spec"] = feature_spec_to_json(spec);
  return out;
}

DiscreteTrainResult train_discrete_offline(const OfflineDataset& data, const FeatureSpec& spec,
                                           const DiscreteOfflineConfig& cfg,
                                           const DiscretePolicy* teacher, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("offline training: empty dataset");
  const EnvInfo env = env_info_from_json(data.manifest.at("env"));
  if (!env.discrete) throw std::invalid_argument("offline training: discrete algo on continuous env");
  if (cfg.use_teacher && teacher == nullptr)
    throw std::invalid_argument("offline training: teacher-blended targets need a teacher");

  // Pixel observations stay unnormalized: most pixels are constant zero, so
  // per-dimension standardization would only amplify noise floors.
  OfflineDataset seen = data;
  seen.states = observe(spec, data.states);
  seen.next_states = observe(spec, data.next_states);
  const int obs_dim = static_cast<int>(seen.states.rows());

  DiscreteAgent ag = make_discrete_agent(obs_dim, env.num_actions, cfg.cql, seed);
  Rng train_rng(derive_seed(seed, "train"));

  // The teacher's next-state actions are fixed, so compute them once.
  std::vector<int> teacher_next;
  if (cfg.use_teacher && cfg.cql.beta != 0.0) {
    teacher_next.resize(static_cast<std::size_t>(data.size()));
    Mat tq = teacher->q_values(data.next_states);
    for (Eigen::Index j = 0; j < data.size(); ++j)
      teacher_next[static_cast<std::size_t>(j)] = greedy_action(tq.col(j));
  }

  DiscreteTrainResult out;
  DiscretePolicy pipeline;
  pipeline.env = env;
  pipeline.spec = spec;
  pipeline.obs_norm = identity_norm(obs_dim);

  for (int step = 0; step < cfg.total_steps; ++step) {
    const auto idx = sample_indices(seen.size(), cfg.cql.batch_size, train_rng);
    Batch b = gather(seen, idx);
    Mat y;
    if (cfg.use_teacher && cfg.cql.beta != 0.0) {
      std::vector<int> ta(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j)
        ta[j] = teacher_next[static_cast<std::size_t>(idx[j])];
      y = blended_target(ag.qnet, ag.qnet_target, ta, b, cfg.cql.gamma, cfg.cql.beta);
    } else {
      y = double_dqn_target(ag.qnet, ag.qnet_target, b, cfg.cql.gamma);
    }
    cql_train_step(ag, b, y, cfg.cql);

    if ((step + 1) % cfg.eval_every == 0) {
      pipeline.qnet = ag.qnet;
      const double score =
          rollout_return(pipeline, cfg.eval_episodes,
                         derive_seed(seed, "eval-" + std::to_string(step + 1)), cfg.cql.eval_epsilon);
      out.trace.steps.push_back(step + 1);
      out.trace.scores.push_back(score);
    }
  }

  pipeline.qnet = ag.qnet;
  if (out.trace.scores.empty()) {
    out.trace.steps.push_back(cfg.total_steps);
    out.trace.scores.push_back(rollout_return(pipeline, cfg.eval_episodes,
                                              derive_seed(seed, "eval-final"), cfg.cql.eval_epsilon));
  }
  out.policy = pipeline;
  out.details["algo"] = cfg.use_teacher ? "cql_transfer" : "cql";
  out.details["total_steps"] = cfg.total_steps;
  out.details["final_score"] = final_score(out.trace);
  return out;
}

}  // namespace rcorl
