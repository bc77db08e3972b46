#include "rcorl/td3.hpp"

#include <algorithm>
#include <stdexcept>

#include "rcorl/eval.hpp"
#include "rcorl/tape.hpp"

namespace rcorl {

void validate_transfer(const TransferConfig& tc) {
  if (tc.beta1 < 0.0 || tc.beta2 < 0.0 || std::abs(tc.beta1 + tc.beta2 - 1.0) > 1e-12)
    throw std::invalid_argument("transfer: beta1 and beta2 must be non-negative and sum to 1");
}

ContinuousAgent make_continuous_agent(int obs_dim, int action_dim, const Td3Config& cfg,
                                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, "continuous-agent"));
  std::vector<int> actor_dims{obs_dim};
  std::vector<int> critic_dims{obs_dim + action_dim};
  for (int h : cfg.hidden) {
    actor_dims.push_back(h);
    critic_dims.push_back(h);
  }
  actor_dims.push_back(action_dim);
  critic_dims.push_back(1);

  ContinuousAgent ag;
  ag.actor = make_mlp(actor_dims, Activation::kRelu, Activation::kTanh, rng);
  ag.critic1 = make_mlp(critic_dims, Activation::kRelu, Activation::kIdentity, rng);
  ag.critic2 = make_mlp(critic_dims, Activation::kRelu, Activation::kIdentity, rng);
  ag.actor_target = ag.actor;
  ag.critic1_target = ag.critic1;
  ag.critic2_target = ag.critic2;
  ag.actor_opt = make_adam(ag.actor, cfg.learning_rate);
  ag.critic1_opt = make_adam(ag.critic1, cfg.learning_rate);
  ag.critic2_opt = make_adam(ag.critic2, cfg.learning_rate);
  return ag;
}

double lambda_normalizer(double alpha, const Mat& q_row) {
  if (q_row.size() == 0) throw std::invalid_argument("lambda_normalizer: empty batch");
  const double denom = std::max(q_row.cwiseAbs().mean(), 1e-8);
  return alpha / denom;
}

namespace {

Mat stack_rows(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

// Clipped-double-Q regression target: r + gamma (1 - d) min_i Q'_i(s', a~),
// with a~ the target actor's action under clipped smoothing noise.
void critic_update(ContinuousAgent& ag, const Batch& b, const Td3Config& cfg, Rng& rng) {
  const auto n = b.states.cols();
  const int adim = ag.action_dim();

  Mat noise = (cfg.policy_noise * randn(adim, n, rng))
                  .cwiseMax(-cfg.noise_clip)
                  .cwiseMin(cfg.noise_clip);
  Mat next_actions =
      (mlp_forward(ag.actor_target, b.next_states) + noise).cwiseMax(-1.0).cwiseMin(1.0);
  Mat sa_next = stack_rows(b.next_states, next_actions);
  Mat q_min = mlp_forward(ag.critic1_target, sa_next)
                  .cwiseMin(mlp_forward(ag.critic2_target, sa_next));
  Mat y = b.rewards.array() + cfg.gamma * (1.0 - b.dones.array()) * q_min.array();

  Tape t;
  auto sa = t.constant(stack_rows(b.states, b.actions));
  auto c1 = mlp_on_tape(t, ag.critic1, sa);
  auto c2 = mlp_on_tape(t, ag.critic2, sa);
  auto target = t.constant(y);
  Mat mean_n = Mat::Constant(1, n, 1.0 / double(n));
  auto loss = t.add_weighted(1.0, t.entry_sum(t.sq_diff(c1.output, target), mean_n), 1.0,
                             t.entry_sum(t.sq_diff(c2.output, target), mean_n));
  t.backward(loss);
  adam_step(ag.critic1, collect_grads(t, c1, ag.critic1), ag.critic1_opt);
  adam_step(ag.critic2, collect_grads(t, c2, ag.critic2), ag.critic2_opt);
}

void sync_targets(ContinuousAgent& ag, const Td3Config& cfg) {
  soft_update(ag.actor_target, ag.actor, cfg.tau);
  soft_update(ag.critic1_target, ag.critic1, cfg.tau);
  soft_update(ag.critic2_target, ag.critic2, cfg.tau);
}

// Shared actor update. The objective (to minimize) is
//   -q_scale * mean Q1(s, pi(s)) + sum_k coeff_k * mean (pi(s) - anchors_k)^2,
// covering plain TD3 (no anchors, q_scale 1), TD3+BC (dataset anchor, lambda)
// and the teacher-regularized transfer objective (both anchors). Zero-weight
// anchors must not be passed: the term is omitted, not multiplied by zero.
void actor_update(ContinuousAgent& ag, const Mat& states, const Td3Config& cfg, bool use_lambda,
                  const std::vector<std::pair<double, const Mat*>>& anchors) {
  const auto n = states.cols();
  const int adim = ag.action_dim();

  Tape t;
  auto s = t.constant(states);
  auto actor_ref = mlp_on_tape(t, ag.actor, s);
  auto q_ref = mlp_on_tape(t, ag.critic1, t.concat_rows(s, actor_ref.output),
                           /*trainable=*/false);
  const double q_scale = use_lambda ? lambda_normalizer(cfg.alpha, t.value(q_ref.output)) : 1.0;
  auto loss = t.scale(-q_scale, t.entry_sum(q_ref.output, Mat::Constant(1, n, 1.0 / double(n))));
  Mat mean_an = Mat::Constant(adim, n, 1.0 / double(adim * n));
  for (const auto& [coeff, anchor] : anchors) {
    auto term = t.entry_sum(t.sq_diff(actor_ref.output, t.constant(*anchor)), mean_an);
    loss = t.add_weighted(1.0, loss, coeff, term);
  }
  t.backward(loss);
  adam_step(ag.actor, collect_grads(t, actor_ref, ag.actor), ag.actor_opt);
}

}  // namespace

void td3_train_step(ContinuousAgent& ag, const Batch& b, const Td3Config& cfg, Rng& rng) {
  critic_update(ag, b, cfg, rng);
  ag.updates += 1;
  if (ag.updates % cfg.policy_delay == 0) {
    actor_update(ag, b.states, cfg, /*use_lambda=*/false, {});
    sync_targets(ag, cfg);
  }
}

void td3bc_train_step(ContinuousAgent& ag, const Batch& b, const Td3Config& cfg, Rng& rng) {
  critic_update(ag, b, cfg, rng);
  ag.updates += 1;
  if (ag.updates % cfg.policy_delay == 0) {
    actor_update(ag, b.states, cfg, /*use_lambda=*/true, {{1.0, &b.actions}});
    sync_targets(ag, cfg);
  }
}

void transfer_train_step(ContinuousAgent& ag, const Batch& b, const Mat& teacher_actions,
                         const Td3Config& cfg, const TransferConfig& tc, Rng& rng) {
  validate_transfer(tc);
  if ((tc.beta2 == 0.0) != (teacher_actions.size() == 0))
    throw std::invalid_argument("transfer: teacher actions required iff beta2 > 0");
  critic_update(ag, b, cfg, rng);
  ag.updates += 1;
  if (ag.updates % cfg.policy_delay == 0) {
    std::vector<std::pair<double, const Mat*>> anchors;
    if (tc.beta1 != 0.0) anchors.emplace_back(tc.beta1, &b.actions);
    if (tc.beta2 != 0.0) anchors.emplace_back(tc.beta2, &teacher_actions);
    actor_update(ag, b.states, cfg, /*use_lambda=*/true, anchors);
    sync_targets(ag, cfg);
  }
}

void true_bc_train_step(ContinuousAgent& ag, const Mat& obs, const Mat& teacher_actions) {
  const auto n = obs.cols();
  const int adim = ag.action_dim();
  Tape t;
  auto actor_ref = mlp_on_tape(t, ag.actor, t.constant(obs));
  auto loss = t.entry_sum(t.sq_diff(actor_ref.output, t.constant(teacher_actions)),
                          Mat::Constant(adim, n, 1.0 / double(adim * n)));
  t.backward(loss);
  adam_step(ag.actor, collect_grads(t, actor_ref, ag.actor), ag.actor_opt);
  ag.updates += 1;
}

double final_score(const TrainTrace& trace) {
  if (trace.scores.empty()) throw std::invalid_argument("final_score: no evaluation rounds");
  const std::size_t take = std::min<std::size_t>(10, trace.scores.size());
  double sum = 0.0;
  for (std::size_t i = trace.scores.size() - take; i < trace.scores.size(); ++i)
    sum += trace.scores[i];
  return sum / double(take);
}

namespace {

ContinuousPolicy online_policy(const Mlp& actor, const FeatureSpec& spec, int obs_dim) {
  ContinuousPolicy p;
  p.env = env_info("point_reach");
  p.spec = spec;
  p.obs_norm = identity_norm(obs_dim);
  p.actor = actor;
  return p;
}

}  // namespace

OnlineTrainResult td3_online_train(const Td3Config& cfg, const FeatureSpec& spec, int total_steps,
                                   int eval_every, int eval_episodes, std::uint64_t seed) {
  if (total_steps <= cfg.warmup_steps)
    throw std::invalid_argument("td3_online_train: total_steps must exceed warmup");
  const int sdim = PointReachEnv::kStateDim;
  const int adim = PointReachEnv::kActionDim;
  const int odim = observed_dim(spec, sdim);

  ContinuousAgent ag = make_continuous_agent(odim, adim, cfg, seed);
  ReplayBuffer buf(sdim, adim, total_steps);
  Rng env_rng(derive_seed(seed, "env"));
  Rng act_rng(derive_seed(seed, "act"));
  Rng train_rng(derive_seed(seed, "train"));
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);

  OnlineTrainResult out;
  PointReachEnv env;
  Vec s = env.reset(env_rng);
  bool first = true;

  for (int step = 0; step < total_steps; ++step) {
    Vec a(adim);
    if (step < cfg.warmup_steps) {
      a << uniform(act_rng), uniform(act_rng);
    } else {
      a = mlp_forward(ag.actor, observe(spec, s)) +
          cfg.exploration_noise * randn(adim, 1, act_rng).col(0);
      a = a.cwiseMax(-1.0).cwiseMin(1.0);
    }
    auto r = env.step(a);
    // The buffer keeps rich states so the exported dataset supports any view;
    // the agent itself only ever sees the observed projection.
    buf.add(s, a, r.reward, r.state, r.done, first);
    first = r.done || r.truncated;
    s = first ? env.reset(env_rng) : r.state;

    if (step >= cfg.warmup_steps) {
      Batch b = buf.sample(cfg.batch_size, train_rng);
      b.states = observe(spec, b.states);
      b.next_states = observe(spec, b.next_states);
      td3_train_step(ag, b, cfg, train_rng);
    }

    if ((step + 1) % eval_every == 0) {
      ContinuousPolicy snapshot = online_policy(ag.actor, spec, odim);
      const double score = rollout_return(
          snapshot, eval_episodes, derive_seed(seed, "eval-" + std::to_string(step + 1)));
      out.checkpoints.push_back({step + 1, score, ag.actor});
      out.trace.steps.push_back(step + 1);
      out.trace.scores.push_back(score);
    }
  }

  out.policy = online_policy(ag.actor, spec, odim);
  out.replay = buf.snapshot(total_steps);
  out.replay.manifest["env"] = env_info_to_json(env_info("point_reach"));
  out.replay.manifest["feature_spec"] = feature_spec_to_json(spec);
  return out;
}

namespace {

// Predictive baseline stage 1: regress normalized full states from normalized
// observations; every 10th transition is held out to sanity-check the fit.
Mlp train_predictor(const Mat& obs_norm, const Mat& full_norm, const OfflineAlgoConfig& cfg,
                    std::uint64_t seed, json& details) {
  std::vector<int> train_idx, holdout_idx;
  for (int j = 0; j < obs_norm.cols(); ++j)
    (j % 10 == 9 ? holdout_idx : train_idx).push_back(j);

  Rng rng(derive_seed(seed, "predictor"));
  std::vector<int> dims{static_cast<int>(obs_norm.rows())};
  for (int h : cfg.predictor_hidden) dims.push_back(h);
  dims.push_back(static_cast<int>(full_norm.rows()));
  Mlp net = make_mlp(dims, Activation::kRelu, Activation::kIdentity, rng);
  AdamState opt = make_adam(net, cfg.td3.learning_rate);

  const int batch = std::min<int>(cfg.td3.batch_size, static_cast<int>(train_idx.size()));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(train_idx.size()) - 1);
  for (int t = 0; t < cfg.predictor_steps; ++t) {
    Mat xb(obs_norm.rows(), batch), yb(full_norm.rows(), batch);
    for (int j = 0; j < batch; ++j) {
      const int i = train_idx[static_cast<std::size_t>(pick(rng))];
      xb.col(j) = obs_norm.col(i);
      yb.col(j) = full_norm.col(i);
    }
    Tape tape;
    auto ref = mlp_on_tape(tape, net, tape.constant(xb));
    auto loss = tape.entry_sum(tape.sq_diff(ref.output, tape.constant(yb)),
                               Mat::Constant(full_norm.rows(), batch,
                                             1.0 / double(full_norm.rows() * batch)));
    tape.backward(loss);
    adam_step(net, collect_grads(tape, ref, net), opt);
  }

  auto mse_over = [&](const std::vector<int>& idx) {
    double sum = 0.0;
    for (int i : idx)
      sum += (mlp_forward(net, Vec(obs_norm.col(i))) - full_norm.col(i)).squaredNorm();
    return sum / double(idx.size() * full_norm.rows());
  };
  details["predictor_train_mse"] = mse_over(train_idx);
  details["predictor_holdout_mse"] = mse_over(holdout_idx);
  return net;
}

}  // namespace

OfflineTrainResult train_continuous_offline(const OfflineDataset& data, const FeatureSpec& spec,
                                            const OfflineAlgoConfig& cfg,
                                            const ContinuousPolicy* teacher, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("offline training: empty dataset");
  const EnvInfo env = env_info_from_json(data.manifest.at("env"));
  if (env.discrete) throw std::invalid_argument("offline training: continuous algo on discrete env");
  const bool needs_teacher = cfg.algo == "transfer" || cfg.algo == "truebc";
  if (needs_teacher && teacher == nullptr)
    throw std::invalid_argument("offline training: " + cfg.algo + " requires a teacher policy");

  const int adim = env.action_dim;
  Mat obs_states = observe(spec, data.states);
  const NormStats obs_norm = compute_norm_stats(obs_states);

  OfflineTrainResult out;
  out.details["algo"] = cfg.algo;
  ContinuousPolicy pipeline;
  pipeline.env = env;
  pipeline.spec = spec;
  pipeline.obs_norm = obs_norm;

  // The dataset the learner actually sees: observed+normalized states (and,
  // for the predictive baseline, predictor outputs).
  OfflineDataset seen = data;
  seen.states = apply_norm(obs_norm, obs_states);
  seen.next_states = apply_norm(obs_norm, observe(spec, data.next_states));
  int input_dim = static_cast<int>(seen.states.rows());

  if (cfg.algo == "predictive") {
    const NormStats full_norm = compute_norm_stats(data.states);
    Mlp predictor =
        train_predictor(seen.states, apply_norm(full_norm, data.states), cfg, seed, out.details);
    seen.states = mlp_forward(predictor, seen.states);
    seen.next_states = mlp_forward(predictor, seen.next_states);
    pipeline.predictor = predictor;
    input_dim = static_cast<int>(seen.states.rows());
  }

  ContinuousAgent ag = make_continuous_agent(input_dim, adim, cfg.td3, seed);
  Rng train_rng(derive_seed(seed, "train"));

  // Teacher actions are a fixed function of the dataset, so compute them once.
  Mat teacher_actions;
  if (needs_teacher && (cfg.algo == "truebc" || cfg.transfer.beta2 != 0.0))
    teacher_actions = teacher->act(data.states);

  auto gather_teacher = [&](const std::vector<int>& idx) {
    Mat out_actions(adim, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
      out_actions.col(static_cast<Eigen::Index>(j)) = teacher_actions.col(idx[j]);
    return out_actions;
  };

  for (int step = 0; step < cfg.total_steps; ++step) {
    const auto idx = sample_indices(seen.size(), cfg.td3.batch_size, train_rng);
    Batch b = gather(seen, idx);
    if (cfg.algo == "td3bc" || cfg.algo == "predictive") {
      td3bc_train_step(ag, b, cfg.td3, train_rng);
    } else if (cfg.algo == "transfer") {
      Mat ta = cfg.transfer.beta2 != 0.0 ? gather_teacher(idx) : Mat();
      transfer_train_step(ag, b, ta, cfg.td3, cfg.transfer, train_rng);
    } else if (cfg.algo == "truebc") {
      true_bc_train_step(ag, b.states, gather_teacher(idx));
    } else {
      throw std::invalid_argument("unknown continuous algorithm: " + cfg.algo);
    }

    if ((step + 1) % cfg.eval_every == 0) {
      pipeline.actor = ag.actor;
      const double score = rollout_return(
          pipeline, cfg.eval_episodes, derive_seed(seed, "eval-" + std::to_string(step + 1)));
      out.trace.steps.push_back(step + 1);
      out.trace.scores.push_back(score);
    }
  }

  pipeline.actor = ag.actor;
  if (out.trace.scores.empty()) {
    out.trace.steps.push_back(cfg.total_steps);
    out.trace.scores.push_back(
        rollout_return(pipeline, cfg.eval_episodes, derive_seed(seed, "eval-final")));
  }
  out.policy = pipeline;
  out.details["total_steps"] = cfg.total_steps;
  out.details["final_score"] = final_score(out.trace);
  return out;
}

}  // namespace rcorl
