#include "rcorl/collect.hpp"

#include <stdexcept>
#include <string>

#include "rcorl/eval.hpp"

namespace rcorl {

double medium_threshold(double random_floor, double expert_score) {
  if (!(expert_score > random_floor))
    throw std::invalid_argument("medium_threshold: expert score must exceed the random floor");
  return random_floor + 0.5 * (expert_score - random_floor);
}

OfflineDataset dataset_prefix(const OfflineDataset& d, Eigen::Index n) {
  if (n < 0 || n > d.size()) throw std::invalid_argument("dataset_prefix: bad length");
  OfflineDataset out;
  out.manifest = d.manifest;
  out.states = d.states.leftCols(n);
  out.actions = d.actions.leftCols(n);
  out.next_states = d.next_states.leftCols(n);
  out.rewards = d.rewards.head(n);
  out.dones = d.dones.head(n);
  out.firsts = d.firsts.head(n);
  return out;
}

OfflineDataset dataset_concat(const OfflineDataset& a, const OfflineDataset& b) {
  if (a.states.rows() != b.states.rows() || a.actions.rows() != b.actions.rows())
    throw std::invalid_argument("dataset_concat: shape mismatch");
  OfflineDataset out;
  out.manifest = a.manifest;
  const auto n = a.size() + b.size();
  out.states.resize(a.states.rows(), n);
  out.states << a.states, b.states;
  out.actions.resize(a.actions.rows(), n);
  out.actions << a.actions, b.actions;
  out.next_states.resize(a.next_states.rows(), n);
  out.next_states << a.next_states, b.next_states;
  out.rewards.resize(n);
  out.rewards << a.rewards, b.rewards;
  out.dones.resize(n);
  out.dones << a.dones, b.dones;
  out.firsts.resize(n);
  out.firsts << a.firsts, b.firsts;
  return out;
}

double mean_trajectory_reward(const OfflineDataset& d) {
  if (d.size() == 0) throw std::invalid_argument("mean_trajectory_reward: empty dataset");
  const int horizon = env_info_from_json(d.manifest.at("env")).horizon;
  std::vector<Eigen::Index> starts;
  for (Eigen::Index j = 0; j < d.size(); ++j)
    if (d.firsts[j] == 1.0) starts.push_back(j);
  if (starts.empty() || starts.front() != 0)
    throw std::invalid_argument("mean_trajectory_reward: transitions must start at an episode");

  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const Eigen::Index begin = starts[k];
    const Eigen::Index end = k + 1 < starts.size() ? starts[k + 1] : d.size();
    if (d.dones[end - 1] != 1.0 && end - begin < horizon) continue;  // cut off mid-episode
    sum += d.rewards.segment(begin, end - begin).sum();
    count += 1;
  }
  if (count == 0) throw std::runtime_error("mean_trajectory_reward: no complete episode stored");
  return sum / double(count);
}

namespace {

OfflineDataset rollout_continuous(const Mlp& actor, const FeatureSpec& spec, Eigen::Index budget,
                                  double sigma, std::uint64_t seed) {
  ReplayBuffer buf(PointReachEnv::kStateDim, PointReachEnv::kActionDim, budget);
  for (int episode = 0; buf.size() < budget; ++episode) {
    Rng rng(derive_seed(seed, "episode-" + std::to_string(episode)));
    PointReachEnv env;
    Vec s = env.reset(rng);
    bool first = true;
    while (true) {
      Vec a = mlp_forward(actor, observe(spec, s)) +
              sigma * randn(PointReachEnv::kActionDim, 1, rng).col(0);
      a = a.cwiseMax(-1.0).cwiseMin(1.0);
      auto out = env.step(a);
      buf.add(s, a, out.reward, out.state, out.done, first);
      first = false;
      if (out.done || out.truncated || buf.size() == budget) break;
      s = out.state;
    }
  }
  return buf.snapshot(budget);
}

OfflineDataset rollout_discrete(const Mlp& qnet, const FeatureSpec& spec, Eigen::Index budget,
                                double epsilon, std::uint64_t seed) {
  ReplayBuffer buf(GridPixEnv::kStateDim, 1, budget);
  for (int episode = 0; buf.size() < budget; ++episode) {
    Rng rng(derive_seed(seed, "episode-" + std::to_string(episode)));
    GridPixEnv env;
    Vec s = env.reset(rng);
    bool first = true;
    while (true) {
      const int a = epsilon_greedy(mlp_forward(qnet, observe(spec, s)), epsilon, rng);
      auto out = env.step(a);
      buf.add(s, Vec::Constant(1, double(a)), out.reward, out.state, out.done, first);
      first = false;
      if (out.done || out.truncated || buf.size() == budget) break;
      s = out.state;
    }
  }
  return buf.snapshot(budget);
}

void stamp(OfflineDataset& d, const EnvInfo& info, const FeatureSpec& spec,
           const std::string& difficulty, const json& prov) {
  d.manifest["env"] = env_info_to_json(info);
  d.manifest["feature_spec"] = feature_spec_to_json(spec);
  d.manifest["difficulty"] = difficulty;
  d.manifest["provenance"] = prov;
  record_norm_stats(d);
}

}  // namespace

TierBundle collect_tiers(const std::string& env_id, const FeatureSpec& spec,
                         const CollectConfig& cfg, std::uint64_t mask_seed,
                         std::uint64_t collection_seed) {
  const EnvInfo info = env_info(env_id);
  const std::string run_tag = env_id + " mask_seed=" + std::to_string(mask_seed) +
                              " collection_seed=" + std::to_string(collection_seed);

  // One behavior run on the restricted view supplies everything: its final
  // policy (expert), an earlier checkpoint (medium), and its replay.
  std::vector<std::pair<long long, double>> checkpoint_log;
  long long medium_step = 0;
  TierBundle out;

  const double random_floor = random_rollout_return(env_id, cfg.random_floor_episodes,
                                                    derive_seed(collection_seed, "random-floor"));
  const std::uint64_t behavior_seed = derive_seed(collection_seed, "behavior");

  double expert_score = 0.0;
  double threshold = 0.0;
  if (!info.discrete) {
    OnlineTrainResult run =
        td3_online_train(cfg.td3, spec, cfg.online_steps, cfg.eval_every, cfg.eval_episodes,
                         behavior_seed);
    expert_score = final_score(run.trace);
    if (!(expert_score > random_floor))
      throw std::runtime_error("collect: behavior run did not beat the random floor (" + run_tag +
                               ")");
    threshold = medium_threshold(random_floor, expert_score);
    const OnlineCheckpoint* medium = nullptr;
    for (const auto& ck : run.checkpoints) {
      checkpoint_log.emplace_back(ck.step, ck.score);
      if (medium == nullptr && ck.score >= threshold) medium = &ck;
    }
    if (medium == nullptr)
      throw std::runtime_error("collect: medium threshold " + std::to_string(threshold) +
                               " never reached (" + run_tag + ")");
    medium_step = medium->step;
    out.medium_replay = dataset_prefix(run.replay, medium_step);
    out.medium = rollout_continuous(medium->actor, spec, cfg.size_budget, cfg.rollout_noise,
                                    derive_seed(collection_seed, "medium"));
    out.expert = rollout_continuous(run.policy.actor, spec, cfg.size_budget, cfg.rollout_noise,
                                    derive_seed(collection_seed, "expert"));
    ContinuousPolicy medium_pol = run.policy;
    medium_pol.actor = medium->actor;
    out.medium_policy = medium_pol;
    out.expert_policy = run.policy;
  } else {
    DiscreteOnlineResult run =
        dqn_online_train(cfg.dqn, spec, cfg.online_steps, cfg.eval_every, cfg.eval_episodes,
                         behavior_seed);
    expert_score = final_score(run.trace);
    if (!(expert_score > random_floor))
      throw std::runtime_error("collect: behavior run did not beat the random floor (" + run_tag +
                               ")");
    threshold = medium_threshold(random_floor, expert_score);
    const DiscreteCheckpoint* medium = nullptr;
    for (const auto& ck : run.checkpoints) {
      checkpoint_log.emplace_back(ck.step, ck.score);
      if (medium == nullptr && ck.score >= threshold) medium = &ck;
    }
    if (medium == nullptr)
      throw std::runtime_error("collect: medium threshold " + std::to_string(threshold) +
                               " never reached (" + run_tag + ")");
    medium_step = medium->step;
    out.medium_replay = dataset_prefix(run.replay, medium_step);
    out.medium = rollout_discrete(medium->qnet, spec, cfg.size_budget, cfg.rollout_epsilon,
                                  derive_seed(collection_seed, "medium"));
    out.expert = rollout_discrete(run.policy.qnet, spec, cfg.size_budget, cfg.rollout_epsilon,
                                  derive_seed(collection_seed, "expert"));
    DiscretePolicy medium_pol = run.policy;
    medium_pol.qnet = medium->qnet;
    out.medium_policy = medium_pol;
    out.expert_policy = run.policy;
  }
  out.medium_expert = dataset_concat(out.medium, out.expert);

  json prov;
  prov["mask_seed"] = mask_seed;
  prov["collection_seed"] = collection_seed;
  prov["online_steps"] = cfg.online_steps;
  prov["size_budget"] = static_cast<long long>(cfg.size_budget);
  prov["random_floor"] = random_floor;
  prov["expert_score"] = expert_score;
  prov["medium_threshold"] = threshold;
  prov["medium_step"] = medium_step;
  prov["rollout_noise"] = info.discrete ? cfg.rollout_epsilon : cfg.rollout_noise;
  prov["behavior_checkpoints"] = json::array();
  for (const auto& [step, score] : checkpoint_log)
    prov["behavior_checkpoints"].push_back({{"step", step}, {"score", score}});

  stamp(out.medium_replay, info, spec, "medium_replay", prov);
  stamp(out.medium, info, spec, "medium", prov);
  stamp(out.medium_expert, info, spec, "medium_expert", prov);
  stamp(out.expert, info, spec, "expert", prov);
  out.provenance = std::move(prov);
  return out;
}

OfflineDataset collect_rc_dataset(const std::string& env_id, const FeatureSpec& spec,
                                  const std::string& difficulty, const CollectConfig& cfg,
                                  std::uint64_t mask_seed, std::uint64_t collection_seed) {
  TierBundle tiers = collect_tiers(env_id, spec, cfg, mask_seed, collection_seed);
  if (difficulty == "medium_replay") return std::move(tiers.medium_replay);
  if (difficulty == "medium") return std::move(tiers.medium);
  if (difficulty == "medium_expert") return std::move(tiers.medium_expert);
  if (difficulty == "expert") return std::move(tiers.expert);
  throw std::invalid_argument("collect_rc_dataset: unknown difficulty " + difficulty);
}

}  // namespace rcorl
