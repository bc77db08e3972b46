#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "rcorl/collect.hpp"
#include "rcorl/eval.hpp"

using namespace rcorl;

namespace {

OfflineDataset random_dataset(int state_dim, int action_dim, int n, unsigned seed) {
  Rng rng(seed);
  OfflineDataset d;
  d.manifest["env"] = env_info_to_json(env_info("point_reach"));
  d.states = randn(state_dim, n, rng);
  d.actions = randn(action_dim, n, rng);
  d.next_states = randn(state_dim, n, rng);
  d.rewards = randn(1, n, rng).row(0).transpose();
  d.dones = Vec::Zero(n);
  d.firsts = Vec::Zero(n);
  d.firsts[0] = 1.0;
  return d;
}

// Small collection setup that trains in well under a second.
CollectConfig tiny_config() {
  CollectConfig cfg;
  cfg.online_steps = 3000;
  cfg.eval_every = 500;
  cfg.eval_episodes = 2;
  cfg.size_budget = 1200;
  cfg.td3.hidden = {32, 32};
  cfg.td3.batch_size = 64;
  cfg.td3.warmup_steps = 500;
  return cfg;
}

}  // namespace

TEST_CASE("medium threshold halves the gap above the random floor") {
  CHECK(medium_threshold(0.0, 100.0) == 50.0);
  CHECK(medium_threshold(-200.0, -50.0) == doctest::Approx(-125.0).epsilon(1e-12));
  CHECK(medium_threshold(10.0, 30.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(medium_threshold(5.0, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(medium_threshold(5.0, 1.0), std::invalid_argument);
}

TEST_CASE("prefix and concatenation preserve transitions element-wise") {
  OfflineDataset a = random_dataset(4, 2, 6, 1);
  OfflineDataset b = random_dataset(4, 2, 5, 2);
  OfflineDataset cat = dataset_concat(a, b);

  CHECK(cat.size() == 11);
  CHECK(cat.states.leftCols(6) == a.states);
  CHECK(cat.states.rightCols(5) == b.states);
  CHECK(cat.actions.rightCols(5) == b.actions);
  CHECK(cat.next_states.leftCols(6) == a.next_states);
  CHECK(cat.rewards.head(6) == a.rewards);
  CHECK(cat.rewards.tail(5) == b.rewards);
  CHECK(cat.firsts.tail(5) == b.firsts);

  OfflineDataset pre = dataset_prefix(cat, 6);
  CHECK(pre.states == a.states);
  CHECK(pre.rewards == a.rewards);
  CHECK(pre.manifest == a.manifest);

  CHECK_THROWS_AS(dataset_prefix(a, 7), std::invalid_argument);
  CHECK_THROWS_AS(dataset_prefix(a, -1), std::invalid_argument);
  OfflineDataset narrow = random_dataset(3, 2, 4, 3);
  CHECK_THROWS_AS(dataset_concat(a, narrow), std::invalid_argument);
}

TEST_CASE("mean trajectory reward skips segments cut off mid-episode") {
  OfflineDataset d = random_dataset(2, 1, 7, 4);
  // Episodes: [0..2] ends in done (sum 6), [3..4] ends in done (sum 8),
  // [5..6] cut off with no terminal flag -> excluded.
  d.rewards << 1, 2, 3, 4, 4, 100, 100;
  d.dones << 0, 0, 1, 0, 1, 0, 0;
  d.firsts << 1, 0, 0, 1, 0, 1, 0;
  CHECK(mean_trajectory_reward(d) == doctest::Approx(7.0).epsilon(1e-12));

  SUBCASE("a segment that reaches the horizon counts even without a done flag") {
    json env = env_info_to_json(env_info("point_reach"));
    env["horizon"] = 2;
    d.manifest["env"] = env;
    // Now [5..6] has length 2 == horizon, so it counts: (6 + 8 + 200) / 3.
    CHECK(mean_trajectory_reward(d) == doctest::Approx(214.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("no complete episode is an error") {
    OfflineDataset cut = dataset_prefix(d, 2);
    CHECK_THROWS_AS(mean_trajectory_reward(cut), std::runtime_error);
  }

  SUBCASE("empty dataset is an error") {
    OfflineDataset empty = dataset_prefix(d, 0);
    CHECK_THROWS_AS(mean_trajectory_reward(empty), std::invalid_argument);
  }
}

TEST_CASE("tier collection produces coherent, reproducible bundles") {
  CollectConfig cfg = tiny_config();
  FeatureSpec spec;
  spec.kind = "mask";
  spec.indices = {2, 3, 4, 5};  // velocity + goal offset: enough to learn from

  TierBundle t = collect_tiers("point_reach", spec, cfg, 7, 11);

  for (const OfflineDataset* d : {&t.medium_replay, &t.medium, &t.medium_expert, &t.expert}) {
    CHECK_NOTHROW(validate_dataset(*d));
    CHECK(d->states.rows() == PointReachEnv::kStateDim);  // rich states logged
    CHECK(d->manifest.at("feature_spec").at("kind") == "mask");
    CHECK(d->manifest.contains("norm_stats"));
    CHECK(d->manifest.at("provenance").at("mask_seed") == 7);
    CHECK(d->manifest.at("provenance").at("collection_seed") == 11);
  }
  CHECK(t.medium_replay.manifest.at("difficulty") == "medium_replay");
  CHECK(t.medium.manifest.at("difficulty") == "medium");
  CHECK(t.medium_expert.manifest.at("difficulty") == "medium_expert");
  CHECK(t.expert.manifest.at("difficulty") == "expert");

  CHECK(t.medium.size() == cfg.size_budget);
  CHECK(t.expert.size() == cfg.size_budget);
  CHECK(t.medium_expert.size() == t.medium.size() + t.expert.size());

  const long long medium_step = t.provenance.at("medium_step").get<long long>();
  CHECK(t.medium_replay.size() == medium_step);
  CHECK(medium_step % cfg.eval_every == 0);
  const double threshold = t.provenance.at("medium_threshold").get<double>();
  const double floor = t.provenance.at("random_floor").get<double>();
  const double expert_score = t.provenance.at("expert_score").get<double>();
  CHECK(threshold == doctest::Approx(medium_threshold(floor, expert_score)).epsilon(1e-12));
  // The chosen checkpoint is the earliest one at or above the threshold.
  bool seen_medium = false;
  for (const auto& ck : t.provenance.at("behavior_checkpoints")) {
    const long long step = ck.at("step").get<long long>();
    const double score = ck.at("score").get<double>();
    if (step < medium_step) CHECK(score < threshold);
    if (step == medium_step) {
      CHECK(score >= threshold);
      seen_medium = true;
    }
  }
  CHECK(seen_medium);

  SUBCASE("tier containment: medium_expert is medium followed by expert") {
    CHECK(t.medium_expert.states.leftCols(t.medium.size()) == t.medium.states);
    CHECK(t.medium_expert.states.rightCols(t.expert.size()) == t.expert.states);
    CHECK(t.medium_expert.actions.rightCols(t.expert.size()) == t.expert.actions);
    CHECK(t.medium_expert.rewards.head(t.medium.size()) == t.medium.rewards);
    CHECK(t.medium_expert.firsts.tail(t.expert.size()) == t.expert.firsts);
  }

  SUBCASE("stored transitions replay exactly what the behavior policy consumed") {
    const auto& expert_policy = std::get<ContinuousPolicy>(t.expert_policy);
    Rng rng(derive_seed(derive_seed(11, "expert"), "episode-0"));
    PointReachEnv env;
    Vec s = env.reset(rng);
    for (Eigen::Index j = 0; j < t.expert.size(); ++j) {
      CHECK(t.expert.states.col(j) == s);
      // The behavior net consumed exactly the observed view of the logged state.
      Vec a = mlp_forward(expert_policy.actor, observe(spec, Vec(t.expert.states.col(j)))) +
              cfg.rollout_noise * randn(PointReachEnv::kActionDim, 1, rng).col(0);
      a = a.cwiseMax(-1.0).cwiseMin(1.0);
      CHECK(t.expert.actions.col(j) == a);
      auto out = env.step(a);
      CHECK(t.expert.rewards[j] == out.reward);
      CHECK(t.expert.next_states.col(j) == out.state);
      if (out.done || out.truncated) break;
      s = out.state;
    }
  }

  SUBCASE("collection is reproducible from the recorded seeds") {
    TierBundle t2 = collect_tiers("point_reach", spec, cfg, 7, 11);
    CHECK(t2.expert.states == t.expert.states);
    CHECK(t2.medium.actions == t.medium.actions);
    CHECK(t2.medium_replay.rewards == t.medium_replay.rewards);
    CHECK(t2.provenance == t.provenance);
    CHECK(mean_trajectory_reward(t2.expert) ==
          doctest::Approx(mean_trajectory_reward(t.expert)).epsilon(1e-15));
  }

  SUBCASE("single-tier wrapper returns the matching tier") {
    OfflineDataset d = collect_rc_dataset("point_reach", spec, "medium", cfg, 7, 11);
    CHECK(d.states == t.medium.states);
    CHECK(d.manifest.at("difficulty") == "medium");
    CHECK_THROWS_AS(collect_rc_dataset("point_reach", spec, "hard", cfg, 7, 11),
                    std::invalid_argument);
  }

  SUBCASE("the final policy outperforms its own replay data") {
    CHECK(mean_trajectory_reward(t.expert) > mean_trajectory_reward(t.medium_replay));
  }
}

TEST_CASE("discrete tier collection mirrors the continuous protocol") {
  CollectConfig cfg;
  cfg.online_steps = 12000;
  cfg.eval_every = 1500;
  cfg.eval_episodes = 4;
  cfg.size_budget = 500;
  cfg.rollout_epsilon = 0.1;
  cfg.dqn.eps_decay_steps = 4000;

  TierBundle t = collect_tiers("grid_pix", pixelate_spec(GridPixEnv::kSide, 6), cfg, 0, 5);

  for (const OfflineDataset* d : {&t.medium_replay, &t.medium, &t.medium_expert, &t.expert}) {
    CHECK_NOTHROW(validate_dataset(*d));
    CHECK(d->states.rows() == GridPixEnv::kStateDim);
    CHECK(d->actions.rows() == 1);
    CHECK(d->manifest.at("feature_spec").at("kind") == "pixelate");
  }
  CHECK(t.expert.size() == 500);
  CHECK(t.medium_expert.size() == 1000);
  CHECK(t.expert.actions.maxCoeff() <= double(GridPixEnv::kNumActions - 1));
  CHECK(std::get<DiscretePolicy>(t.expert_policy).spec.kind == "pixelate");
  CHECK(t.provenance.at("rollout_noise").get<double>() == 0.1);
}
