#pragma once

#include "rcorl/cql.hpp"
#include "rcorl/td3.hpp"

namespace rcorl {

// Budgets for growing a behavior policy online and rolling out the four
// difficulty tiers from it. Defaults are desk-scale for point_reach; grid_pix
// callers shrink size_budget (576-dim states get large quickly).
struct CollectConfig {
  int online_steps = 20000;          // behavior-policy training budget
  int eval_every = 1000;             // checkpoint cadence during that run
  int eval_episodes = 5;
  Eigen::Index size_budget = 20000;  // transitions per rolled-out tier
  double rollout_noise = 0.1;        // continuous rollouts: Gaussian sigma, clipped to range
  double rollout_epsilon = 0.1;      // discrete rollouts: epsilon-greedy
  int random_floor_episodes = 20;    // anchors the medium threshold
  Td3Config td3;                     // continuous behavior-policy hyperparameters
  CqlConfig dqn;                     // discrete behavior-policy hyperparameters
};

// "Roughly half of the reward": midpoint between the random floor and the
// behavior run's final score. Anchoring at the floor keeps the rule meaningful
// on negative-return scales; with a zero floor it is exactly half the expert
// score. Requires expert > floor.
double medium_threshold(double random_floor, double expert_score);

// All four tiers from one behavior run, plus the shared provenance record
// (seeds, checkpoint scores, threshold, chosen medium step, rollout noise)
// and the two behavior policies the rollout tiers were generated with.
struct TierBundle {
  OfflineDataset medium_replay, medium, medium_expert, expert;
  Policy medium_policy, expert_policy;
  json provenance;
};

// Trains a behavior policy that observes only `spec`, picks the medium
// checkpoint as the earliest one at or above the threshold, and materializes:
//   medium_replay  - verbatim replay prefix up to the medium checkpoint step
//   medium         - noisy rollouts of the medium checkpoint (size_budget)
//   expert         - noisy rollouts of the final policy (size_budget)
//   medium_expert  - medium followed by expert, element-wise
// Every tier logs the full rich state; mask_seed is recorded for provenance
// only (the caller already baked it into `spec`). Throws a collection error
// naming the run if the threshold is never reached.
TierBundle collect_tiers(const std::string& env_id, const FeatureSpec& spec,
                         const CollectConfig& cfg, std::uint64_t mask_seed,
                         std::uint64_t collection_seed);

// Single-tier convenience wrapper around collect_tiers.
OfflineDataset collect_rc_dataset(const std::string& env_id, const FeatureSpec& spec,
                                  const std::string& difficulty, const CollectConfig& cfg,
                                  std::uint64_t mask_seed, std::uint64_t collection_seed);

// First n transitions, manifest carried over.
OfflineDataset dataset_prefix(const OfflineDataset& d, Eigen::Index n);
// Element-wise concatenation; manifest taken from `a`.
OfflineDataset dataset_concat(const OfflineDataset& a, const OfflineDataset& b);

// Mean return per stored trajectory. Episodes are delimited by the firsts
// flags; segments that neither terminate nor reach the horizon (rollouts cut
// off by the size budget, including at a concatenation junction) are excluded.
double mean_trajectory_reward(const OfflineDataset& d);

}  // namespace rcorl
