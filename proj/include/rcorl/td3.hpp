#pragma once

#include "rcorl/dataset.hpp"
#include "rcorl/policy.hpp"

namespace rcorl {

struct Td3Config {
  double gamma = 0.99;
  double tau = 0.005;            // Polyak averaging rate for target networks
  int policy_delay = 2;          // actor/target updates every d-th critic update
  double policy_noise = 0.2;     // target action smoothing noise sigma
  double noise_clip = 0.5;       // smoothing noise clipped to [-c, c]
  double exploration_noise = 0.1;
  int batch_size = 256;
  double alpha = 2.5;            // Q-term scale for the BC-regularized objectives
  double learning_rate = 3e-4;
  std::vector<int> hidden = {64, 64};
  int warmup_steps = 1000;       // online: uniform random actions before learning
};

// Weights of the two imitation terms in the teacher-regularized actor
// objective: beta1 pulls toward the dataset action, beta2 toward the teacher's
// action on the same state. They must be non-negative and sum to one.
struct TransferConfig {
  double beta1 = 0.5;
  double beta2 = 0.5;
};

void validate_transfer(const TransferConfig& tc);

struct ContinuousAgent {
  Mlp actor, actor_target;
  Mlp critic1, critic1_target;
  Mlp critic2, critic2_target;
  AdamState actor_opt, critic1_opt, critic2_opt;
  long long updates = 0;  // critic updates so far; actor fires every policy_delay-th

  int action_dim() const { return actor.output_dim(); }
};

ContinuousAgent make_continuous_agent(int obs_dim, int action_dim, const Td3Config& cfg,
                                      std::uint64_t seed);

// alpha / mean|q|, the scale that puts the Q term on the same footing as the
// squared imitation terms. Treated as a constant (no gradient through it).
double lambda_normalizer(double alpha, const Mat& q_row);

// One update of each algorithm on a pre-observed batch: critic every call,
// actor and targets every policy_delay-th call. rng supplies the target
// smoothing noise only, so callers control all stochasticity.
void td3_train_step(ContinuousAgent& agent, const Batch& batch, const Td3Config& cfg, Rng& rng);
void td3bc_train_step(ContinuousAgent& agent, const Batch& batch, const Td3Config& cfg, Rng& rng);
// teacher_actions: action_dim x batch, the teacher's actions on the batch's
// rich states. Must be empty exactly when beta2 == 0 (the term is skipped).
void transfer_train_step(ContinuousAgent& agent, const Batch& batch, const Mat& teacher_actions,
                         const Td3Config& cfg, const TransferConfig& tc, Rng& rng);
// Pure distillation: actor regresses onto the teacher's actions. No critics.
void true_bc_train_step(ContinuousAgent& agent, const Mat& obs, const Mat& teacher_actions);

// Rollout scores recorded during training, one entry per evaluation round.
struct TrainTrace {
  std::vector<long long> steps;
  std::vector<double> scores;
};

// Mean of the last up-to-10 evaluation rounds; the headline number reported
// for a finished run.
double final_score(const TrainTrace& trace);

struct OnlineCheckpoint {
  long long step = 0;
  double score = 0.0;
  Mlp actor;
};

struct OnlineTrainResult {
  ContinuousPolicy policy;
  std::vector<OnlineCheckpoint> checkpoints;
  OfflineDataset replay;  // every transition experienced, in order
  TrainTrace trace;
};

// Online TD3 on point_reach. The agent acts and learns on the observed view
// given by `spec` (full for the teacher / expert reference, restricted for
// behavior policies that collect constrained datasets); the replay keeps the
// rich states so any view can be re-derived from it.
OnlineTrainResult td3_online_train(const Td3Config& cfg, const FeatureSpec& spec, int total_steps,
                                   int eval_every, int eval_episodes, std::uint64_t seed);

struct OfflineAlgoConfig {
  std::string algo = "td3bc";  // td3bc | transfer | truebc | predictive
  Td3Config td3;
  TransferConfig transfer{1.0, 0.0};
  int total_steps = 6000;
  int eval_every = 500;
  int eval_episodes = 10;
  int predictor_steps = 3000;  // predictive: stage-1 regression updates
  std::vector<int> predictor_hidden = {64, 64};
};

struct OfflineTrainResult {
  ContinuousPolicy policy;
  TrainTrace trace;
  json details;
};

// Offline training on a dataset through a feature restriction. `teacher` is
// required for the transfer and truebc algorithms and ignored otherwise.
OfflineTrainResult train_continuous_offline(const OfflineDataset& data, const FeatureSpec& spec,
                                            const OfflineAlgoConfig& cfg,
                                            const ContinuousPolicy* teacher, std::uint64_t seed);

}  // namespace rcorl
