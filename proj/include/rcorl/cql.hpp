#pragma once

#include "rcorl/dataset.hpp"
#include "rcorl/policy.hpp"
#include "rcorl/td3.hpp"  // TrainTrace, final_score

namespace rcorl {

struct CqlConfig {
  double gamma = 0.99;
  double alpha_cql = 1.0;     // weight of the conservative penalty
  double beta = 0.8;          // teacher share of the bootstrap target
  int target_interval = 500;  // hard target-network copy period
  double learning_rate = 3e-4;
  int batch_size = 32;
  std::vector<int> hidden = {64, 64};
  double eval_epsilon = 0.001;
  // Online collection: linearly annealed epsilon-greedy exploration.
  double eps_start = 1.0;
  double eps_end = 0.1;
  int eps_decay_steps = 20000;
};

struct DiscreteAgent {
  Mlp qnet, qnet_target;
  AdamState opt;
  long long updates = 0;
};

DiscreteAgent make_discrete_agent(int obs_dim, int num_actions, const CqlConfig& cfg,
                                  std::uint64_t seed);

// Double-DQN regression target, one entry per batch column:
//   y = r + gamma (1 - d) Q_target(s', argmax_a Q_online(s', a)).
Mat double_dqn_target(const Mlp& online, const Mlp& target, const Batch& b, double gamma);

// Teacher-blended target: the bootstrap value mixes the student's own greedy
// choice with the teacher's action at s' (both evaluated under Q_target):
//   y = r + gamma (1 - d) [(1-beta) Q_t(s', argmax Q_online) + beta Q_t(s', a_teacher)].
// beta = 0 falls through to double_dqn_target so the two paths are
// arithmetically identical.
Mat blended_target(const Mlp& online, const Mlp& target,
                   const std::vector<int>& teacher_next_actions, const Batch& b, double gamma,
                   double beta);

// Conservative penalty mean_j [ logsumexp_a Q(s_j, a) - Q(s_j, a_j) ],
// before multiplication by alpha. Exposed for test oracles.
double cql_penalty_value(const Mat& q_all, const std::vector<int>& data_actions);

// One gradient step: squared TD error against `targets` plus alpha times the
// conservative penalty; hard target copy every target_interval updates.
void cql_train_step(DiscreteAgent& ag, const Batch& b, const Mat& targets, const CqlConfig& cfg);

struct DiscreteCheckpoint {
  long long step = 0;
  double score = 0.0;
  Mlp qnet;
};

struct DiscreteOnlineResult {
  DiscretePolicy policy;
  std::vector<DiscreteCheckpoint> checkpoints;
  OfflineDataset replay;
  TrainTrace trace;
};

// Online double-DQN on grid_pix. The agent acts and learns on the observed
// view given by `spec` (full image for the teacher / expert reference,
// pixelated for behavior policies collecting constrained datasets); the
// replay keeps the rich states.
DiscreteOnlineResult dqn_online_train(const CqlConfig& cfg, const FeatureSpec& spec,
                                      int total_steps, int eval_every, int eval_episodes,
                                      std::uint64_t seed);

struct DiscreteOfflineConfig {
  CqlConfig cql;
  int total_steps = 6000;
  int eval_every = 500;
  int eval_episodes = 10;
  bool use_teacher = false;  // blended targets when true
};

struct DiscreteTrainResult {
  DiscretePolicy policy;
  TrainTrace trace;
  json details;
};

// Offline conservative Q-learning through a feature restriction. `teacher` is
// required when cfg.use_teacher; pixel observations are left unnormalized.
DiscreteTrainResult train_discrete_offline(const OfflineDataset& data, const FeatureSpec& spec,
                                           const DiscreteOfflineConfig& cfg,
                                           const DiscretePolicy* teacher, std::uint64_t seed);

}  // namespace rcorl
