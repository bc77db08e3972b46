#pragma once

#include <filesystem>

#include "rcorl/policy.hpp"

namespace rcorl {

// Mean undiscounted episode return over `episodes` rollouts. Each episode gets
// its own seed derived from `seed`, so results do not depend on how episodes
// are batched or ordered. `epsilon` adds exploration to discrete policies
// (continuous policies ignore it).
double rollout_return(const Policy& policy, int episodes, std::uint64_t seed,
                      double epsilon = 0.0);

// Uniform-random behavior on the named environment; the "random" anchor.
double random_rollout_return(const std::string& env_name, int episodes, std::uint64_t seed);

// Anchors for score normalization. Both are plain mean returns.
struct ReferenceScores {
  double random = 0.0;
  double expert = 0.0;
};

// 0 at random, 100 at expert, affine in between.
double normalized_score(double score, const ReferenceScores& refs);

json reference_scores_to_json(const ReferenceScores& refs);
ReferenceScores reference_scores_from_json(const json& j);
void save_reference_scores(const std::filesystem::path& path, const ReferenceScores& refs);
ReferenceScores load_reference_scores(const std::filesystem::path& path);

// Fitted Q evaluation: iterate Q <- r + gamma * (1 - done) * Q_prev(s', pi(s'))
// as a supervised regression on dataset transitions, then read off the value
// of the episode-start states. With no hidden layers the regression is an
// exact linear least-squares solve (tabular when states are one-hot); with
// hidden layers it is Adam-trained. Q starts at the zero function either way,
// so iterations = 0 reports exactly 0.
struct FqeConfig {
  double gamma = 0.99;
  int iterations = 50;
  std::vector<int> hidden = {};  // empty: exact linear solve per iteration
  int epochs_per_iteration = 10;
  int batch_size = 256;
  double learning_rate = 3e-4;
  double divergence_guard = 1e6;  // |Q| beyond this aborts with diverged = true
  std::uint64_t seed = 0;
};

struct FqeResult {
  double initial_value = 0.0;  // mean Q(s0, pi(s0)) over episode starts
  bool diverged = false;
  int iterations_run = 0;
};

FqeResult fqe_evaluate(const OfflineDataset& data, const Policy& policy, const FqeConfig& cfg);

}  // namespace rcorl
