#pragma once

#include <filesystem>
#include <optional>
#include <variant>

#include "rcorl/dataset.hpp"
#include "rcorl/env.hpp"
#include "rcorl/mlp.hpp"

namespace rcorl {

// A deployable policy is the whole perception-to-action pipeline: which
// features of the rich state it may see, how they are normalized, an optional
// state-estimation stage, and the network itself. Policies therefore act on
// rich environment states directly and are self-contained on disk.
struct ContinuousPolicy {
  EnvInfo env;
  FeatureSpec spec;
  NormStats obs_norm;
  std::optional<Mlp> predictor;  // maps normalized observation to actor input
  Mlp actor;                     // tanh head, actions in [-1, 1]

  Vec act(const Vec& rich_state) const;
  Mat act(const Mat& rich_states) const;
};

struct DiscretePolicy {
  EnvInfo env;
  FeatureSpec spec;
  NormStats obs_norm;
  Mlp qnet;

  Vec q_values(const Vec& rich_state) const;
  Mat q_values(const Mat& rich_states) const;
  int act(const Vec& rich_state) const;  // greedy
};

using Policy = std::variant<ContinuousPolicy, DiscretePolicy>;

// Lowest index wins ties, so greedy selection is deterministic.
int greedy_action(const Vec& q);
int epsilon_greedy(const Vec& q, double epsilon, Rng& rng);

void save_policy(const std::filesystem::path& path, const Policy& policy);
Policy load_policy(const std::filesystem::path& path);

}  // namespace rcorl
