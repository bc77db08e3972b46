#pragma once

#include <string>
#include <vector>

#include "rcorl/container.hpp"
#include "rcorl/types.hpp"

namespace rcorl {

// point_reach: a 2-D velocity-controlled reacher with an 11-dim rich state.
// Layout: [0,1] position, [2,3] velocity, [4,5] goal - position, [6] distance
// to goal, [7..10] clearance to the east/west/north/south walls. The
// redundancy is deliberate: random feature masks then range from harmless
// (goal still recoverable) to crippling (goal-blind), which is exactly the
// spread the experiments study.
class PointReachEnv {
 public:
  static constexpr int kStateDim = 11;
  static constexpr int kActionDim = 2;
  static constexpr int kHorizon = 200;
  static constexpr double kDt = 0.1;
  static constexpr double kVMax = 1.0;
  static constexpr double kArenaBound = 1.0;
  static constexpr double kGoalRadius = 0.1;
  static constexpr double kGoalBonus = 10.0;
  static constexpr double kMinGoalClearance = 0.2;

  struct Step {
    Vec state;
    double reward = 0.0;
    bool done = false;       // goal reached; no bootstrapping past this
    bool truncated = false;  // horizon hit; episode ends but value continues
  };

  Vec reset(Rng& rng);
  Step step(const Vec& action);  // components must lie in [-1, 1]
  int steps_taken() const { return t_; }

 private:
  Vec assemble_state() const;

  Eigen::Vector2d pos_, vel_, goal_;
  int t_ = 0;
};

// grid_pix: a 24x24 pixel gridworld. The rich observation is the raw image
// (agent pixel 1.0, target pixel 0.5, background 0); the limited observation
// is the same image block-averaged down to 6x6 and replicated back up, so the
// student sees blurry blobs at full dimensionality.
class GridPixEnv {
 public:
  static constexpr int kSide = 24;
  static constexpr int kCoarse = 6;
  static constexpr int kStateDim = kSide * kSide;
  static constexpr int kNumActions = 5;  // up, down, left, right, stay
  static constexpr int kHorizon = 100;
  static constexpr int kTargetX = kSide / 2;  // fixed landmark the agent navigates to
  static constexpr int kTargetY = kSide / 2;
  static constexpr double kStepPenalty = -0.05;
  static constexpr double kTargetReward = 1.0;

  struct Step {
    Vec state;
    double reward = 0.0;
    bool done = false;
    bool truncated = false;
  };

  Vec reset(Rng& rng);
  Step step(int action);
  int steps_taken() const { return t_; }

  int agent_cell() const { return agent_y_ * kSide + agent_x_; }
  int target_cell() const { return target_y_ * kSide + target_x_; }

 private:
  Vec render() const;

  int agent_x_ = 0, agent_y_ = 0, target_x_ = 0, target_y_ = 0;
  int t_ = 0;
};

// How an agent sees the rich state: everything, a fixed subset of dimensions,
// or a pixelated image. Observed dimensionality equals the rich dimensionality
// for "full" and "pixelate"; for "mask" it is indices.size().
struct FeatureSpec {
  std::string kind;          // "full" | "mask" | "pixelate"
  std::vector<int> indices;  // mask: sorted unique kept dims
  int side = 0;              // pixelate: image side length
  int coarse = 0;            // pixelate: coarse resolution (side % coarse == 0)
};

FeatureSpec full_feature_spec();
// `keep` distinct dimensions drawn uniformly without replacement, then sorted.
FeatureSpec make_mask_spec(int state_dim, int keep, Rng& rng);
// Pure function of (state_dim, keep, mask_seed): same arguments, same mask.
FeatureSpec make_mask_spec(int state_dim, int keep, std::uint64_t mask_seed);
FeatureSpec pixelate_spec(int side, int coarse);

int observed_dim(const FeatureSpec& spec, int state_dim);
Vec observe(const FeatureSpec& spec, const Vec& rich_state);
// Column-per-sample batch version.
Mat observe(const FeatureSpec& spec, const Mat& rich_states);

json feature_spec_to_json(const FeatureSpec& spec);
FeatureSpec feature_spec_from_json(const json& j);

// Static facts about an environment, recorded in dataset and policy manifests.
struct EnvInfo {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;   // continuous action size; 0 for discrete
  int num_actions = 0;  // discrete action count; 0 for continuous
  int horizon = 0;
  bool discrete = false;
};

EnvInfo env_info(const std::string& name);
json env_info_to_json(const EnvInfo& info);
EnvInfo env_info_from_json(const json& j);

}  // namespace rcorl
