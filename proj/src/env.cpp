#include "rcorl/env.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace rcorl {

Vec PointReachEnv::assemble_state() const {
  Vec s(kStateDim);
  const Eigen::Vector2d delta = goal_ - pos_;
  // Clearance to each of the four walls: east, west, north, south.
  s << pos_.x(), pos_.y(), vel_.x(), vel_.y(), delta.x(), delta.y(), delta.norm(),
      kArenaBound - pos_.x(), kArenaBound + pos_.x(), kArenaBound - pos_.y(),
      kArenaBound + pos_.y();
  return s;
}

Vec PointReachEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> u(-kArenaBound, kArenaBound);
  pos_ = {u(rng), u(rng)};
  do {
    goal_ = {u(rng), u(rng)};
  } while ((goal_ - pos_).norm() <= kMinGoalClearance);
  vel_.setZero();
  t_ = 0;
  return assemble_state();
}

PointReachEnv::Step PointReachEnv::step(const Vec& action) {
  if (action.size() != kActionDim) throw std::invalid_argument("point_reach: action must be 2-dim");
  if (action.cwiseAbs().maxCoeff() > 1.0)
    throw std::invalid_argument("point_reach: action components must lie in [-1, 1]");
  vel_.x() = std::clamp(vel_.x() + kDt * action[0], -kVMax, kVMax);
  vel_.y() = std::clamp(vel_.y() + kDt * action[1], -kVMax, kVMax);
  pos_.x() = std::clamp(pos_.x() + kDt * vel_.x(), -kArenaBound, kArenaBound);
  pos_.y() = std::clamp(pos_.y() + kDt * vel_.y(), -kArenaBound, kArenaBound);
  t_ += 1;

  const double dist = (goal_ - pos_).norm();
  Step out;
  out.reward = -dist;
  out.done = dist < kGoalRadius;
  if (out.done) out.reward += kGoalBonus;
  out.truncated = !out.done && t_ >= kHorizon;
  out.state = assemble_state();
  return out;
}

Vec GridPixEnv::render() const {
  Vec img = Vec::Zero(kStateDim);
  img[target_cell()] = 0.5;
  img[agent_cell()] = 1.0;  // agent occludes the target on the same cell
  return img;
}

Vec GridPixEnv::reset(Rng& rng) {
  // The target is a fixed landmark; only the agent's spawn is random. Keeping
  // the goal stationary makes the flattened-pixel task learnable by a plain
  // MLP at small sample budgets while the pixelated view still loses the
  // within-block position needed to finish an approach.
  target_x_ = kTargetX;
  target_y_ = kTargetY;
  std::uniform_int_distribution<int> cell(0, kStateDim - 1);
  int a = target_cell();
  while (a == target_cell()) a = cell(rng);
  agent_x_ = a % kSide;
  agent_y_ = a / kSide;
  t_ = 0;
  return render();
}

GridPixEnv::Step GridPixEnv::step(int action) {
  switch (action) {
    case 0: agent_y_ = std::max(0, agent_y_ - 1); break;
    case 1: agent_y_ = std::min(kSide - 1, agent_y_ + 1); break;
    case 2: agent_x_ = std::max(0, agent_x_ - 1); break;
    case 3: agent_x_ = std::min(kSide - 1, agent_x_ + 1); break;
    case 4: break;  // stay
    default: throw std::invalid_argument("grid_pix: action out of range");
  }
  t_ += 1;

  Step out;
  out.done = agent_cell() == target_cell();
  out.reward = kStepPenalty + (out.done ? kTargetReward : 0.0);
  out.truncated = !out.done && t_ >= kHorizon;
  out.state = render();
  return out;
}

FeatureSpec full_feature_spec() { return {"full", {}, 0, 0}; }

FeatureSpec make_mask_spec(int state_dim, int keep, Rng& rng) {
  if (keep < 1 || keep > state_dim)
    throw std::invalid_argument("make_mask_spec: keep must be in [1, state_dim]");
  std::vector<int> pool(static_cast<std::size_t>(state_dim));
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates: after `keep` swaps the prefix is a uniform sample.
  for (int i = 0; i < keep; ++i) {
    std::uniform_int_distribution<int> pick(i, state_dim - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  FeatureSpec spec{"mask", {pool.begin(), pool.begin() + keep}, 0, 0};
  std::sort(spec.indices.begin(), spec.indices.end());
  return spec;
}

FeatureSpec make_mask_spec(int state_dim, int keep, std::uint64_t mask_seed) {
  Rng rng(derive_seed(mask_seed, "mask"));
  return make_mask_spec(state_dim, keep, rng);
}

FeatureSpec pixelate_spec(int side, int coarse) {
  if (side <= 0 || coarse <= 0 || side % coarse != 0)
    throw std::invalid_argument("pixelate_spec: coarse must divide side");
  return {"pixelate", {}, side, coarse};
}

int observed_dim(const FeatureSpec& spec, int state_dim) {
  if (spec.kind == "full" || spec.kind == "pixelate") return state_dim;
  if (spec.kind == "mask") return static_cast<int>(spec.indices.size());
  throw std::invalid_argument("unknown feature spec kind: " + spec.kind);
}

Mat observe(const FeatureSpec& spec, const Mat& rich_states) {
  if (spec.kind == "full") return rich_states;
  if (spec.kind == "mask") {
    Mat out(static_cast<Eigen::Index>(spec.indices.size()), rich_states.cols());
    for (std::size_t i = 0; i < spec.indices.size(); ++i) {
      const int d = spec.indices[i];
      if (d < 0 || d >= rich_states.rows())
        throw std::invalid_argument("observe: mask index out of range");
      out.row(static_cast<Eigen::Index>(i)) = rich_states.row(d);
    }
    return out;
  }
  if (spec.kind == "pixelate") {
    const int side = spec.side;
    const int block = side / spec.coarse;
    if (rich_states.rows() != side * side)
      throw std::invalid_argument("observe: pixelate expects a flattened square image");
    Mat out(rich_states.rows(), rich_states.cols());
    for (Eigen::Index col = 0; col < rich_states.cols(); ++col) {
      for (int by = 0; by < spec.coarse; ++by) {
        for (int bx = 0; bx < spec.coarse; ++bx) {
          double sum = 0.0;
          for (int y = by * block; y < (by + 1) * block; ++y)
            for (int x = bx * block; x < (bx + 1) * block; ++x)
              sum += rich_states(y * side + x, col);
          const double mean = sum / double(block * block);
          for (int y = by * block; y < (by + 1) * block; ++y)
            for (int x = bx * block; x < (bx + 1) * block; ++x)
              out(y * side + x, col) = mean;
        }
      }
    }
    return out;
  }
  throw std::invalid_argument("unknown feature spec kind: " + spec.kind);
}

Vec observe(const FeatureSpec& spec, const Vec& rich_state) {
  return Vec(observe(spec, Mat(rich_state)));
}

json feature_spec_to_json(const FeatureSpec& spec) {
  json j;
  j["kind"] = spec.kind;
  if (spec.kind == "mask") j["indices"] = spec.indices;
  if (spec.kind == "pixelate") {
    j["side"] = spec.side;
    j["coarse"] = spec.coarse;
  }
  return j;
}

FeatureSpec feature_spec_from_json(const json& j) {
  FeatureSpec spec;
  spec.kind = j.at("kind").get<std::string>();
  if (spec.kind == "mask") spec.indices = j.at("indices").get<std::vector<int>>();
  if (spec.kind == "pixelate") {
    spec.side = j.at("side").get<int>();
    spec.coarse = j.at("coarse").get<int>();
  }
  return spec;
}

EnvInfo env_info(const std::string& name) {
  if (name == "point_reach")
    return {name, PointReachEnv::kStateDim, PointReachEnv::kActionDim, 0, PointReachEnv::kHorizon,
            false};
  if (name == "grid_pix")
    return {name, GridPixEnv::kStateDim, 0, GridPixEnv::kNumActions, GridPixEnv::kHorizon, true};
  throw std::invalid_argument("unknown environment: " + name);
}

json env_info_to_json(const EnvInfo& info) {
  json j;
  j["name"] = info.name;
  j["state_dim"] = info.state_dim;
  j["action_dim"] = info.action_dim;
  j["num_actions"] = info.num_actions;
  j["horizon"] = info.horizon;
  j["discrete"] = info.discrete;
  return j;
}

EnvInfo env_info_from_json(const json& j) {
  EnvInfo info;
  info.name = j.at("name").get<std::string>();
  info.state_dim = j.at("state_dim").get<int>();
  info.action_dim = j.at("action_dim").get<int>();
  info.num_actions = j.at("num_actions").get<int>();
  info.horizon = j.at("horizon").get<int>();
  info.discrete = j.at("discrete").get<bool>();
  return info;
}

}  // namespace rcorl
