#pragma once

#include <filesystem>
#include <vector>

#include "rcorl/container.hpp"
#include "rcorl/env.hpp"
#include "rcorl/types.hpp"

namespace rcorl {

// Column-per-transition storage. States are always the full rich observation;
// restricted agents apply their FeatureSpec at batch time. `firsts` marks
// episode starts (used to pick initial states for off-policy evaluation);
// `dones` marks true terminations only — horizon truncations keep done = 0 so
// TD targets bootstrap through them.
struct OfflineDataset {
  json manifest;
  Mat states;       // state_dim x n
  Mat actions;      // action_dim x n (discrete: 1 x n of indices)
  Mat next_states;  // state_dim x n
  Vec rewards;      // n
  Vec dones;        // n, 0/1
  Vec firsts;       // n, 0/1

  Eigen::Index size() const { return states.cols(); }
};

void validate_dataset(const OfflineDataset& d);
void save_dataset(const std::filesystem::path& path, const OfflineDataset& d);
OfflineDataset load_dataset(const std::filesystem::path& path);

// A minibatch gathered from a dataset, shaped for the tape (one column per
// sample; rewards/dones as 1 x b rows).
struct Batch {
  Mat states, actions, next_states;
  Mat rewards, dones;  // 1 x b
};

std::vector<int> sample_indices(Eigen::Index n, int batch, Rng& rng);
Batch gather(const OfflineDataset& d, const std::vector<int>& idx);

// Append-only transition store for online training; snapshot() exports the
// first `upto` transitions verbatim as a dataset.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, Eigen::Index capacity);

  void add(const Vec& state, const Vec& action, double reward, const Vec& next_state, bool done,
           bool first);
  Eigen::Index size() const { return size_; }
  Batch sample(int batch, Rng& rng) const;
  OfflineDataset snapshot(Eigen::Index upto) const;

 private:
  Mat states_, actions_, next_states_;
  Vec rewards_, dones_, firsts_;
  Eigen::Index size_ = 0;
};

// Per-dimension normalization fitted on a dataset's observed features.
// Population standard deviation, floored so constant dimensions stay finite.
struct NormStats {
  Vec mean;
  Vec std;
};

constexpr double kNormStdFloor = 1e-3;

NormStats compute_norm_stats(const Mat& xs);
Mat apply_norm(const NormStats& s, const Mat& xs);
Vec apply_norm(const NormStats& s, const Vec& x);
NormStats identity_norm(int dim);
// Stats for a masked view: rich-state stats restricted to the kept indices.
NormStats restrict_norm(const NormStats& s, const std::vector<int>& indices);
json norm_stats_to_json(const NormStats& s);
NormStats norm_stats_from_json(const json& j);
// Fits rich-state stats, records them in the manifest, and returns them. The
// stored states stay raw so trajectories remain replayable; training code
// standardizes its own view with apply_norm.
NormStats record_norm_stats(OfflineDataset& d);

}  // namespace rcorl
