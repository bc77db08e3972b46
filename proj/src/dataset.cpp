#include "rcorl/dataset.hpp"

#include <stdexcept>

namespace rcorl {

void validate_dataset(const OfflineDataset& d) {
  const auto n = d.states.cols();
  if (d.actions.cols() != n || d.next_states.cols() != n || d.rewards.size() != n ||
      d.dones.size() != n || d.firsts.size() != n)
    throw std::invalid_argument("dataset: column counts disagree");
  if (d.next_states.rows() != d.states.rows())
    throw std::invalid_argument("dataset: state dims disagree");
  if (n == 0) return;
  if (!all_finite(d.states) || !all_finite(d.actions) || !all_finite(d.next_states) ||
      !d.rewards.allFinite())
    throw std::invalid_argument("dataset: non-finite values");
  if (((d.dones.array() != 0.0) && (d.dones.array() != 1.0)).any())
    throw std::invalid_argument("dataset: dones must be 0/1");
  if (((d.firsts.array() != 0.0) && (d.firsts.array() != 1.0)).any())
    throw std::invalid_argument("dataset: firsts must be 0/1");
  if (d.firsts[0] != 1.0)
    throw std::invalid_argument("dataset: first transition must start an episode");
}

void save_dataset(const std::filesystem::path& path, const OfflineDataset& d) {
  validate_dataset(d);
  std::vector<NamedArray> arrays;
  arrays.push_back({"states", d.states});
  arrays.push_back({"actions", d.actions});
  arrays.push_back({"next_states", d.next_states});
  arrays.push_back({"rewards", Mat(d.rewards.transpose())});
  arrays.push_back({"dones", Mat(d.dones.transpose())});
  arrays.push_back({"firsts", Mat(d.firsts.transpose())});
  json manifest = d.manifest;
  manifest["file_kind"] = "dataset";
  write_container(path, manifest, arrays);
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.manifest.value("file_kind", "") != "dataset")
    throw std::runtime_error("load_dataset: not a dataset file: " + path.string());
  OfflineDataset d;
  d.manifest = c.manifest;
  d.states = c.array("states");
  d.actions = c.array("actions");
  d.next_states = c.array("next_states");
  d.rewards = c.array("rewards").row(0).transpose();
  d.dones = c.array("dones").row(0).transpose();
  d.firsts = c.array("firsts").row(0).transpose();
  validate_dataset(d);
  return d;
}

std::vector<int> sample_indices(Eigen::Index n, int batch, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("sample_indices: empty dataset");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
  std::vector<int> idx(static_cast<std::size_t>(batch));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

namespace {

Batch gather_impl(const Mat& states, const Mat& actions, const Mat& next_states,
                  const Vec& rewards, const Vec& dones, const std::vector<int>& idx) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  Batch out;
  out.states.resize(states.rows(), b);
  out.actions.resize(actions.rows(), b);
  out.next_states.resize(next_states.rows(), b);
  out.rewards.resize(1, b);
  out.dones.resize(1, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const int i = idx[static_cast<std::size_t>(j)];
    out.states.col(j) = states.col(i);
    out.actions.col(j) = actions.col(i);
    out.next_states.col(j) = next_states.col(i);
    out.rewards(0, j) = rewards[i];
    out.dones(0, j) = dones[i];
  }
  return out;
}

}  // namespace

Batch gather(const OfflineDataset& d, const std::vector<int>& idx) {
  return gather_impl(d.states, d.actions, d.next_states, d.rewards, d.dones, idx);
}

ReplayBuffer::ReplayBuffer(int state_dim, int action_dim, Eigen::Index capacity)
    : states_(state_dim, capacity),
      actions_(action_dim, capacity),
      next_states_(state_dim, capacity),
      rewards_(capacity),
      dones_(capacity),
      firsts_(capacity) {}

void ReplayBuffer::add(const Vec& state, const Vec& action, double reward, const Vec& next_state,
                       bool done, bool first) {
  if (size_ >= states_.cols()) throw std::length_error("replay buffer full");
  states_.col(size_) = state;
  actions_.col(size_) = action;
  next_states_.col(size_) = next_state;
  rewards_[size_] = reward;
  dones_[size_] = done ? 1.0 : 0.0;
  firsts_[size_] = first ? 1.0 : 0.0;
  ++size_;
}

Batch ReplayBuffer::sample(int batch, Rng& rng) const {
  return gather_impl(states_, actions_, next_states_, rewards_, dones_,
                     sample_indices(size_, batch, rng));
}

OfflineDataset ReplayBuffer::snapshot(Eigen::Index upto) const {
  if (upto < 0 || upto > size_) throw std::out_of_range("replay snapshot: bad length");
  OfflineDataset d;
  d.states = states_.leftCols(upto);
  d.actions = actions_.leftCols(upto);
  d.next_states = next_states_.leftCols(upto);
  d.rewards = rewards_.head(upto);
  d.dones = dones_.head(upto);
  d.firsts = firsts_.head(upto);
  return d;
}

NormStats compute_norm_stats(const Mat& xs) {
  if (xs.cols() == 0) throw std::invalid_argument("compute_norm_stats: empty input");
  NormStats s;
  s.mean = xs.rowwise().mean();
  Mat centered = xs.colwise() - s.mean;
  s.std = (centered.array().square().rowwise().mean()).sqrt().max(kNormStdFloor);
  return s;
}

Mat apply_norm(const NormStats& s, const Mat& xs) {
  if (xs.rows() != s.mean.size())
    throw std::invalid_argument("apply_norm: dimension mismatch");
  return (xs.colwise() - s.mean).array().colwise() / s.std.array();
}

Vec apply_norm(const NormStats& s, const Vec& x) { return Vec(apply_norm(s, Mat(x))); }

NormStats identity_norm(int dim) { return {Vec::Zero(dim), Vec::Ones(dim)}; }

NormStats restrict_norm(const NormStats& s, const std::vector<int>& indices) {
  NormStats out;
  out.mean.resize(static_cast<Eigen::Index>(indices.size()));
  out.std.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= s.mean.size())
      throw std::out_of_range("restrict_norm: index out of range");
    out.mean[static_cast<Eigen::Index>(i)] = s.mean[indices[i]];
    out.std[static_cast<Eigen::Index>(i)] = s.std[indices[i]];
  }
  return out;
}

json norm_stats_to_json(const NormStats& s) {
  json j;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
  return j;
}

NormStats norm_stats_from_json(const json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std_ = j.at("std").get<std::vector<double>>();
  if (mean.size() != std_.size()) throw std::invalid_argument("norm stats: length mismatch");
  NormStats s;
  s.mean = Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const Vec>(std_.data(), static_cast<Eigen::Index>(std_.size()));
  return s;
}

NormStats record_norm_stats(OfflineDataset& d) {
  const NormStats s = compute_norm_stats(d.states);
  d.manifest["norm_stats"] = norm_stats_to_json(s);
  return s;
}

}  // namespace rcorl
