#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "rcorl/dataset.hpp"
#include "rcorl/policy.hpp"

using namespace rcorl;
namespace fs = std::filesystem;

namespace {

OfflineDataset toy_dataset(int n, int state_dim = 3, int action_dim = 2, unsigned seed = 1) {
  Rng rng(seed);
  OfflineDataset d;
  d.states = randn(state_dim, n, rng);
  d.actions = randn(action_dim, n, rng);
  d.next_states = randn(state_dim, n, rng);
  d.rewards = randn(1, n, rng).row(0).transpose();
  d.dones = Vec::Zero(n);
  d.firsts = Vec::Zero(n);
  d.firsts[0] = 1.0;
  if (n > 4) {
    d.dones[3] = 1.0;
    d.firsts[4] = 1.0;
  }
  d.manifest["env"] = env_info_to_json(env_info("point_reach"));
  return d;
}

}  // namespace

TEST_CASE("dataset save/load round-trips bitwise") {
  auto path = fs::temp_directory_path() / "rcorl_test_dataset.bin";
  OfflineDataset d = toy_dataset(12);
  d.manifest["difficulty"] = "medium";
  save_dataset(path, d);
  OfflineDataset back = load_dataset(path);

  CHECK(back.states == d.states);
  CHECK(back.actions == d.actions);
  CHECK(back.next_states == d.next_states);
  CHECK(back.rewards == d.rewards);
  CHECK(back.dones == d.dones);
  CHECK(back.firsts == d.firsts);
  CHECK(back.manifest.at("difficulty") == "medium");
  CHECK(back.size() == 12);
  fs::remove(path);
}

TEST_CASE("dataset validation catches structural problems") {
  OfflineDataset d = toy_dataset(6);
  SUBCASE("mismatched columns") {
    d.rewards = Vec::Zero(5);
    CHECK_THROWS_AS(validate_dataset(d), std::invalid_argument);
  }
  SUBCASE("non-binary dones") {
    d.dones[2] = 0.5;
    CHECK_THROWS_AS(validate_dataset(d), std::invalid_argument);
  }
  SUBCASE("stream must open with an episode start") {
    d.firsts[0] = 0.0;
    CHECK_THROWS_AS(validate_dataset(d), std::invalid_argument);
  }
  SUBCASE("non-finite states") {
    d.states(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(validate_dataset(d), std::invalid_argument);
  }
  SUBCASE("loading a non-dataset container is rejected") {
    auto path = fs::temp_directory_path() / "rcorl_test_not_dataset.bin";
    write_container(path, json{{"file_kind", "policy"}}, {});
    CHECK_THROWS(load_dataset(path));
    fs::remove(path);
  }
}

TEST_CASE("gather pulls the requested columns in order") {
  OfflineDataset d = toy_dataset(8);
  Batch b = gather(d, {5, 0, 5});
  REQUIRE(b.states.cols() == 3);
  CHECK(b.states.col(0) == d.states.col(5));
  CHECK(b.states.col(1) == d.states.col(0));
  CHECK(b.states.col(2) == d.states.col(5));
  CHECK(b.actions.col(1) == d.actions.col(0));
  CHECK(b.rewards(0, 0) == d.rewards[5]);
  CHECK(b.dones(0, 0) == d.dones[5]);
}

TEST_CASE("sample_indices is deterministic, in range, and covers the dataset") {
  Rng a(9), b(9);
  auto i1 = sample_indices(50, 300, a);
  auto i2 = sample_indices(50, 300, b);
  CHECK(i1 == i2);
  std::set<int> seen(i1.begin(), i1.end());
  CHECK(*seen.begin() >= 0);
  CHECK(*seen.rbegin() < 50);
  CHECK(seen.size() > 40);  // uniform sampling should touch most of 50 slots in 300 draws
  CHECK_THROWS_AS(sample_indices(0, 4, a), std::invalid_argument);
}

TEST_CASE("replay buffer appends, samples, and snapshots verbatim") {
  ReplayBuffer buf(3, 2, 10);
  Rng rng(4);
  Mat states = randn(3, 6, rng), actions = randn(2, 6, rng), nexts = randn(3, 6, rng);
  for (int i = 0; i < 6; ++i)
    buf.add(states.col(i), actions.col(i), double(i), nexts.col(i), i == 2, i == 0 || i == 3);

  CHECK(buf.size() == 6);
  OfflineDataset snap = buf.snapshot(4);
  CHECK(snap.size() == 4);
  CHECK(snap.states == states.leftCols(4));
  CHECK(snap.actions == actions.leftCols(4));
  CHECK(snap.rewards[2] == 2.0);
  CHECK(snap.dones[2] == 1.0);
  CHECK(snap.firsts[0] == 1.0);
  CHECK(snap.firsts[3] == 1.0);
  CHECK_NOTHROW(validate_dataset(snap));

  Batch batch = buf.sample(32, rng);
  CHECK(batch.states.cols() == 32);
  CHECK(all_finite(batch.states));

  ReplayBuffer tiny(1, 1, 1);
  tiny.add(Vec::Ones(1), Vec::Ones(1), 0.0, Vec::Ones(1), false, true);
  CHECK_THROWS_AS(tiny.add(Vec::Ones(1), Vec::Ones(1), 0.0, Vec::Ones(1), false, false),
                  std::length_error);
}

TEST_CASE("normalization uses population std with a floor") {
  Mat xs(2, 4);
  xs << 1, 2, 3, 4,   // mean 2.5, population var 1.25
      7, 7, 7, 7;     // constant dimension hits the floor
  NormStats s = compute_norm_stats(xs);
  CHECK(s.mean[0] == doctest::Approx(2.5));
  CHECK(s.mean[1] == doctest::Approx(7.0));
  CHECK(s.std[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-14));
  CHECK(s.std[1] == kNormStdFloor);

  Mat z = apply_norm(s, xs);
  CHECK(z.row(0).mean() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(z.row(0).array().square().mean() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z.row(1).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  NormStats id = identity_norm(3);
  Vec v(3);
  v << 1, -2, 3;
  CHECK(apply_norm(id, v) == v);
  CHECK_THROWS_AS(apply_norm(s, Vec::Zero(3).eval()), std::invalid_argument);
}

TEST_CASE("greedy and epsilon-greedy action selection") {
  Vec q(4);
  q << 0.5, 2.0, 2.0, -1.0;
  CHECK(greedy_action(q) == 1);  // lowest index wins the tie

  Rng rng(77);
  int explored = 0;
  for (int i = 0; i < 2000; ++i)
    if (epsilon_greedy(q, 0.5, rng) != 1) ++explored;
  // eps = 0.5 explores uniformly, so non-greedy picks appear ~3/8 of the time.
  CHECK(explored > 500);
  CHECK(explored < 1000);

  int greedy_hits = 0;
  for (int i = 0; i < 100; ++i)
    if (epsilon_greedy(q, 0.0, rng) == 1) ++greedy_hits;
  CHECK(greedy_hits == 100);
}

TEST_CASE("continuous policy applies observe, normalize, predict, act in order") {
  Rng rng(123);
  ContinuousPolicy p;
  p.env = env_info("point_reach");
  p.spec = make_mask_spec(11, 6, rng);
  Mat obs_sample = randn(6, 40, rng);
  p.obs_norm = compute_norm_stats(obs_sample);
  p.actor = make_mlp({6, 16, 2}, Activation::kRelu, Activation::kTanh, rng);

  Vec rich = randn(11, 1, rng).col(0);
  Vec manual = mlp_forward(p.actor, apply_norm(p.obs_norm, observe(p.spec, rich)));
  CHECK(p.act(rich) == manual);
  CHECK(p.act(rich).cwiseAbs().maxCoeff() <= 1.0);

  SUBCASE("predictor stage feeds the actor when present") {
    p.predictor = make_mlp({6, 8, 11}, Activation::kRelu, Activation::kIdentity, rng);
    p.actor = make_mlp({11, 16, 2}, Activation::kRelu, Activation::kTanh, rng);
    Vec expect = mlp_forward(
        p.actor, mlp_forward(*p.predictor, apply_norm(p.obs_norm, observe(p.spec, rich))));
    CHECK(p.act(rich) == expect);
  }
}

TEST_CASE("policy files round-trip both variants") {
  auto path = fs::temp_directory_path() / "rcorl_test_policy.bin";
  Rng rng(321);

  SUBCASE("continuous with predictor") {
    ContinuousPolicy p;
    p.env = env_info("point_reach");
    p.spec = make_mask_spec(11, 5, rng);
    p.obs_norm = compute_norm_stats(randn(5, 30, rng));
    p.predictor = make_mlp({5, 8, 11}, Activation::kRelu, Activation::kIdentity, rng);
    p.actor = make_mlp({11, 16, 2}, Activation::kRelu, Activation::kTanh, rng);
    save_policy(path, p);

    Policy loaded = load_policy(path);
    auto& q = std::get<ContinuousPolicy>(loaded);
    Vec rich = randn(11, 1, rng).col(0);
    CHECK(q.act(rich) == p.act(rich));
    CHECK(q.spec.indices == p.spec.indices);
    CHECK(q.env.name == "point_reach");
    CHECK(q.predictor.has_value());
  }
  SUBCASE("discrete") {
    DiscretePolicy p;
    p.env = env_info("grid_pix");
    p.spec = pixelate_spec(24, 6);
    p.obs_norm = identity_norm(24 * 24);
    p.qnet = make_mlp({24 * 24, 32, 4}, Activation::kRelu, Activation::kIdentity, rng);
    save_policy(path, p);

    Policy loaded = load_policy(path);
    auto& q = std::get<DiscretePolicy>(loaded);
    GridPixEnv env;
    Vec s = env.reset(rng);
    CHECK(q.act(s) == p.act(s));
    CHECK(q.q_values(s) == p.q_values(s));
  }
  fs::remove(path);
}

TEST_CASE("record_norm_stats fits the standardizer without touching the data") {
  OfflineDataset d = toy_dataset(64, 4);
  const Mat raw = d.states;
  NormStats stats = record_norm_stats(d);
  CHECK(d.states == raw);  // stored trajectories stay replayable

  Mat z = apply_norm(stats, d.states);
  for (int i = 0; i < 4; ++i) {
    const double mean = z.row(i).mean();
    const double var = (z.row(i).array() - mean).square().mean();
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(d.manifest.contains("norm_stats"));
  NormStats back = norm_stats_from_json(d.manifest.at("norm_stats"));
  CHECK(back.mean == stats.mean);
  CHECK(back.std == stats.std);

  SUBCASE("constant feature hits the std floor instead of dividing by zero") {
    OfflineDataset flat = toy_dataset(16, 2);
    flat.states.row(1).setConstant(5.0);
    NormStats s = record_norm_stats(flat);
    CHECK(s.std[1] == kNormStdFloor);
    CHECK((apply_norm(s, flat.states).row(1).array() == 0.0).all());
  }
}

TEST_CASE("restrict_norm is the restriction of the full normalizer") {
  Rng rng(3);
  Mat states = randn(6, 40, rng);
  NormStats full = compute_norm_stats(states);
  std::vector<int> keep{1, 3, 4};
  NormStats sub = restrict_norm(full, keep);

  FeatureSpec mask{"mask", keep, 0, 0};
  Mat direct = apply_norm(sub, observe(mask, states));
  Mat via_full = observe(mask, apply_norm(full, states));
  CHECK((direct - via_full).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));

  CHECK_THROWS_AS(restrict_norm(full, std::vector<int>{6}), std::out_of_range);
  CHECK_THROWS_AS(restrict_norm(full, std::vector<int>{-1}), std::out_of_range);
}

TEST_CASE("norm stats JSON serialization round-trips and validates") {
  Rng rng(9);
  NormStats stats = compute_norm_stats(randn(5, 30, rng));
  json j = norm_stats_to_json(stats);
  NormStats back = norm_stats_from_json(j);
  CHECK(back.mean == stats.mean);
  CHECK(back.std == stats.std);

  json bad = j;
  bad["std"] = std::vector<double>{1.0};
  CHECK_THROWS_AS(norm_stats_from_json(bad), std::invalid_argument);
}
