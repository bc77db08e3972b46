#include "rcorl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rcorl {

namespace fs = std::filesystem;

namespace {

// ---- config <-> json (fixed key order keeps the content hashes stable) ----

json td3_to_json(const Td3Config& c) {
  json j;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["policy_delay"] = c.policy_delay;
  j["policy_noise"] = c.policy_noise;
  j["noise_clip"] = c.noise_clip;
  j["exploration_noise"] = c.exploration_noise;
  j["batch_size"] = c.batch_size;
  j["alpha"] = c.alpha;
  j["learning_rate"] = c.learning_rate;
  j["hidden"] = c.hidden;
  j["warmup_steps"] = c.warmup_steps;
  return j;
}

Td3Config td3_from_json(const json& j, Td3Config c) {
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.policy_delay = j.value("policy_delay", c.policy_delay);
  c.policy_noise = j.value("policy_noise", c.policy_noise);
  c.noise_clip = j.value("noise_clip", c.noise_clip);
  c.exploration_noise = j.value("exploration_noise", c.exploration_noise);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.alpha = j.value("alpha", c.alpha);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.hidden = j.value("hidden", c.hidden);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  return c;
}

json cql_to_json(const CqlConfig& c) {
  json j;
  j["gamma"] = c.gamma;
  j["alpha_cql"] = c.alpha_cql;
  j["beta"] = c.beta;
  j["target_interval"] = c.target_interval;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["hidden"] = c.hidden;
  j["eval_epsilon"] = c.eval_epsilon;
  j["eps_start"] = c.eps_start;
  j["eps_end"] = c.eps_end;
  j["eps_decay_steps"] = c.eps_decay_steps;
  return j;
}

CqlConfig cql_from_json(const json& j, CqlConfig c) {
  c.gamma = j.value("gamma", c.gamma);
  c.alpha_cql = j.value("alpha_cql", c.alpha_cql);
  c.beta = j.value("beta", c.beta);
  c.target_interval = j.value("target_interval", c.target_interval);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.hidden = j.value("hidden", c.hidden);
  c.eval_epsilon = j.value("eval_epsilon", c.eval_epsilon);
  c.eps_start = j.value("eps_start", c.eps_start);
  c.eps_end = j.value("eps_end", c.eps_end);
  c.eps_decay_steps = j.value("eps_decay_steps", c.eps_decay_steps);
  return c;
}

json collect_to_json(const CollectConfig& c) {
  json j;
  j["online_steps"] = c.online_steps;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["size_budget"] = static_cast<long long>(c.size_budget);
  j["rollout_noise"] = c.rollout_noise;
  j["rollout_epsilon"] = c.rollout_epsilon;
  j["random_floor_episodes"] = c.random_floor_episodes;
  j["td3"] = td3_to_json(c.td3);
  j["dqn"] = cql_to_json(c.dqn);
  return j;
}

CollectConfig collect_from_json(const json& j, CollectConfig c) {
  c.online_steps = j.value("online_steps", c.online_steps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.size_budget = j.value("size_budget", static_cast<long long>(c.size_budget));
  c.rollout_noise = j.value("rollout_noise", c.rollout_noise);
  c.rollout_epsilon = j.value("rollout_epsilon", c.rollout_epsilon);
  c.random_floor_episodes = j.value("random_floor_episodes", c.random_floor_episodes);
  if (j.contains("td3")) c.td3 = td3_from_json(j.at("td3"), c.td3);
  if (j.contains("dqn")) c.dqn = cql_from_json(j.at("dqn"), c.dqn);
  return c;
}

json offline_to_json(const OfflineAlgoConfig& c) {
  json j;
  j["algo"] = c.algo;
  j["beta1"] = c.transfer.beta1;
  j["beta2"] = c.transfer.beta2;
  j["total_steps"] = c.total_steps;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["predictor_steps"] = c.predictor_steps;
  j["predictor_hidden"] = c.predictor_hidden;
  j["td3"] = td3_to_json(c.td3);
  return j;
}

OfflineAlgoConfig offline_from_json(const json& j, OfflineAlgoConfig c) {
  c.algo = j.value("algo", c.algo);
  c.transfer.beta1 = j.value("beta1", c.transfer.beta1);
  c.transfer.beta2 = j.value("beta2", c.transfer.beta2);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.predictor_steps = j.value("predictor_steps", c.predictor_steps);
  c.predictor_hidden = j.value("predictor_hidden", c.predictor_hidden);
  if (j.contains("td3")) c.td3 = td3_from_json(j.at("td3"), c.td3);
  return c;
}

json discrete_offline_to_json(const DiscreteOfflineConfig& c) {
  json j;
  j["total_steps"] = c.total_steps;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["use_teacher"] = c.use_teacher;
  j["cql"] = cql_to_json(c.cql);
  return j;
}

DiscreteOfflineConfig discrete_offline_from_json(const json& j, DiscreteOfflineConfig c) {
  c.total_steps = j.value("total_steps", c.total_steps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.use_teacher = j.value("use_teacher", c.use_teacher);
  if (j.contains("cql")) c.cql = cql_from_json(j.at("cql"), c.cql);
  return c;
}

json algorithm_to_json(const AlgorithmSpec& a) {
  json j;
  j["name"] = a.name;
  j["algo"] = a.algo;
  j["beta1"] = a.transfer.beta1;
  j["beta2"] = a.transfer.beta2;
  j["beta"] = a.beta;
  j["student_width"] = a.student_width;
  return j;
}

AlgorithmSpec algorithm_from_json(const json& j) {
  AlgorithmSpec a;
  a.algo = j.value("algo", a.algo);
  a.name = j.value("name", a.algo);
  a.transfer.beta1 = j.value("beta1", a.transfer.beta1);
  a.transfer.beta2 = j.value("beta2", a.transfer.beta2);
  a.beta = j.value("beta", a.beta);
  a.student_width = j.value("student_width", a.student_width);
  return a;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ExperimentManifest default_manifest() {
  ExperimentManifest m;
  m.algorithms = {
      {"td3bc", "td3bc", {1.0, 0.0}, 0.8, 0},
      {"transfer_0.5_0.5", "transfer", {0.5, 0.5}, 0.8, 0},
      {"transfer_0.0_1.0", "transfer", {0.0, 1.0}, 0.8, 0},
  };
  m.collect.online_steps = 60000;
  m.collect.eval_every = 2000;
  m.collect.eval_episodes = 10;
  m.collect.size_budget = 50000;
  m.offline.total_steps = 30000;
  m.offline.eval_every = 1000;
  m.offline.eval_episodes = 10;
  m.offline_discrete.total_steps = 30000;
  m.offline_discrete.eval_every = 1000;
  m.offline_discrete.eval_episodes = 10;
  return m;
}

json manifest_to_json(const ExperimentManifest& m) {
  json j;
  j["env_id"] = m.env_id;
  j["constrained_dims"] = m.constrained_dims;
  j["mask_seeds"] = m.mask_seeds;
  j["difficulties"] = m.difficulties;
  j["algo_seeds"] = m.algo_seeds;
  j["algorithms"] = json::array();
  for (const auto& a : m.algorithms) j["algorithms"].push_back(algorithm_to_json(a));
  j["collect"] = collect_to_json(m.collect);
  j["offline"] = offline_to_json(m.offline);
  j["offline_discrete"] = discrete_offline_to_json(m.offline_discrete);
  j["teacher_steps"] = m.teacher_steps;
  j["teacher_eval_every"] = m.teacher_eval_every;
  j["teacher_eval_episodes"] = m.teacher_eval_episodes;
  j["teacher_seed"] = m.teacher_seed;
  j["ref_episodes"] = m.ref_episodes;
  j["output_dir"] = m.output_dir.string();
  return j;
}

ExperimentManifest manifest_from_json(const json& j) {
  ExperimentManifest m = default_manifest();
  m.env_id = j.value("env_id", m.env_id);
  m.constrained_dims = j.value("constrained_dims", m.constrained_dims);
  m.mask_seeds = j.value("mask_seeds", m.mask_seeds);
  m.difficulties = j.value("difficulties", m.difficulties);
  m.algo_seeds = j.value("algo_seeds", m.algo_seeds);
  if (j.contains("algorithms")) {
    m.algorithms.clear();
    for (const auto& a : j.at("algorithms")) m.algorithms.push_back(algorithm_from_json(a));
  }
  if (j.contains("collect")) m.collect = collect_from_json(j.at("collect"), m.collect);
  if (j.contains("offline")) m.offline = offline_from_json(j.at("offline"), m.offline);
  if (j.contains("offline_discrete"))
    m.offline_discrete = discrete_offline_from_json(j.at("offline_discrete"), m.offline_discrete);
  m.teacher_steps = j.value("teacher_steps", m.teacher_steps);
  m.teacher_eval_every = j.value("teacher_eval_every", m.teacher_eval_every);
  m.teacher_eval_episodes = j.value("teacher_eval_episodes", m.teacher_eval_episodes);
  m.teacher_seed = j.value("teacher_seed", m.teacher_seed);
  m.ref_episodes = j.value("ref_episodes", m.ref_episodes);
  m.output_dir = fs::path(j.value("output_dir", m.output_dir.string()));
  return m;
}

std::uint64_t manifest_digest(const ExperimentManifest& m) {
  json j = manifest_to_json(m);
  j.erase("output_dir");  // where results land does not change what they are
  return fnv1a64(j.dump());
}

// ---- minimal TOML ----

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_path(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == '.') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(trim(cur));
  for (const auto& p : parts)
    if (p.empty()) throw std::invalid_argument("toml: empty section-path component");
  return parts;
}

json parse_toml_value(const std::string& raw) {
  if (raw.empty()) throw std::invalid_argument("toml: empty value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"')
      throw std::invalid_argument("toml: unterminated string: " + raw);
    return raw.substr(1, raw.size() - 2);
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') throw std::invalid_argument("toml: unterminated array: " + raw);
    json arr = json::array();
    const std::string body = raw.substr(1, raw.size() - 2);
    std::string cur;
    bool in_str = false;
    int depth = 0;
    for (char ch : body) {
      if (ch == '"') in_str = !in_str;
      if (!in_str && ch == '[') ++depth;
      if (!in_str && ch == ']') --depth;
      if (ch == ',' && !in_str && depth == 0) {
        if (!trim(cur).empty()) arr.push_back(parse_toml_value(trim(cur)));
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!trim(cur).empty()) arr.push_back(parse_toml_value(trim(cur)));
    return arr;
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(raw, &pos);
    if (pos == raw.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos == raw.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("toml: cannot parse value: " + raw);
}

}  // namespace

json parse_toml_subset(const std::string& text) {
  json root = json::object();
  json* section = &root;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string stripped;
    bool in_str = false;
    for (char ch : line) {
      if (ch == '"') in_str = !in_str;
      if (ch == '#' && !in_str) break;
      stripped += ch;
    }
    const std::string t = trim(stripped);
    if (t.empty()) continue;
    if (t.size() >= 4 && t.compare(0, 2, "[[") == 0 && t.compare(t.size() - 2, 2, "]]") == 0) {
      json* node = &root;
      auto parts = split_path(trim(t.substr(2, t.size() - 4)));
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      json& arr = (*node)[parts.back()];
      if (!arr.is_array()) arr = json::array();
      arr.push_back(json::object());
      section = &arr.back();
    } else if (t.front() == '[' && t.back() == ']') {
      json* node = &root;
      for (const auto& p : split_path(trim(t.substr(1, t.size() - 2)))) node = &(*node)[p];
      if (!node->is_object()) *node = json::object();
      section = node;
    } else {
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("toml: expected key = value, got: " + t);
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw std::invalid_argument("toml: empty key in: " + t);
      (*section)[key] = parse_toml_value(trim(t.substr(eq + 1)));
    }
  }
  return root;
}

ExperimentManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  if (path.extension() == ".toml") {
    std::stringstream buf;
    buf << in.rdbuf();
    return manifest_from_json(parse_toml_subset(buf.str()));
  }
  return manifest_from_json(json::parse(in));
}

// ---- content-addressed cache ----

fs::path cache_root() {
  if (const char* env = std::getenv("RCORL_CACHE_DIR"); env != nullptr && *env != '\0')
    return fs::path(env);
  return fs::path(".rcorl_cache");
}

fs::path ensure_cached(const std::string& stage, const json& params,
                       const std::function<void(const fs::path&)>& produce) {
  const fs::path root = cache_root();
  fs::create_directories(root);
  const std::string name = stage + "-" + hex64(fnv1a64(params.dump()));
  const fs::path target = root / name;
  if (fs::exists(target)) return target;
  const fs::path staging = root / (name + ".tmp");
  std::error_code ec;
  fs::remove_all(staging, ec);  // leftover from an interrupted run
  produce(staging);
  if (!fs::exists(staging))
    throw std::runtime_error("cache stage " + stage + " produced no artifact");
  fs::rename(staging, target);
  return target;
}

std::uint64_t collection_seed_for(const std::string& env_id, int dim, std::uint64_t mask_seed) {
  return derive_seed(mask_seed, "collect-" + env_id + "-dim-" + std::to_string(dim));
}

// ---- cached pipeline stages ----

namespace {

json teacher_params(const ExperimentManifest& m) {
  json p;
  p["stage"] = "teacher";
  p["env"] = m.env_id;
  p["steps"] = m.teacher_steps;
  p["eval_every"] = m.teacher_eval_every;
  p["eval_episodes"] = m.teacher_eval_episodes;
  p["seed"] = m.teacher_seed;
  p["config"] =
      env_info(m.env_id).discrete ? cql_to_json(m.collect.dqn) : td3_to_json(m.collect.td3);
  return p;
}

OfflineAlgoConfig resolved_continuous(const ExperimentManifest& m, const AlgorithmSpec& a) {
  OfflineAlgoConfig cfg = m.offline;
  cfg.algo = a.algo;
  cfg.transfer = a.transfer;
  return cfg;
}

DiscreteOfflineConfig resolved_discrete(const ExperimentManifest& m, const AlgorithmSpec& a) {
  DiscreteOfflineConfig cfg = m.offline_discrete;
  cfg.use_teacher = a.algo == "cql_transfer";
  cfg.cql.beta = a.beta;
  if (a.student_width > 0) cfg.cql.hidden = {a.student_width, a.student_width};
  return cfg;
}

bool consumes_teacher(const AlgorithmSpec& a) {
  if (a.algo == "truebc" || a.algo == "cql_transfer") return true;
  return a.algo == "transfer" && a.transfer.beta2 > 0.0;
}

json train_stage_params(const ExperimentManifest& m, const FeatureSpec& spec, int dim,
                        std::uint64_t mask_seed, const std::string& difficulty,
                        const AlgorithmSpec& algo, std::uint64_t algo_seed) {
  json p;
  p["stage"] = "train";
  p["env"] = m.env_id;
  p["spec"] = feature_spec_to_json(spec);
  p["collect"] = collect_to_json(m.collect);
  p["dim"] = dim;
  p["mask_seed"] = mask_seed;
  p["difficulty"] = difficulty;
  p["algorithm"] = algorithm_to_json(algo);
  p["offline"] = env_info(m.env_id).discrete
                     ? discrete_offline_to_json(resolved_discrete(m, algo))
                     : offline_to_json(resolved_continuous(m, algo));
  p["teacher"] = consumes_teacher(algo) ? teacher_params(m) : json();
  p["seed"] = algo_seed;
  return p;
}

}  // namespace

fs::path ensure_tiers(const ExperimentManifest& m, const FeatureSpec& spec, int dim,
                      std::uint64_t mask_seed) {
  json p;
  p["stage"] = "tiers";
  p["env"] = m.env_id;
  p["spec"] = feature_spec_to_json(spec);
  p["collect"] = collect_to_json(m.collect);
  p["dim"] = dim;
  p["mask_seed"] = mask_seed;
  return ensure_cached("tiers", p, [&](const fs::path& staging) {
    TierBundle t = collect_tiers(m.env_id, spec, m.collect, mask_seed,
                                 collection_seed_for(m.env_id, dim, mask_seed));
    fs::create_directories(staging);
    save_dataset(staging / "medium_replay.bin", t.medium_replay);
    save_dataset(staging / "medium.bin", t.medium);
    save_dataset(staging / "medium_expert.bin", t.medium_expert);
    save_dataset(staging / "expert.bin", t.expert);
  });
}

TeacherArtifact ensure_teacher(const ExperimentManifest& m) {
  const bool discrete = env_info(m.env_id).discrete;
  const fs::path dir = ensure_cached("teacher", teacher_params(m), [&](const fs::path& staging) {
    Policy policy;
    double score = 0.0;
    if (discrete) {
      DiscreteOnlineResult r =
          dqn_online_train(m.collect.dqn, full_feature_spec(), m.teacher_steps,
                           m.teacher_eval_every, m.teacher_eval_episodes, m.teacher_seed);
      policy = r.policy;
      score = final_score(r.trace);
    } else {
      OnlineTrainResult r =
          td3_online_train(m.collect.td3, full_feature_spec(), m.teacher_steps,
                           m.teacher_eval_every, m.teacher_eval_episodes, m.teacher_seed);
      policy = r.policy;
      score = final_score(r.trace);
    }
    fs::create_directories(staging);
    save_policy(staging / "policy.bin", policy);
    json j;
    j["score"] = score;
    std::ofstream out(staging / "score.json", std::ios::binary);
    out << j.dump(2) << "\n";
  });
  TeacherArtifact a;
  a.policy = load_policy(dir / "policy.bin");
  std::ifstream in(dir / "score.json");
  if (!in) throw std::runtime_error("teacher artifact missing score.json");
  a.score = json::parse(in).at("score").get<double>();
  return a;
}

ReferenceScores ensure_refs(const ExperimentManifest& m) {
  json p;
  p["stage"] = "refs";
  p["teacher"] = teacher_params(m);
  p["episodes"] = m.ref_episodes;
  const fs::path f = ensure_cached("refs", p, [&](const fs::path& staging) {
    TeacherArtifact teacher = ensure_teacher(m);
    ReferenceScores refs;
    refs.random =
        random_rollout_return(m.env_id, m.ref_episodes, derive_seed(m.teacher_seed, "refs-random"));
    refs.expert =
        rollout_return(teacher.policy, m.ref_episodes, derive_seed(m.teacher_seed, "refs-expert"));
    if (!(refs.expert > refs.random))
      throw std::runtime_error("refs: teacher did not beat the random baseline");
    save_reference_scores(staging, refs);
  });
  return load_reference_scores(f);
}

// ---- grid execution ----

namespace {

double train_cell(const OfflineDataset& data, const FeatureSpec& spec,
                  const ExperimentManifest& m, const AlgorithmSpec& algo, const Policy& teacher,
                  std::uint64_t seed, json& details) {
  if (env_info(m.env_id).discrete) {
    const DiscreteOfflineConfig cfg = resolved_discrete(m, algo);
    const DiscretePolicy* t = cfg.use_teacher ? &std::get<DiscretePolicy>(teacher) : nullptr;
    DiscreteTrainResult r = train_discrete_offline(data, spec, cfg, t, seed);
    details = r.details;
    return final_score(r.trace);
  }
  const OfflineAlgoConfig cfg = resolved_continuous(m, algo);
  const ContinuousPolicy* t = nullptr;
  if (cfg.algo == "transfer" || cfg.algo == "truebc") t = &std::get<ContinuousPolicy>(teacher);
  OfflineTrainResult r = train_continuous_offline(data, spec, cfg, t, seed);
  details = r.details;
  return final_score(r.trace);
}

}  // namespace

std::vector<ReportRow> aggregate_rows(const std::vector<CellResult>& cells,
                                      const std::string& baseline) {
  using Key = std::tuple<std::string, int, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    Key k{c.difficulty, c.dim, c.algorithm};
    if (groups.find(k) == groups.end()) order.push_back(k);
    groups[k].push_back(&c);
  }

  std::vector<ReportRow> rows;
  std::map<std::pair<std::string, int>, double> baseline_mean;
  for (const Key& k : order) {
    ReportRow r;
    r.difficulty = std::get<0>(k);
    r.dim = std::get<1>(k);
    r.algorithm = std::get<2>(k);

    std::vector<const CellResult*> ok;
    int failed = 0;
    for (const CellResult* c : groups[k]) {
      if (c->error.empty())
        ok.push_back(c);
      else
        ++failed;
    }
    if (ok.empty()) {
      r.error = "all cells failed";
      rows.push_back(r);
      continue;
    }
    if (failed > 0) r.error = std::to_string(failed) + " cells failed";

    double sum = 0.0;
    for (const CellResult* c : ok) sum += c->normalized;
    r.mean_score = sum / double(ok.size());

    // Spread across algorithm seeds: std of each seed's mean over mask seeds.
    std::map<std::uint64_t, std::pair<double, int>> per_seed;
    for (const CellResult* c : ok) {
      per_seed[c->algo_seed].first += c->normalized;
      per_seed[c->algo_seed].second += 1;
    }
    double seed_sum = 0.0;
    for (const auto& [_, acc] : per_seed) seed_sum += acc.first / acc.second;
    const double seed_mean = seed_sum / double(per_seed.size());
    double var = 0.0;
    for (const auto& [_, acc] : per_seed) {
      const double d = acc.first / acc.second - seed_mean;
      var += d * d;
    }
    r.std_score = std::sqrt(var / double(per_seed.size()));

    // The teacher's normalized score is 100 by construction (it is the expert
    // reference), so "% change vs teacher" reduces to mean - 100.
    r.vs_teacher_pct = r.mean_score - 100.0;
    if (r.error.empty() && r.algorithm == baseline)
      baseline_mean[{r.difficulty, r.dim}] = r.mean_score;
    rows.push_back(r);
  }

  for (ReportRow& r : rows) {
    const auto it = baseline_mean.find({r.difficulty, r.dim});
    if (it == baseline_mean.end()) {
      if (r.error.empty()) r.error = "missing baseline";
      continue;
    }
    const double base = it->second;
    r.vs_baseline_pct = 100.0 * (r.mean_score - base) / std::max(std::abs(base), 1e-9);
    r.recovered_pct = r.algorithm == baseline ? 0.0 : r.mean_score - base;
  }
  return rows;
}

std::vector<Table> summarize(const std::vector<ReportRow>& rows, const std::string& baseline) {
  std::map<std::pair<std::string, int>, double> baseline_mean;
  for (const ReportRow& r : rows)
    if (r.error.empty() && r.algorithm == baseline) baseline_mean[{r.difficulty, r.dim}] = r.mean_score;

  std::vector<std::string> algos;
  for (const ReportRow& r : rows)
    if (r.algorithm != baseline && std::find(algos.begin(), algos.end(), r.algorithm) == algos.end())
      algos.push_back(r.algorithm);

  Table success{"success_vs_baseline", {"algorithm", "cells", "beating_baseline_pct"}, {}};
  Table improvement{"mean_improvement", {"algorithm", "cells", "mean_improvement_pct"}, {}};
  for (const std::string& algo : algos) {
    int n = 0, wins = 0;
    double imp = 0.0;
    for (const ReportRow& r : rows) {
      if (r.algorithm != algo || !r.error.empty()) continue;
      const auto it = baseline_mean.find({r.difficulty, r.dim});
      if (it == baseline_mean.end()) continue;
      ++n;
      if (r.mean_score > it->second) ++wins;  // ties count as failures
      imp += r.vs_baseline_pct;
    }
    if (n == 0) continue;
    json s;
    s["algorithm"] = algo;
    s["cells"] = n;
    s["beating_baseline_pct"] = 100.0 * double(wins) / double(n);
    success.rows.push_back(s);
    json i;
    i["algorithm"] = algo;
    i["cells"] = n;
    i["mean_improvement_pct"] = imp / double(n);
    improvement.rows.push_back(i);
  }

  Table vs_teacher{
      "vs_teacher",
      {"difficulty", "dim", "algorithm", "mean_score", "std_score", "vs_teacher_pct",
       "recovered_pct"},
      {}};
  for (const ReportRow& r : rows) {
    if (!r.error.empty()) continue;
    json v;
    v["difficulty"] = r.difficulty;
    v["dim"] = r.dim;
    v["algorithm"] = r.algorithm;
    v["mean_score"] = r.mean_score;
    v["std_score"] = r.std_score;
    v["vs_teacher_pct"] = r.vs_teacher_pct;
    v["recovered_pct"] = r.recovered_pct;
    vs_teacher.rows.push_back(v);
  }
  return {success, improvement, vs_teacher};
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out += ch;
  }
  out += "\"";
  return out;
}

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return csv_escape(v.get<std::string>());
  if (v.is_number_float()) return format_number(v.get<double>());
  return v.dump();
}

}  // namespace

void emit_csv(const std::vector<Table>& tables, const fs::path& dir) {
  fs::create_directories(dir);
  for (const Table& t : tables) {
    const fs::path csv_path = dir / (t.name + ".csv");
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    for (std::size_t i = 0; i < t.columns.size(); ++i)
      csv << (i ? "," : "") << csv_escape(t.columns[i]);
    csv << "\n";
    for (const json& row : t.rows) {
      for (std::size_t i = 0; i < t.columns.size(); ++i) {
        const auto& col = t.columns[i];
        csv << (i ? "," : "") << csv_cell(row.contains(col) ? row.at(col) : json());
      }
      csv << "\n";
    }

    json mirror;
    mirror["name"] = t.name;
    mirror["columns"] = t.columns;
    mirror["rows"] = t.rows;
    std::ofstream js(dir / (t.name + ".json"), std::ios::binary);
    if (!js) throw std::runtime_error("cannot write " + (dir / (t.name + ".json")).string());
    js << mirror.dump(2) << "\n";
  }
}

PipelineResult run_pipeline(const ExperimentManifest& m) {
  PipelineResult out;
  out.digest = manifest_digest(m);
  out.report_dir = m.output_dir;

  TeacherArtifact teacher = ensure_teacher(m);
  out.teacher_score = teacher.score;
  out.refs = ensure_refs(m);

  const EnvInfo info = env_info(m.env_id);
  for (int dim : m.constrained_dims) {
    for (std::uint64_t mask_seed : m.mask_seeds) {
      // Continuous envs drop random feature subsets; the pixel env's
      // constraint is a coarse resolution, so "dim" is the coarse side there.
      const FeatureSpec spec = info.discrete ? pixelate_spec(GridPixEnv::kSide, dim)
                                             : make_mask_spec(info.state_dim, dim, mask_seed);
      std::string collect_error;
      fs::path tier_dir;
      try {
        tier_dir = ensure_tiers(m, spec, dim, mask_seed);
      } catch (const std::exception& e) {
        collect_error = e.what();
      }
      for (const std::string& difficulty : m.difficulties) {
        for (const AlgorithmSpec& algo : m.algorithms) {
          for (std::uint64_t algo_seed : m.algo_seeds) {
            CellResult cell;
            cell.difficulty = difficulty;
            cell.dim = dim;
            cell.mask_seed = mask_seed;
            cell.algorithm = algo.name;
            cell.algo_seed = algo_seed;
            if (!collect_error.empty()) {
              cell.error = collect_error;
            } else {
              try {
                const json params =
                    train_stage_params(m, spec, dim, mask_seed, difficulty, algo, algo_seed);
                const fs::path f =
                    ensure_cached("train", params, [&](const fs::path& staging) {
                      OfflineDataset data = load_dataset(tier_dir / (difficulty + ".bin"));
                      json details;
                      const double score =
                          train_cell(data, spec, m, algo, teacher.policy, algo_seed, details);
                      json j;
                      j["final_score"] = score;
                      j["details"] = details;
                      std::ofstream o(staging, std::ios::binary);
                      if (!o) throw std::runtime_error("cannot write " + staging.string());
                      o << j.dump(2) << "\n";
                    });
                std::ifstream in(f);
                const json j = json::parse(in);
                cell.raw_score = j.at("final_score").get<double>();
                cell.normalized = normalized_score(cell.raw_score, out.refs);
              } catch (const std::exception& e) {
                cell.error = e.what();
              }
            }
            if (!cell.error.empty()) out.failed_cells += 1;
            out.cells.push_back(cell);
          }
        }
      }
    }
  }

  out.rows = aggregate_rows(out.cells);

  Table cells_t{"cells",
                {"difficulty", "dim", "mask_seed", "algorithm", "algo_seed", "raw_score",
                 "normalized_score", "error", "manifest"},
                {}};
  for (const CellResult& c : out.cells) {
    json r;
    r["difficulty"] = c.difficulty;
    r["dim"] = c.dim;
    r["mask_seed"] = c.mask_seed;
    r["algorithm"] = c.algorithm;
    r["algo_seed"] = c.algo_seed;
    r["raw_score"] = c.error.empty() ? json(c.raw_score) : json();
    r["normalized_score"] = c.error.empty() ? json(c.normalized) : json();
    r["error"] = c.error;
    r["manifest"] = hex64(out.digest);
    cells_t.rows.push_back(r);
  }
  Table report_t{"report",
                 {"difficulty", "dim", "algorithm", "mean_score", "std_score", "vs_baseline_pct",
                  "vs_teacher_pct", "recovered_pct", "error", "manifest"},
                 {}};
  for (const ReportRow& r : out.rows) {
    json row;
    row["difficulty"] = r.difficulty;
    row["dim"] = r.dim;
    row["algorithm"] = r.algorithm;
    row["mean_score"] = r.mean_score;
    row["std_score"] = r.std_score;
    row["vs_baseline_pct"] = r.vs_baseline_pct;
    row["vs_teacher_pct"] = r.vs_teacher_pct;
    row["recovered_pct"] = r.recovered_pct;
    row["error"] = r.error;
    row["manifest"] = hex64(out.digest);
    report_t.rows.push_back(row);
  }

  std::vector<Table> tables{cells_t, report_t};
  for (Table& t : summarize(out.rows)) tables.push_back(std::move(t));
  emit_csv(tables, m.output_dir);
  save_reference_scores(m.output_dir / "refs.json", out.refs);
  return out;
}

}  // namespace rcorl
