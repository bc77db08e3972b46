#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rcorl/harness.hpp"

using namespace rcorl;
namespace fs = std::filesystem;

namespace {

FeatureSpec spec_for(const EnvInfo& info, int dim, std::uint64_t mask_seed) {
  if (info.discrete) return pixelate_spec(GridPixEnv::kSide, dim);  // dim = coarse side
  return make_mask_spec(info.state_dim, dim, mask_seed);
}

void print_table(const Table& t) {
  std::vector<std::size_t> width(t.columns.size());
  std::vector<std::vector<std::string>> cells;
  for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
  for (const json& row : t.rows) {
    std::vector<std::string> line;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      const json& v = row.contains(t.columns[c]) ? row.at(t.columns[c]) : json();
      std::string s;
      if (v.is_null())
        s = "";
      else if (v.is_string())
        s = v.get<std::string>();
      else if (v.is_number_float())
        s = format_number(v.get<double>());
      else
        s = v.dump();
      width[c] = std::max(width[c], s.size());
      line.push_back(std::move(s));
    }
    cells.push_back(std::move(line));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c)
      std::cout << (c ? "  " : "") << line[c] << std::string(width[c] - line[c].size(), ' ');
    std::cout << "\n";
  };
  std::cout << "== " << t.name << " ==\n";
  emit(t.columns);
  for (const auto& line : cells) emit(line);
  std::cout << "\n";
}

int run_grid(const fs::path& manifest_path, bool print_tables) {
  ExperimentManifest m = load_manifest(manifest_path);
  PipelineResult r = run_pipeline(m);
  if (print_tables) {
    std::vector<Table> tables = summarize(r.rows);
    Table report{"report",
                 {"difficulty", "dim", "algorithm", "mean_score", "std_score", "vs_baseline_pct",
                  "vs_teacher_pct", "recovered_pct", "error"},
                 {}};
    for (const ReportRow& row : r.rows) {
      json j;
      j["difficulty"] = row.difficulty;
      j["dim"] = row.dim;
      j["algorithm"] = row.algorithm;
      j["mean_score"] = row.mean_score;
      j["std_score"] = row.std_score;
      j["vs_baseline_pct"] = row.vs_baseline_pct;
      j["vs_teacher_pct"] = row.vs_teacher_pct;
      j["recovered_pct"] = row.recovered_pct;
      j["error"] = row.error;
      report.rows.push_back(std::move(j));
    }
    print_table(report);
    for (const Table& t : tables) print_table(t);
  }
  std::cout << "manifest " << std::hex << r.digest << std::dec << ": " << r.cells.size()
            << " cells, " << r.failed_cells << " failed; reports in " << r.report_dir.string()
            << "\n";
  if (r.failed_cells > 0) {
    for (const CellResult& c : r.cells)
      if (!c.error.empty())
        std::cerr << "cell " << c.difficulty << " dim=" << c.dim << " mask=" << c.mask_seed << " "
                  << c.algorithm << " seed=" << c.algo_seed << ": " << c.error << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resource-constrained offline RL laboratory"};
  app.require_subcommand(1);

  // ---- collect ----
  auto* collect = app.add_subcommand("collect", "roll out one difficulty tier to a dataset file");
  std::string c_env = "point_reach", c_difficulty = "medium_replay";
  int c_dim = 9;
  std::uint64_t c_mask_seed = 0;
  std::int64_t c_seed = -1;  // default: derived from (env, dim, mask seed)
  fs::path c_out;
  CollectConfig c_cfg;
  collect->add_option("--env", c_env, "point_reach | grid_pix");
  collect->add_option("--dim", c_dim, "kept dims (mask) or coarse side (pixelate)")->required();
  collect->add_option("--mask-seed", c_mask_seed, "which random feature mask");
  collect->add_option("--difficulty", c_difficulty,
                      "medium_replay | medium | medium_expert | expert");
  collect->add_option("--out", c_out, "dataset file to write")->required();
  collect->add_option("--seed", c_seed, "collection seed (default: derived)");
  collect->add_option("--online-steps", c_cfg.online_steps, "behavior-policy training budget");
  collect->add_option("--eval-every", c_cfg.eval_every, "checkpoint cadence");
  collect->add_option("--eval-episodes", c_cfg.eval_episodes, "episodes per checkpoint");
  collect->add_option("--size-budget", c_cfg.size_budget, "transitions per tier");

  // ---- refs ----
  auto* refs = app.add_subcommand("refs", "train the expert reference and write anchor scores");
  std::string r_env = "point_reach";
  fs::path r_out;
  int r_steps = 60000, r_eval_every = 2000, r_eval_episodes = 5, r_episodes = 100;
  std::uint64_t r_seed = 100;
  refs->add_option("--env", r_env, "point_reach | grid_pix");
  refs->add_option("--out", r_out, "reference-scores JSON to write")->required();
  refs->add_option("--steps", r_steps, "online training budget for the expert");
  refs->add_option("--eval-every", r_eval_every, "checkpoint cadence");
  refs->add_option("--eval-episodes", r_eval_episodes, "episodes per checkpoint");
  refs->add_option("--episodes", r_episodes, "episodes behind each anchor score");
  refs->add_option("--seed", r_seed, "training seed");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train an offline student on a dataset");
  std::string t_algo = "td3bc", t_spec = "limited";
  double t_beta1 = 1.0, t_beta2 = 0.0, t_beta = 0.8;
  int t_width = 0, t_steps = 0, t_eval_every = 0, t_eval_episodes = 0;
  std::uint64_t t_seed = 0;
  fs::path t_dataset, t_out, t_teacher;
  train->add_option("--algo", t_algo, "td3bc | transfer | truebc | predictive | cql")->required();
  train->add_option("--beta1", t_beta1, "transfer: weight on the dataset action");
  train->add_option("--beta2", t_beta2, "transfer: weight on the teacher action");
  train->add_option("--beta", t_beta, "cql: teacher share of the bootstrap target");
  train->add_option("--student-width", t_width, "cql: hidden width override (0 keeps default)");
  train->add_option("--dataset", t_dataset, "training dataset")->required();
  train->add_option("--spec", t_spec, "full | limited (the view recorded in the dataset)");
  train->add_option("--seed", t_seed, "training seed");
  train->add_option("--out", t_out, "policy file to write")->required();
  train->add_option("--teacher", t_teacher,
                    "teacher policy (transfer with beta2>0, truebc, blended cql)");
  train->add_option("--steps", t_steps, "gradient steps (0 keeps default)");
  train->add_option("--eval-every", t_eval_every, "evaluation cadence (0 keeps default)");
  train->add_option("--eval-episodes", t_eval_episodes, "episodes per evaluation (0 keeps default)");

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "score a saved policy");
  std::string e_mode = "rollout";
  fs::path e_policy, e_dataset, e_refs, e_out;
  int e_episodes = 20, e_iterations = 50;
  double e_gamma = 0.99;
  std::uint64_t e_seed = 0;
  evaluate->add_option("--policy", e_policy, "policy file")->required();
  evaluate->add_option("--mode", e_mode, "rollout | fqe");
  evaluate->add_option("--dataset", e_dataset, "dataset (required for fqe)");
  evaluate->add_option("--refs", e_refs, "reference scores for normalization");
  evaluate->add_option("--out", e_out, "result JSON to write")->required();
  evaluate->add_option("--episodes", e_episodes, "rollout episodes");
  evaluate->add_option("--iterations", e_iterations, "fqe iterations");
  evaluate->add_option("--gamma", e_gamma, "fqe discount");
  evaluate->add_option("--seed", e_seed, "evaluation seed");

  // ---- grid / report ----
  auto* grid = app.add_subcommand("grid", "run every cell of a manifest and write reports");
  fs::path g_manifest;
  grid->add_option("--manifest", g_manifest, "experiment manifest (.toml or JSON)")->required();
  auto* report = app.add_subcommand("report", "render a manifest's tables (cache-backed)");
  fs::path p_manifest;
  report->add_option("--manifest", p_manifest, "experiment manifest (.toml or JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) {
      const EnvInfo info = env_info(c_env);
      const FeatureSpec spec = spec_for(info, c_dim, c_mask_seed);
      const std::uint64_t seed = c_seed >= 0 ? std::uint64_t(c_seed)
                                             : collection_seed_for(c_env, c_dim, c_mask_seed);
      OfflineDataset d = collect_rc_dataset(c_env, spec, c_difficulty, c_cfg, c_mask_seed, seed);
      if (c_out.has_parent_path()) fs::create_directories(c_out.parent_path());
      save_dataset(c_out, d);
      std::cout << "wrote " << d.size() << " transitions to " << c_out.string() << "\n";
    } else if (*refs) {
      ExperimentManifest m = default_manifest();
      m.env_id = r_env;
      m.teacher_steps = r_steps;
      m.teacher_eval_every = r_eval_every;
      m.teacher_eval_episodes = r_eval_episodes;
      m.teacher_seed = r_seed;
      m.ref_episodes = r_episodes;
      ReferenceScores scores = ensure_refs(m);
      if (r_out.has_parent_path()) fs::create_directories(r_out.parent_path());
      save_reference_scores(r_out, scores);
      std::cout << "random " << format_number(scores.random) << ", expert "
                << format_number(scores.expert) << " -> " << r_out.string() << "\n";
    } else if (*train) {
      OfflineDataset data = load_dataset(t_dataset);
      const EnvInfo info = env_info_from_json(data.manifest.at("env"));
      FeatureSpec spec;
      if (t_spec == "full")
        spec = full_feature_spec();
      else if (t_spec == "limited")
        spec = feature_spec_from_json(data.manifest.at("feature_spec"));
      else
        throw std::invalid_argument("train: --spec must be full or limited");

      Policy teacher;
      const bool have_teacher = !t_teacher.empty();
      if (have_teacher) teacher = load_policy(t_teacher);

      Policy policy;
      double score = 0.0;
      if (t_algo == "cql") {
        if (!info.discrete) throw std::invalid_argument("train: cql needs a discrete-action dataset");
        DiscreteOfflineConfig cfg;
        cfg.cql.beta = t_beta;
        cfg.use_teacher = have_teacher;
        if (t_width > 0) cfg.cql.hidden = {t_width, t_width};
        if (t_steps > 0) cfg.total_steps = t_steps;
        if (t_eval_every > 0) cfg.eval_every = t_eval_every;
        if (t_eval_episodes > 0) cfg.eval_episodes = t_eval_episodes;
        const DiscretePolicy* tp =
            have_teacher ? &std::get<DiscretePolicy>(teacher) : nullptr;
        DiscreteTrainResult r = train_discrete_offline(data, spec, cfg, tp, t_seed);
        policy = r.policy;
        score = final_score(r.trace);
      } else {
        if (info.discrete)
          throw std::invalid_argument("train: " + t_algo + " needs a continuous-action dataset");
        OfflineAlgoConfig cfg;
        cfg.algo = t_algo;
        cfg.transfer = {t_beta1, t_beta2};
        if (t_steps > 0) cfg.total_steps = t_steps;
        if (t_eval_every > 0) cfg.eval_every = t_eval_every;
        if (t_eval_episodes > 0) cfg.eval_episodes = t_eval_episodes;
        const bool needs_teacher = t_algo == "truebc" || (t_algo == "transfer" && t_beta2 > 0.0);
        if (needs_teacher && !have_teacher)
          throw std::invalid_argument("train: " + t_algo + " needs --teacher");
        const ContinuousPolicy* tp =
            have_teacher ? &std::get<ContinuousPolicy>(teacher) : nullptr;
        OfflineTrainResult r = train_continuous_offline(data, spec, cfg, tp, t_seed);
        policy = r.policy;
        score = final_score(r.trace);
      }
      if (t_out.has_parent_path()) fs::create_directories(t_out.parent_path());
      save_policy(t_out, policy);
      std::cout << "final score " << format_number(score) << " -> " << t_out.string() << "\n";
    } else if (*evaluate) {
      Policy policy = load_policy(e_policy);
      json result;
      result["mode"] = e_mode;
      double raw = 0.0;
      if (e_mode == "rollout") {
        raw = rollout_return(policy, e_episodes, e_seed);
        result["episodes"] = e_episodes;
        result["seed"] = e_seed;
      } else if (e_mode == "fqe") {
        if (e_dataset.empty()) throw std::invalid_argument("evaluate: fqe needs --dataset");
        OfflineDataset data = load_dataset(e_dataset);
        FqeConfig cfg;
        cfg.gamma = e_gamma;
        cfg.iterations = e_iterations;
        cfg.seed = e_seed;
        FqeResult r = fqe_evaluate(data, policy, cfg);
        raw = r.initial_value;
        result["iterations"] = r.iterations_run;
        result["diverged"] = r.diverged;
      } else {
        throw std::invalid_argument("evaluate: --mode must be rollout or fqe");
      }
      result["score"] = raw;
      if (!e_refs.empty())
        result["normalized_score"] = normalized_score(raw, load_reference_scores(e_refs));
      if (e_out.has_parent_path()) fs::create_directories(e_out.parent_path());
      std::ofstream out(e_out);
      out << result.dump(2) << "\n";
      std::cout << "score " << format_number(raw) << " -> " << e_out.string() << "\n";
    } else if (*grid) {
      return run_grid(g_manifest, false);
    } else if (*report) {
      return run_grid(p_manifest, true);
    }
  } catch (const std::exception& e) {
    std::cerr << "rcorl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
