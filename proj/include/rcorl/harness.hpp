#pragma once

#include <filesystem>
#include <functional>

#include "rcorl/collect.hpp"
#include "rcorl/eval.hpp"

namespace rcorl {

// One named algorithm preset in a grid. `transfer` is read for the transfer
// algorithm; `beta`/`student_width` for the discrete lane (width 0 keeps the
// configured hidden sizes).
struct AlgorithmSpec {
  std::string name;            // row label, e.g. "transfer_0.0_1.0"
  std::string algo = "td3bc";  // td3bc | transfer | truebc | predictive | cql | cql_transfer
  TransferConfig transfer{1.0, 0.0};
  double beta = 0.8;
  int student_width = 0;
};

// Everything a grid run depends on. The content digest of this structure
// (excluding output_dir, which does not affect results) is stamped into every
// emitted row.
struct ExperimentManifest {
  std::string env_id = "point_reach";
  std::vector<int> constrained_dims{5, 7, 9, 10};
  std::vector<std::uint64_t> mask_seeds{0, 1, 2, 3, 4};
  std::vector<std::string> difficulties{"medium_replay", "medium", "medium_expert", "expert"};
  std::vector<std::uint64_t> algo_seeds{0, 1, 2};
  std::vector<AlgorithmSpec> algorithms;
  CollectConfig collect;
  OfflineAlgoConfig offline;           // continuous students
  DiscreteOfflineConfig offline_discrete;  // discrete students
  int teacher_steps = 60000;
  int teacher_eval_every = 2000;
  int teacher_eval_episodes = 5;
  std::uint64_t teacher_seed = 100;
  int ref_episodes = 100;
  std::filesystem::path output_dir = "reports";
};

// Full-size defaults: baseline TD3+BC plus the two transfer presets, 50k
// transitions per tier, 60k-step online runs, 30k-step students.
ExperimentManifest default_manifest();

json manifest_to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const json& j);
// Reads .toml (subset: key = value, [dotted.sections], [[table arrays]],
// inline arrays, strings/ints/floats/bools, # comments) or JSON otherwise.
ExperimentManifest load_manifest(const std::filesystem::path& path);
json parse_toml_subset(const std::string& text);
std::uint64_t manifest_digest(const ExperimentManifest& m);

// $RCORL_CACHE_DIR if set, else .rcorl_cache in the working directory.
std::filesystem::path cache_root();

// Content-addressed artifact <cache>/<stage>-<hash>. When missing, `produce`
// writes a file or directory at a staging path that is then renamed into
// place, so concurrent or interrupted runs never observe partial artifacts.
std::filesystem::path ensure_cached(
    const std::string& stage, const json& params,
    const std::function<void(const std::filesystem::path&)>& produce);

// Deterministic per-(env, dim, mask seed) collection seed, shared by the CLI
// and the pipeline so both hit the same cache entries.
std::uint64_t collection_seed_for(const std::string& env_id, int dim, std::uint64_t mask_seed);

// Cached stages, each keyed only by the parameters it consumes.
// Tier collection returns a directory holding <difficulty>.bin files.
std::filesystem::path ensure_tiers(const ExperimentManifest& m, const FeatureSpec& spec, int dim,
                                   std::uint64_t mask_seed);

struct TeacherArtifact {
  Policy policy;
  double score = 0.0;  // final_score of the online run
};
TeacherArtifact ensure_teacher(const ExperimentManifest& m);
ReferenceScores ensure_refs(const ExperimentManifest& m);

// One trained-and-evaluated grid entry.
struct CellResult {
  std::string difficulty;
  int dim = 0;
  std::uint64_t mask_seed = 0;
  std::string algorithm;
  std::uint64_t algo_seed = 0;
  double raw_score = 0.0;
  double normalized = 0.0;
  std::string error;  // nonempty: scores invalid, cell failed
};

// Aggregate over mask seeds and algo seeds for one (difficulty, dim,
// algorithm). vs_teacher_pct is the % change against the teacher's normalized
// score (100 by construction); recovered_pct is vs_teacher_pct minus the
// baseline's for the matching cell.
struct ReportRow {
  std::string difficulty;
  int dim = 0;
  std::string algorithm;
  double mean_score = 0.0;
  double std_score = 0.0;  // across algo seeds (std of per-seed means)
  double vs_baseline_pct = 0.0;
  double vs_teacher_pct = 0.0;
  double recovered_pct = 0.0;
  std::string error;  // nonempty: flagged, excluded from aggregates
};

std::vector<ReportRow> aggregate_rows(const std::vector<CellResult>& cells,
                                      const std::string& baseline = "td3bc");

struct PipelineResult {
  std::vector<CellResult> cells;
  std::vector<ReportRow> rows;
  ReferenceScores refs;
  double teacher_score = 0.0;  // raw rollout return
  std::uint64_t digest = 0;
  int failed_cells = 0;
  std::filesystem::path report_dir;
};

// Runs the whole grid: teacher + references once, then per-cell collect /
// train / evaluate, all content-cached. Per-cell failures are recorded and do
// not stop other cells. Writes cells/report/summary CSVs and JSON mirrors to
// the manifest's output directory.
PipelineResult run_pipeline(const ExperimentManifest& m);

// A report table: column names plus rows as JSON objects keyed by column.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<json> rows;
};

// (a) per-algorithm % of report cells strictly beating the baseline (ties are
// failures), (b) per-algorithm mean % improvement over the baseline, (c) the
// per-(difficulty, dim) vs-teacher table with recovered columns.
std::vector<Table> summarize(const std::vector<ReportRow>& rows,
                             const std::string& baseline = "td3bc");

// One <name>.csv per table (fixed column order, floats with 6 significant
// digits) plus a <name>.json mirror.
void emit_csv(const std::vector<Table>& tables, const std::filesystem::path& dir);
std::string format_number(double v);

}  // namespace rcorl
