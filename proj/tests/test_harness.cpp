#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rcorl/harness.hpp"

using namespace rcorl;
namespace fs = std::filesystem;

namespace {

struct ScopedCacheDir {
  fs::path dir;
  explicit ScopedCacheDir(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    setenv("RCORL_CACHE_DIR", dir.c_str(), 1);
  }
  ~ScopedCacheDir() {
    unsetenv("RCORL_CACHE_DIR");
    fs::remove_all(dir);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CellResult cell(const std::string& difficulty, int dim, std::uint64_t mask_seed,
                const std::string& algo, std::uint64_t algo_seed, double normalized,
                const std::string& error = "") {
  CellResult c;
  c.difficulty = difficulty;
  c.dim = dim;
  c.mask_seed = mask_seed;
  c.algorithm = algo;
  c.algo_seed = algo_seed;
  c.raw_score = normalized;  // raw value is irrelevant to aggregation
  c.normalized = normalized;
  c.error = error;
  return c;
}

// Split a CSV line on unquoted commas and unescape quoted cells.
std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

ExperimentManifest tiny_manifest(const fs::path& out_dir) {
  ExperimentManifest m = default_manifest();
  m.constrained_dims = {10};
  m.mask_seeds = {1};
  m.difficulties = {"medium"};
  m.algo_seeds = {0};
  m.algorithms = {
      {"td3bc", "td3bc", {1.0, 0.0}, 0.8, 0},
      {"transfer_0.0_1.0", "transfer", {0.0, 1.0}, 0.8, 0},
  };
  m.collect.online_steps = 3000;
  m.collect.eval_every = 500;
  m.collect.eval_episodes = 2;
  m.collect.size_budget = 1200;
  m.collect.td3.hidden = {32, 32};
  m.collect.td3.batch_size = 64;
  m.collect.td3.warmup_steps = 500;
  m.offline.total_steps = 2000;
  m.offline.eval_every = 500;
  m.offline.eval_episodes = 3;
  m.offline.td3.hidden = {32, 32};
  m.offline.td3.batch_size = 64;
  m.teacher_steps = 8000;
  m.teacher_eval_every = 1000;
  m.teacher_eval_episodes = 3;
  m.ref_episodes = 30;
  m.output_dir = out_dir;
  return m;
}

}  // namespace

TEST_CASE("manifest serialization round-trips and hashes content, not location") {
  ExperimentManifest m = default_manifest();
  m.constrained_dims = {5, 7};
  m.algorithms[1].transfer = {0.25, 0.75};
  m.collect.online_steps = 12345;
  m.output_dir = "somewhere/else";

  ExperimentManifest back = manifest_from_json(manifest_to_json(m));
  CHECK(manifest_to_json(back) == manifest_to_json(m));
  CHECK(back.algorithms[1].transfer.beta2 == 0.75);
  CHECK(back.collect.online_steps == 12345);

  const std::uint64_t digest = manifest_digest(m);
  ExperimentManifest moved = m;
  moved.output_dir = "a/third/place";
  CHECK(manifest_digest(moved) == digest);
  ExperimentManifest changed = m;
  changed.teacher_steps += 1;
  CHECK(manifest_digest(changed) != digest);

  SUBCASE("partial JSON inherits defaults") {
    json j;
    j["constrained_dims"] = std::vector<int>{9};
    ExperimentManifest p = manifest_from_json(j);
    CHECK(p.constrained_dims == std::vector<int>{9});
    CHECK(p.env_id == "point_reach");
    CHECK(p.mask_seeds.size() == 5);
    CHECK(p.algorithms.size() == 3);
  }
}

TEST_CASE("the TOML subset parser handles sections, arrays of tables, and comments") {
  const std::string text = R"(
# experiment setup
env_id = "point_reach"            # trailing comment
constrained_dims = [5, 7, 10]
mask_seeds = [0, 1]
teacher_steps = 9000

[collect]
online_steps = 4000
rollout_noise = 0.25

[collect.td3]
hidden = [32, 32]
learning_rate = 1e-3

[[algorithms]]
name = "td3bc"
algo = "td3bc"

[[algorithms]]
name = "transfer"
algo = "transfer"
beta1 = 0.0
beta2 = 1.0

[offline]
total_steps = 1500
)";
  json j = parse_toml_subset(text);
  CHECK(j.at("env_id") == "point_reach");
  CHECK(j.at("constrained_dims") == json({5, 7, 10}));
  CHECK(j.at("teacher_steps") == 9000);
  CHECK(j.at("collect").at("online_steps") == 4000);
  CHECK(j.at("collect").at("rollout_noise") == 0.25);
  CHECK(j.at("collect").at("td3").at("hidden") == json({32, 32}));
  CHECK(j.at("collect").at("td3").at("learning_rate") == 1e-3);
  CHECK(j.at("algorithms").size() == 2);
  CHECK(j.at("algorithms")[1].at("beta2") == 1.0);
  CHECK(j.at("offline").at("total_steps") == 1500);

  ExperimentManifest m = manifest_from_json(j);
  CHECK(m.teacher_steps == 9000);
  CHECK(m.collect.td3.learning_rate == 1e-3);
  CHECK(m.algorithms.size() == 2);
  CHECK(m.algorithms[1].transfer.beta2 == 1.0);
  CHECK(m.difficulties.size() == 4);  // unset keys keep defaults

  SUBCASE("values and edge cases") {
    json v = parse_toml_subset("flag = true\nother = false\nname = \"a # not comment\"\n");
    CHECK(v.at("flag") == true);
    CHECK(v.at("other") == false);
    CHECK(v.at("name") == "a # not comment");
    CHECK_THROWS_AS(parse_toml_subset("value ="), std::invalid_argument);
    CHECK_THROWS_AS(parse_toml_subset("just a line"), std::invalid_argument);
    CHECK_THROWS_AS(parse_toml_subset("x = nonsense"), std::invalid_argument);
  }

  SUBCASE("file loading dispatches on extension") {
    const fs::path dir = fs::temp_directory_path() / "rcorl_manifest_io";
    fs::create_directories(dir);
    {
      std::ofstream t(dir / "m.toml");
      t << text;
      std::ofstream k(dir / "m.json");
      k << j.dump(2);
    }
    ExperimentManifest from_toml = load_manifest(dir / "m.toml");
    ExperimentManifest from_json_file = load_manifest(dir / "m.json");
    CHECK(manifest_to_json(from_toml) == manifest_to_json(from_json_file));
    CHECK_THROWS_AS(load_manifest(dir / "absent.toml"), std::runtime_error);
    fs::remove_all(dir);
  }
}

TEST_CASE("content-addressed cache runs each stage once and honors RCORL_CACHE_DIR") {
  ScopedCacheDir cache("rcorl_test_cache");

  int produced = 0;
  json params;
  params["stage"] = "demo";
  params["value"] = 3;
  auto produce = [&](const fs::path& staging) {
    ++produced;
    std::ofstream out(staging);
    out << "artifact";
  };
  const fs::path first = ensure_cached("demo", params, produce);
  const fs::path second = ensure_cached("demo", params, produce);
  CHECK(produced == 1);
  CHECK(first == second);
  CHECK(slurp(first) == "artifact");
  // The artifact lives under the env-var root, named by stage and hash.
  CHECK(first.parent_path() == cache.dir);
  CHECK(first.filename().string().rfind("demo-", 0) == 0);

  json other = params;
  other["value"] = 4;
  ensure_cached("demo", other, produce);
  CHECK(produced == 2);

  SUBCASE("a producer that writes nothing is an error") {
    json empty_params;
    empty_params["stage"] = "broken";
    CHECK_THROWS_AS(ensure_cached("broken", empty_params, [](const fs::path&) {}),
                    std::runtime_error);
  }
}

TEST_CASE("row aggregation reproduces the reference arithmetic") {
  SUBCASE("recovered score is the gap between vs-teacher deficits") {
    std::vector<CellResult> cells{
        cell("medium_replay", 9, 0, "td3bc", 0, 64.0),
        cell("medium_replay", 9, 0, "transfer", 0, 74.3),
    };
    std::vector<ReportRow> rows = aggregate_rows(cells);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].vs_teacher_pct == doctest::Approx(-36.0).epsilon(1e-12));
    CHECK(rows[1].vs_teacher_pct == doctest::Approx(-25.7).epsilon(1e-12));
    CHECK(rows[1].recovered_pct == doctest::Approx(10.3).epsilon(1e-9));
    CHECK(rows[0].recovered_pct == 0.0);  // baseline recovers nothing from itself
  }

  SUBCASE("vs-baseline percentage is plain ratio arithmetic") {
    std::vector<CellResult> cells{
        cell("medium", 5, 0, "td3bc", 0, 10.0),
        cell("medium", 5, 0, "transfer", 0, 12.0),
    };
    std::vector<ReportRow> rows = aggregate_rows(cells);
    CHECK(rows[1].vs_baseline_pct == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(rows[0].vs_baseline_pct == 0.0);
  }

  SUBCASE("a policy matching the teacher has zero vs-teacher gap") {
    std::vector<CellResult> cells{cell("expert", 5, 0, "td3bc", 0, 100.0)};
    CHECK(aggregate_rows(cells)[0].vs_teacher_pct == 0.0);
  }

  SUBCASE("std is across algorithm seeds of per-seed means") {
    std::vector<CellResult> cells{
        cell("medium", 5, 0, "td3bc", 0, 58.0), cell("medium", 5, 1, "td3bc", 0, 62.0),
        cell("medium", 5, 0, "td3bc", 1, 68.0), cell("medium", 5, 1, "td3bc", 1, 72.0),
    };
    std::vector<ReportRow> rows = aggregate_rows(cells);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean_score == doctest::Approx(65.0));
    // Seed means are 60 and 70; the spread across mask seeds does not count.
    CHECK(rows[0].std_score == doctest::Approx(5.0).epsilon(1e-12));
  }

  SUBCASE("failed cells are excluded and flagged") {
    std::vector<CellResult> cells{
        cell("medium", 5, 0, "td3bc", 0, 50.0),
        cell("medium", 5, 0, "td3bc", 1, 0.0, "exploded"),
        cell("medium", 5, 0, "transfer", 0, 0.0, "exploded"),
        cell("medium", 5, 0, "transfer", 1, 0.0, "exploded"),
    };
    std::vector<ReportRow> rows = aggregate_rows(cells);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mean_score == doctest::Approx(50.0));
    CHECK(rows[0].error == "1 cells failed");
    CHECK(rows[1].error == "all cells failed");
  }

  SUBCASE("rows without a baseline are flagged and skipped") {
    std::vector<CellResult> cells{cell("medium", 5, 0, "transfer", 0, 50.0)};
    std::vector<ReportRow> rows = aggregate_rows(cells);
    CHECK(rows[0].error == "missing baseline");
  }
}

TEST_CASE("summary tables follow the tie rule and stay consistent with raw rows") {
  std::vector<CellResult> cells;
  // dim 5: transfer beats baseline; dim 7: exact tie; dim 9: transfer loses.
  cells.push_back(cell("medium", 5, 0, "td3bc", 0, 40.0));
  cells.push_back(cell("medium", 5, 0, "transfer", 0, 50.0));
  cells.push_back(cell("medium", 7, 0, "td3bc", 0, 40.0));
  cells.push_back(cell("medium", 7, 0, "transfer", 0, 40.0));
  cells.push_back(cell("medium", 9, 0, "td3bc", 0, 40.0));
  cells.push_back(cell("medium", 9, 0, "transfer", 0, 30.0));
  std::vector<ReportRow> rows = aggregate_rows(cells);
  std::vector<Table> tables = summarize(rows);
  REQUIRE(tables.size() == 3);

  const Table& success = tables[0];
  REQUIRE(success.rows.size() == 1);
  CHECK(success.rows[0].at("algorithm") == "transfer");
  CHECK(success.rows[0].at("cells") == 3);
  // One win of three cells: the tie is a failure.
  CHECK(success.rows[0].at("beating_baseline_pct").get<double>() ==
        doctest::Approx(100.0 / 3.0).epsilon(1e-12));

  const Table& improvement = tables[1];
  double manual = 0.0;
  int n = 0;
  for (const ReportRow& r : rows) {
    if (r.algorithm != "transfer" || !r.error.empty()) continue;
    manual += r.vs_baseline_pct;
    ++n;
  }
  CHECK(improvement.rows[0].at("mean_improvement_pct").get<double>() ==
        doctest::Approx(manual / n).epsilon(1e-9));

  const Table& vs_teacher = tables[2];
  CHECK(vs_teacher.rows.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(vs_teacher.rows[i].at("vs_teacher_pct").get<double>() ==
          doctest::Approx(rows[i].mean_score - 100.0).epsilon(1e-12));
  }

  SUBCASE("identical scores everywhere mean zero improvement and zero success") {
    std::vector<CellResult> same{
        cell("medium", 5, 0, "td3bc", 0, 40.0),
        cell("medium", 5, 0, "transfer", 0, 40.0),
    };
    std::vector<Table> t = summarize(aggregate_rows(same));
    CHECK(t[0].rows[0].at("beating_baseline_pct").get<double>() == 0.0);
    CHECK(t[1].rows[0].at("mean_improvement_pct").get<double>() == 0.0);
  }

  SUBCASE("flagged rows drop out of the aggregates") {
    std::vector<CellResult> with_orphan = cells;
    with_orphan.push_back(cell("expert", 5, 0, "transfer", 0, 90.0));  // no baseline
    std::vector<Table> t = summarize(aggregate_rows(with_orphan));
    CHECK(t[0].rows[0].at("cells") == 3);
  }
}

TEST_CASE("CSV emission uses six significant digits and survives a round trip") {
  CHECK(format_number(123.456789) == "123.457");
  CHECK(format_number(0.000123456789) == "0.000123457");
  CHECK(format_number(1234567.0) == "1.23457e+06");
  CHECK(format_number(-25.7) == "-25.7");
  CHECK(format_number(0.0) == "0");

  const fs::path dir = fs::temp_directory_path() / "rcorl_test_csv";
  fs::remove_all(dir);

  Table t{"demo", {"name", "value", "note"}, {}};
  json r1;
  r1["name"] = "plain";
  r1["value"] = 1.0 / 3.0;
  r1["note"] = "with, comma and \"quotes\"";
  t.rows.push_back(r1);
  json r2;
  r2["name"] = "empty";
  r2["value"] = json();
  r2["note"] = "";
  t.rows.push_back(r2);
  Table empty{"nothing", {"a", "b"}, {}};
  emit_csv({t, empty}, dir);

  const std::string csv = slurp(dir / "demo.csv");
  std::istringstream lines(csv);
  std::string header, line1, line2;
  std::getline(lines, header);
  std::getline(lines, line1);
  std::getline(lines, line2);
  CHECK(header == "name,value,note");
  std::vector<std::string> cells1 = parse_csv_line(line1);
  REQUIRE(cells1.size() == 3);
  CHECK(cells1[0] == "plain");
  CHECK(cells1[1] == "0.333333");
  CHECK(cells1[2] == "with, comma and \"quotes\"");
  std::vector<std::string> cells2 = parse_csv_line(line2);
  CHECK(cells2[1] == "");  // null prints as empty

  CHECK(slurp(dir / "nothing.csv") == "a,b\n");

  json mirror = json::parse(slurp(dir / "demo.json"));
  CHECK(mirror.at("name") == "demo");
  CHECK(mirror.at("columns") == json({"name", "value", "note"}));
  CHECK(mirror.at("rows").size() == 2);
  CHECK(mirror.at("rows")[0].at("value").get<double>() == 1.0 / 3.0);
  fs::remove_all(dir);
}

TEST_CASE("the grid pipeline trains, reports, and replays byte-identically from cache") {
  ScopedCacheDir cache("rcorl_test_pipeline_cache");
  const fs::path out = fs::temp_directory_path() / "rcorl_test_pipeline_out";
  fs::remove_all(out);
  ExperimentManifest m = tiny_manifest(out);

  PipelineResult r = run_pipeline(m);
  CHECK(r.cells.size() == 2);  // 1 dim x 1 mask seed x 1 difficulty x 2 algos x 1 seed
  CHECK(r.rows.size() == 2);
  CHECK(r.failed_cells == 0);
  for (const CellResult& c : r.cells) CHECK(c.error.empty());
  CHECK(r.refs.expert > r.refs.random);
  CHECK(r.digest == manifest_digest(m));

  for (const char* name :
       {"cells.csv", "report.csv", "success_vs_baseline.csv", "mean_improvement.csv",
        "vs_teacher.csv", "cells.json", "report.json", "refs.json"})
    CHECK(fs::exists(out / name));

  const std::string report_header = slurp(out / "report.csv").substr(0, 200);
  CHECK(report_header.rfind("difficulty,dim,algorithm,mean_score,std_score,vs_baseline_pct,"
                            "vs_teacher_pct,recovered_pct,error,manifest",
                            0) == 0);

  SUBCASE("rerunning from cache reproduces every report byte") {
    std::map<std::string, std::string> before;
    for (const auto& f : fs::directory_iterator(out))
      before[f.path().filename().string()] = slurp(f.path());
    PipelineResult again = run_pipeline(m);
    CHECK(again.failed_cells == 0);
    for (const auto& [name, bytes] : before) CHECK(slurp(out / name) == bytes);
    REQUIRE(again.cells.size() == r.cells.size());
    for (std::size_t i = 0; i < r.cells.size(); ++i)
      CHECK(again.cells[i].raw_score == r.cells[i].raw_score);
  }

  SUBCASE("an empty algorithm list produces header-only reports") {
    ExperimentManifest none = m;
    none.algorithms.clear();
    none.output_dir = out / "empty";
    PipelineResult e = run_pipeline(none);
    CHECK(e.cells.empty());
    const std::string cells_csv = slurp(none.output_dir / "cells.csv");
    CHECK(cells_csv.find('\n') == cells_csv.size() - 1);
  }

  SUBCASE("an unknown difficulty fails its cells without stopping the grid") {
    ExperimentManifest mixed = m;
    mixed.difficulties = {"medium", "nightmare"};
    mixed.output_dir = out / "mixed";
    PipelineResult p = run_pipeline(mixed);
    CHECK(p.cells.size() == 4);
    CHECK(p.failed_cells == 2);
    int ok = 0;
    for (const CellResult& c : p.cells) {
      if (c.difficulty == "medium") {
        CHECK(c.error.empty());
        ++ok;
      } else {
        CHECK_FALSE(c.error.empty());
      }
    }
    CHECK(ok == 2);
  }

  fs::remove_all(out);
}
