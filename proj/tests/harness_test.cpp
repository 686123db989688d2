#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "intent/harness.hpp"

using namespace intent;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = INTENT_CONFIG_DIR;
const std::string kCli = INTENT_CLI;

nlohmann::json small_scenario() {
  return {{"rows", 8},
          {"cols", 8},
          {"horizon", 30},
          {"generate", {{"tiles", 4}, {"heavy_fraction", 0.5}, {"holes", 2}, {"obstacles", 3}, {"agents", 4}}}};
}

nlohmann::json small_experiment() {
  return {{"scenario", small_scenario()},
          {"modes", {"None", "RLBIM"}},
          {"scenarios", {"MG"}},
          {"agent_counts", {4}},
          {"seeds", {{"start", 0}, {"count", 50}}},
          {"qlearning", {{"episodes", 40}}},
          {"rollouts", 3}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("intent_harness_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

fs::path write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

int exit_code(const std::string& cmd) {
  int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::optional<ErrorCode> parse_error_of(const nlohmann::json& j) {
  try {
    parse_experiment(j, kConfigs);
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST(ParseExperiment, ShippedConfigsLoad) {
  for (const char* name : {"collaboration.json", "sweep.json", "k_sensitivity.json", "plan_length.json", "scale_sweep.json"}) {
    auto cfg = load_experiment(kConfigs / name);
    EXPECT_FALSE(cfg.seeds.empty()) << name;
    EXPECT_GT(cfg.scenario.horizon, 0) << name;
  }
  auto cfg = load_experiment(kConfigs / "k_sensitivity.json");
  ASSERT_EQ(cfg.k_values.size(), 3u);
  EXPECT_EQ(cfg.seeds.size(), 50u);
}

TEST(ParseExperiment, RejectsInvalidConfigs) {
  auto base = small_experiment();
  EXPECT_EQ(parse_error_of(base), std::nullopt);

  auto j = base;
  j.erase("seeds");
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);
  j = base;
  j["seeds"] = nlohmann::json::array();
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);
  j = base;
  j["agent_counts"] = {0};
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);
  j = base;
  j["recon_period"] = 0;
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);
  j = base;
  j["format"] = "xml";
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);
  j = base;
  j["k"] = "lots";
  EXPECT_EQ(parse_error_of(j), ErrorCode::ParseError);
  j = base;
  j["plan_length"] = "Medium";
  EXPECT_EQ(parse_error_of(j), ErrorCode::ParseError);
  j = base;
  j["seeds"] = "many";
  EXPECT_EQ(parse_error_of(j), ErrorCode::ParseError);
  j = base;
  j["scenario"] = "no_such_scenario.json";
  EXPECT_EQ(parse_error_of(j), ErrorCode::FileNotFound);
  j = base;
  j.erase("scenario");
  EXPECT_EQ(parse_error_of(j), ErrorCode::InvalidConfig);

  try {
    load_experiment(kConfigs / "missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FileNotFound);
  }
}

TEST(RunExperiment, OneRowPerModeSeedAndStagePlusSummaries) {
  auto cfg = parse_experiment(small_experiment(), kConfigs);
  auto out = run_experiment(cfg);
  std::size_t data = 0, means = 0, stds = 0;
  for (const auto& r : out.rows) {
    if (r.statistic.empty()) ++data;
    if (r.statistic == "mean") ++means;
    if (r.statistic == "std") ++stds;
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  EXPECT_EQ(data, 2u * 50u * 3u);
  EXPECT_EQ(means, 2u * 3u);
  EXPECT_EQ(stds, 2u * 3u);
  EXPECT_TRUE(out.skipped.empty());
  EXPECT_EQ(out.reports.size(), 100u);
  EXPECT_TRUE(std::is_sorted(out.rows.begin(), out.rows.end()));

  // summary arithmetic: mean of the Final scores per mode
  for (const std::string mode : {"None", "RLBIM"}) {
    double sum = 0.0;
    for (const auto& r : out.rows)
      if (r.statistic.empty() && r.mode == mode && r.stage == Stage::Final) sum += r.score;
    for (const auto& r : out.rows) {
      if (r.statistic == "mean" && r.mode == mode && r.stage == Stage::Final) {
        EXPECT_NEAR(r.score, sum / 50.0, 1e-9);
      }
    }
  }
}

TEST(RunExperiment, CsvIsByteStableAcrossRunsAndWorkerCounts) {
  auto j = small_experiment();
  j["seeds"] = {{"start", 5}, {"count", 8}};
  auto cfg = parse_experiment(j, kConfigs);
  const auto first = format_csv(run_experiment(cfg).rows);
  EXPECT_EQ(first, format_csv(run_experiment(cfg).rows));
  cfg.workers = 3;
  EXPECT_EQ(first, format_csv(run_experiment(cfg).rows));
}

TEST(RunExperiment, InfeasiblePointsAreReportedNotDropped) {
  auto j = small_experiment();
  j["scenario"] = {{"rows", 3}, {"cols", 3}, {"horizon", 10}, {"tiles", {{0, 1}}}, {"holes", {{0, 2}}}, {"agents", {{0, 0}}}};
  j["agent_counts"] = {1, 2};
  j["seeds"] = {1, 2};
  auto cfg = parse_experiment(j, kConfigs);
  auto out = run_experiment(cfg);
  std::set<int> with_rows;
  for (const auto& r : out.rows) with_rows.insert(r.agents);
  EXPECT_EQ(with_rows, std::set<int>{1});
  ASSERT_FALSE(out.skipped.empty());
  for (const auto& s : out.skipped) EXPECT_EQ(s.agents, 2);
}

TEST(RunExperiment, AutoKIsAtLeastAsAccurateAsKMinusTwoOnPlantedGroups) {
  auto cfg = load_experiment(kConfigs / "k_sensitivity.json");
  cfg.seeds.resize(10);
  cfg.k_values = {KChoice::parse("auto"), KChoice::parse("-2")};
  auto out = run_experiment(cfg);
  std::map<std::string, double> acc;
  for (const auto& r : out.rows)
    if (r.statistic == "mean") acc[r.scenario] += r.accuracy / 3.0;
  ASSERT_EQ(acc.size(), 2u);
  EXPECT_GE(acc.at("MG:K=auto"), acc.at("MG:K=-2"));
}

TEST(EmitResults, FormatsAndErrors) {
  TempDir dir;
  ResultRow row;
  row.mode = "RLBIM";
  row.scenario = "MG";
  row.agents = 4;
  row.seed = 7;
  row.stage = Stage::Middle;
  row.score = 30;
  row.efficiency = 0.3;
  row.accuracy = 2.0 / 3.0;
  row.recognition_time_ms = 0.0125;
  const auto csv = dir.path() / "one.csv";
  emit_results({row}, "csv", csv);
  EXPECT_EQ(slurp(csv), std::string(kCsvHeader) + "\nRLBIM,MG,4,7,Middle,30,0.300000,0.666667,0.012500\n");
  const auto again = dir.path() / "again.csv";
  emit_results({row}, "csv", again);
  EXPECT_EQ(slurp(csv), slurp(again));

  const auto js = dir.path() / "one.json";
  emit_results({row}, "json", js);
  auto parsed = nlohmann::json::parse(slurp(js));
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0]["stage"], "Middle");
  EXPECT_EQ(parsed[0]["score"], 30);

  try {
    emit_results({}, "csv", dir.path() / "empty.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
  try {
    emit_results({row}, "csv", dir.path() / "no" / "such" / "dir.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  EXPECT_THROW(emit_results({row}, "tsv", dir.path() / "x"), Error);
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(exit_code(kCli + " run --config " + (dir.path() / "absent.json").string()), 2);
  std::ofstream(dir.path() / "broken.json") << "{ not json";
  EXPECT_EQ(exit_code(kCli + " run --config " + (dir.path() / "broken.json").string()), 2);
  auto j = small_experiment();
  j["seeds"] = nlohmann::json::array();
  EXPECT_EQ(exit_code(kCli + " run --config " + write_json(dir.path() / "noseeds.json", j).string()), 2);
  auto ok = write_json(dir.path() / "ok.json", small_experiment());
  EXPECT_EQ(exit_code(kCli + " run --config " + ok.string() + " --format xml"), 2);
  EXPECT_EQ(exit_code(kCli + " run --config " + ok.string() + " --workers 0"), 2);
  EXPECT_EQ(exit_code(kCli + " run"), 2);
  EXPECT_EQ(exit_code(kCli + " fly"), 2);
  EXPECT_EQ(exit_code(kCli + " replay --events " + (dir.path() / "absent.ndjson").string()), 2);
}

TEST(Cli, OutputDirectoryPrecedence) {
  TempDir dir;
  auto j = small_experiment();
  j["seeds"] = {1, 2};
  j["out"] = (dir.path() / "from_config").string();
  const auto cfg = write_json(dir.path() / "cfg.json", j).string();

  ASSERT_EQ(exit_code(kCli + " run --config " + cfg), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "from_config" / "results.csv"));

  const auto env = dir.path() / "from_env";
  ASSERT_EQ(exit_code("INTENT_OUT_DIR=" + env.string() + " " + kCli + " run --config " + cfg + " --format json"), 0);
  EXPECT_TRUE(fs::exists(env / "results.json"));
  EXPECT_TRUE(fs::exists(env / "reports.ndjson"));

  const auto flag = dir.path() / "from_flag";
  ASSERT_EQ(exit_code("INTENT_OUT_DIR=" + env.string() + " " + kCli + " run --config " + cfg + " --out " + flag.string()),
            0);
  EXPECT_TRUE(fs::exists(flag / "results.csv"));
  EXPECT_EQ(slurp(flag / "results.csv"), slurp(dir.path() / "from_config" / "results.csv"));
}

TEST(Cli, SeedOffsetShiftsSeeds) {
  TempDir dir;
  auto j = small_experiment();
  j["seeds"] = {3, 4};
  const auto cfg = write_json(dir.path() / "cfg.json", j).string();
  j["seeds"] = {13, 14};
  const auto shifted = write_json(dir.path() / "shifted.json", j).string();
  ASSERT_EQ(exit_code(kCli + " run --config " + cfg + " --seed-offset 10 --out " + (dir.path() / "a").string()), 0);
  ASSERT_EQ(exit_code(kCli + " run --config " + shifted + " --out " + (dir.path() / "b").string()), 0);
  EXPECT_EQ(slurp(dir.path() / "a" / "results.csv"), slurp(dir.path() / "b" / "results.csv"));
}

TEST(Cli, ReplayChecksEventLogs) {
  TempDir dir;
  auto j = small_experiment();
  j["seeds"] = {2};
  j["events"] = true;
  const auto cfg = write_json(dir.path() / "cfg.json", j).string();
  ASSERT_EQ(exit_code(kCli + " run --config " + cfg + " --out " + dir.path().string()), 0);
  std::vector<fs::path> logs;
  for (const auto& e : fs::directory_iterator(dir.path() / "events")) logs.push_back(e.path());
  ASSERT_EQ(logs.size(), 2u);
  for (const auto& log : logs) EXPECT_EQ(exit_code(kCli + " replay --events " + log.string()), 0) << log;

  // a changed final score no longer matches the re-executed episode
  std::string text = slurp(logs.front());
  const auto pos = text.rfind("\"total\":");
  ASSERT_NE(pos, std::string::npos);
  text.insert(pos + 8, "1");
  std::ofstream(dir.path() / "tampered.ndjson") << text;
  EXPECT_EQ(exit_code(kCli + " replay --events " + (dir.path() / "tampered.ndjson").string()), 1);

  std::ofstream(dir.path() / "garbage.ndjson") << "{\"type\": \"step\"\n";
  EXPECT_EQ(exit_code(kCli + " replay --events " + (dir.path() / "garbage.ndjson").string()), 2);
}
