// intent_cli: run experiment sweeps and replay episode event logs.
//
//   intent_cli run --config cfg.json [--out dir] [--format csv|json] [--workers n] [--seed-offset k]
//   intent_cli replay --events episode.ndjson
//
// Exit codes: 0 success, 1 runtime failure or replay mismatch, 2 config error.
// INTENT_OUT_DIR overrides the output directory named in the config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "intent/harness.hpp"

namespace fs = std::filesystem;
using namespace intent;

namespace {

bool config_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::FileNotFound:
    case ErrorCode::ParseError:
    case ErrorCode::InvalidK:
      return true;
    default:
      return false;
  }
}

int run(const std::string& config_path, const std::string& out_flag, const std::string& format_flag, int workers,
        long long seed_offset) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment(config_path);
    if (!format_flag.empty()) {
      if (format_flag != "csv" && format_flag != "json") throw Error(ErrorCode::InvalidConfig, "format must be csv or json");
      cfg.format = format_flag;
    }
    if (workers > 0) cfg.workers = workers;
    if (workers == 0) throw Error(ErrorCode::InvalidConfig, "workers must be at least 1");
    for (auto& s : cfg.seeds) s += static_cast<std::uint64_t>(seed_offset);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  std::string out_dir = cfg.out_dir;
  if (const char* env = std::getenv("INTENT_OUT_DIR"); env && *env) out_dir = env;
  if (!out_flag.empty()) out_dir = out_flag;

  try {
    fs::create_directories(out_dir);
    fs::path events_dir;
    if (cfg.write_events) {
      events_dir = fs::path(out_dir) / "events";
      fs::create_directories(events_dir);
    }
    auto result = run_experiment(cfg, nullptr, events_dir);
    if (!result.skipped.empty()) {
      std::ofstream skipped(fs::path(out_dir) / "skipped.json");
      skipped << nlohmann::json(result.skipped).dump(2) << "\n";
      for (const auto& s : result.skipped)
        std::cerr << "skipped " << s.mode << " " << s.scenario << " N=" << s.agents << ": " << s.reason << "\n";
    }
    if (result.rows.empty()) {
      std::cerr << "no sweep point produced rows\n";
      return 1;
    }
    const fs::path table = fs::path(out_dir) / ("results." + cfg.format);
    emit_results(result.rows, cfg.format, table);
    std::ofstream reports(fs::path(out_dir) / "reports.ndjson");
    for (const auto& r : result.reports) reports << nlohmann::json(r).dump() << "\n";
    std::cout << "wrote " << result.rows.size() << " rows (" << result.reports.size() << " episodes) to " << table.string()
              << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return config_error(e) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int replay_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "config error: cannot open " << path << "\n";
    return 2;
  }
  try {
    auto r = replay(in);
    std::cout << "ticks " << r.ticks << ", total score " << r.total_score << ", collaborations " << r.collaborations
              << (r.collaborations_legal ? "" : " (illegal link found)") << "\n";
    if (!r.consistent) {
      std::cout << "MISMATCH " << r.message << "\n";
      return 1;
    }
    std::cout << "replay consistent\n";
    return r.collaborations_legal ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent intention recognition experiments"};
  app.require_subcommand(1);

  std::string config, out, format, events;
  int workers = -1;
  long long seed_offset = 0;
  auto* run_cmd = app.add_subcommand("run", "run an experiment sweep");
  run_cmd->add_option("--config", config, "experiment config (JSON)")->required();
  run_cmd->add_option("--out", out, "output directory");
  run_cmd->add_option("--format", format, "csv or json");
  run_cmd->add_option("--workers", workers, "parallel episode jobs");
  run_cmd->add_option("--seed-offset", seed_offset, "added to every seed");

  auto* replay_cmd = app.add_subcommand("replay", "re-execute an episode event log");
  replay_cmd->add_option("--events", events, "NDJSON event log")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*run_cmd) return run(config, out, format, workers, seed_offset);
  return replay_file(events);
}
