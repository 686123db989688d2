#pragma once

// Experiment sweeps: config loading, parallel episode runs, result tables.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "intent/bdi_runtime.hpp"
#include "intent/error.hpp"
#include "intent/world.hpp"

namespace intent {

enum class PlanLength { Short, Long };

inline std::string_view to_string(PlanLength p) { return p == PlanLength::Short ? "Short" : "Long"; }

// Rollout horizons behind the intention models.
inline int plan_horizon(PlanLength p) { return p == PlanLength::Short ? 15 : 60; }

struct ExperimentConfig {
  std::filesystem::path scenario_file;
  WorldConfig scenario;
  std::vector<RecognizerMode> modes{RecognizerMode::None, RecognizerMode::RLBIM};
  std::vector<ConstraintKind> constraints{ConstraintKind::MG};
  std::vector<int> agent_counts;  // empty: the scenario's own count
  std::vector<std::uint64_t> seeds;
  int recon_period = 5;
  std::vector<KChoice> k_values{KChoice{}};
  std::vector<PlanLength> plan_lengths{PlanLength::Long};
  Timing timing = Timing::Model;
  int workers = 1;
  int group_size = 3;
  double fixed_fraction = 0.5;
  QLearningParams qlearning = [] {
    QLearningParams hp;
    hp.episodes = 800;
    hp.exploring_starts = 0.8;
    return hp;
  }();
  int rollouts = 6;
  double rollout_epsilon = 0.2;
  std::string out_dir = "results";
  std::string format = "csv";
  bool write_events = false;
};

namespace detail {

template <typename T, typename F>
std::vector<T> one_or_many(const nlohmann::json& j, F&& parse) {
  std::vector<T> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(parse(v));
  } else {
    out.push_back(parse(j));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, "empty sweep list");
  return out;
}

inline WorldConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return j.get<WorldConfig>();
}

}  // namespace detail

/// Parses an experiment config; the scenario path is relative to `base_dir`.
inline ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "experiment config must be an object");
    auto str = [](const nlohmann::json& v) { return v.get<std::string>(); };
    if (!j.contains("scenario")) throw Error(ErrorCode::InvalidConfig, "missing 'scenario'");
    if (j["scenario"].is_object()) {
      c.scenario = j["scenario"].get<WorldConfig>();
    } else {
      c.scenario_file = base_dir / str(j["scenario"]);
      c.scenario = detail::load_scenario(c.scenario_file);
    }
    if (j.contains("modes"))
      c.modes = detail::one_or_many<RecognizerMode>(j["modes"], [&](const auto& v) { return recognizer_mode_from_string(str(v)); });
    if (j.contains("scenarios"))
      c.constraints = detail::one_or_many<ConstraintKind>(j["scenarios"], [&](const auto& v) { return constraint_from_string(str(v)); });
    if (j.contains("agent_counts"))
      c.agent_counts = detail::one_or_many<int>(j["agent_counts"], [](const auto& v) { return v.template get<int>(); });
    if (!j.contains("seeds")) throw Error(ErrorCode::InvalidConfig, "missing 'seeds'");
    const auto& seeds = j["seeds"];
    if (seeds.is_array()) {
      c.seeds = seeds.get<std::vector<std::uint64_t>>();
    } else if (seeds.is_object()) {
      const auto start = seeds.value("start", std::uint64_t{0});
      const int count = seeds.at("count").get<int>();
      if (count < 0) throw Error(ErrorCode::InvalidConfig, "seed count must be non-negative");
      for (int i = 0; i < count; ++i) c.seeds.push_back(start + static_cast<std::uint64_t>(i));
    } else {
      throw Error(ErrorCode::ParseError, "'seeds' must be a list or {start, count}");
    }
    c.recon_period = j.value("recon_period", c.recon_period);
    if (j.contains("k")) c.k_values = detail::one_or_many<KChoice>(j["k"], [](const auto& v) { return KChoice::parse(v); });
    if (j.contains("plan_length"))
      c.plan_lengths = detail::one_or_many<PlanLength>(j["plan_length"], [&](const auto& v) {
        const auto s = str(v);
        if (s == "Short") return PlanLength::Short;
        if (s == "Long") return PlanLength::Long;
        throw Error(ErrorCode::ParseError, "plan_length must be Short or Long");
      });
    if (j.contains("timing")) {
      const auto t = str(j["timing"]);
      if (t != "model" && t != "wall") throw Error(ErrorCode::ParseError, "timing must be model or wall");
      c.timing = t == "wall" ? Timing::Wall : Timing::Model;
    }
    c.workers = j.value("workers", c.workers);
    c.group_size = j.value("group_size", c.group_size);
    c.fixed_fraction = j.value("fixed_fraction", c.fixed_fraction);
    c.rollouts = j.value("rollouts", c.rollouts);
    c.rollout_epsilon = j.value("rollout_epsilon", c.rollout_epsilon);
    if (j.contains("qlearning")) {
      const auto& q = j["qlearning"];
      c.qlearning.episodes = q.value("episodes", c.qlearning.episodes);
      c.qlearning.alpha = q.value("alpha", c.qlearning.alpha);
      c.qlearning.gamma = q.value("gamma", c.qlearning.gamma);
      c.qlearning.exploring_starts = q.value("exploring_starts", c.qlearning.exploring_starts);
    }
    if (j.contains("horizon")) c.scenario.horizon = j["horizon"].get<int>();
    c.out_dir = j.value("out", c.out_dir);
    c.format = j.value("format", c.format);
    c.write_events = j.value("events", c.write_events);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (c.seeds.empty()) throw Error(ErrorCode::InvalidConfig, "seeds must not be empty");
  for (int n : c.agent_counts)
    if (n < 1) throw Error(ErrorCode::InvalidConfig, "agent counts must be at least 1");
  if (c.recon_period < 1) throw Error(ErrorCode::InvalidConfig, "recon_period must be at least 1");
  if (c.workers < 1) throw Error(ErrorCode::InvalidConfig, "workers must be at least 1");
  if (c.format != "csv" && c.format != "json") throw Error(ErrorCode::InvalidConfig, "format must be csv or json");
  if (c.scenario.horizon < 1) throw Error(ErrorCode::InvalidConfig, "scenario horizon must be positive");
  if (c.qlearning.episodes < 1 || c.rollouts < 1) throw Error(ErrorCode::InvalidConfig, "episodes and rollouts must be positive");
  if (c.group_size < 2) throw Error(ErrorCode::InvalidConfig, "group_size must be at least 2");
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_experiment(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Rows

struct ResultRow {
  std::string mode;
  std::string scenario;
  int agents = 0;
  std::uint64_t seed = 0;
  Stage stage = Stage::Early;
  double score = 0.0;
  double efficiency = 0.0;
  double accuracy = 0.0;
  double recognition_time_ms = 0.0;
  std::string statistic;  // empty for data rows, "mean" or "std" for summaries

  bool summary() const { return !statistic.empty(); }
};

inline bool operator<(const ResultRow& a, const ResultRow& b) {
  return std::forward_as_tuple(a.summary(), a.mode, a.scenario, a.agents, a.statistic, a.seed, a.stage) <
         std::forward_as_tuple(b.summary(), b.mode, b.scenario, b.agents, b.statistic, b.seed, b.stage);
}

struct SkipRecord {
  std::string mode;
  std::string scenario;
  int agents = 0;
  std::optional<std::uint64_t> seed;
  std::string reason;
};

inline void to_json(nlohmann::json& j, const SkipRecord& s) {
  j = {{"mode", s.mode}, {"scenario", s.scenario}, {"agents", s.agents}, {"reason", s.reason}};
  if (s.seed) j["seed"] = *s.seed;
}

struct ExperimentOutput {
  std::vector<ResultRow> rows;  // data rows then summary rows, sorted
  std::vector<SkipRecord> skipped;
  std::vector<EpisodeReport> reports;  // in sweep order
};

/// Policies per resolved layout and seed, shareable across experiments.
class PolicyCache {
 public:
  std::shared_ptr<const PolicyTable> get(const WorldConfig& resolved, std::uint64_t seed, const QLearningParams& hp) {
    const std::string key = nlohmann::json(resolved).dump() + "#" + std::to_string(seed) + "#" +
                            std::to_string(hp.episodes) + "#" + std::to_string(hp.exploring_starts) + "#" +
                            std::to_string(hp.alpha) + "#" + std::to_string(hp.gamma);
    {
      std::lock_guard lock(mu_);
      if (auto it = table_.find(key); it != table_.end()) return it->second;
    }
    auto fresh = std::make_shared<const PolicyTable>(learn_goal_policies(init_world(resolved, seed), hp, seed));
    std::lock_guard lock(mu_);
    return table_.emplace(key, std::move(fresh)).first->second;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const PolicyTable>> table_;
};

namespace detail {

inline std::string point_label(const ExperimentConfig& c, ConstraintKind k, const KChoice& kc, PlanLength p) {
  std::string s(to_string(k));
  if (c.k_values.size() > 1) s += ":K=" + kc.label();
  if (c.plan_lengths.size() > 1) s += ":" + std::string(to_string(p));
  return s;
}

inline void add_summaries(std::vector<ResultRow>& rows) {
  std::map<std::tuple<std::string, std::string, int, Stage>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.mode, r.scenario, r.agents, r.stage}].push_back(&r);
  std::vector<ResultRow> extra;
  for (const auto& [key, members] : groups) {
    ResultRow mean, sd;
    mean.mode = sd.mode = std::get<0>(key);
    mean.scenario = sd.scenario = std::get<1>(key);
    mean.agents = sd.agents = std::get<2>(key);
    mean.stage = sd.stage = std::get<3>(key);
    mean.statistic = "mean";
    sd.statistic = "std";
    const double n = static_cast<double>(members.size());
    auto stat = [&](double ResultRow::*field, double& m, double& s) {
      double sum = 0.0;
      for (const auto* r : members) sum += r->*field;
      m = sum / n;
      double sq = 0.0;
      for (const auto* r : members) sq += (r->*field - m) * (r->*field - m);
      s = members.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    };
    stat(&ResultRow::score, mean.score, sd.score);
    stat(&ResultRow::efficiency, mean.efficiency, sd.efficiency);
    stat(&ResultRow::accuracy, mean.accuracy, sd.accuracy);
    stat(&ResultRow::recognition_time_ms, mean.recognition_time_ms, sd.recognition_time_ms);
    extra.push_back(mean);
    extra.push_back(sd);
  }
  rows.insert(rows.end(), extra.begin(), extra.end());
}

}  // namespace detail

/// Runs every (agent count, seed) job, each sweeping modes, constraints, K
/// values and plan lengths on one resolved layout with shared policies.
/// Infeasible points are reported in `skipped`, never dropped silently.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, PolicyCache* cache = nullptr,
                                       const std::filesystem::path& events_dir = {}) {
  PolicyCache local;
  if (!cache) cache = &local;
  std::vector<int> counts = cfg.agent_counts;
  if (counts.empty()) counts.push_back(static_cast<int>(cfg.scenario.agent_count()));

  struct Point {
    RecognizerMode mode;
    ConstraintKind constraint;
    KChoice k;
    PlanLength plan;
    std::string label;
  };
  std::vector<Point> points;
  for (auto m : cfg.modes)
    for (auto k : cfg.constraints)
      for (const auto& kc : cfg.k_values)
        for (auto p : cfg.plan_lengths) points.push_back({m, k, kc, p, detail::point_label(cfg, k, kc, p)});

  struct Job {
    int agents;
    std::uint64_t seed;
  };
  ExperimentOutput out;
  std::vector<Job> jobs;
  for (int n : counts) {
    WorldConfig sc = cfg.scenario;
    std::string why;
    if (sc.generate) sc.generate->agents = n;
    else if (static_cast<int>(sc.agents.size()) != n)
      why = "scenario lists " + std::to_string(sc.agents.size()) + " agents";
    if (why.empty() && sc.generate &&
        sc.generate->tiles + sc.generate->holes + sc.generate->obstacles + n > sc.rows * sc.cols)
      why = "grid too small for " + std::to_string(n) + " agents";
    if (!why.empty()) {
      for (const auto& p : points) out.skipped.push_back({std::string(to_string(p.mode)), p.label, n, std::nullopt, why});
      continue;
    }
    for (auto seed : cfg.seeds) jobs.push_back({n, seed});
  }

  struct JobResult {
    std::vector<ResultRow> rows;
    std::vector<SkipRecord> skipped;
    std::vector<EpisodeReport> reports;
  };
  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const auto [n, seed] = jobs[i];
        WorldConfig sc = cfg.scenario;
        if (sc.generate) sc.generate->agents = n;
        WorldConfig resolved;
        try {
          resolved = resolve(sc, seed);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::InvalidConfig) throw;
          for (const auto& p : points)
            results[i].skipped.push_back({std::string(to_string(p.mode)), p.label, n, seed, e.what()});
          continue;
        }
        const auto policies = cache->get(resolved, seed, cfg.qlearning);
        for (const auto& p : points) {
          EpisodeParams ep;
          ep.mode = p.mode;
          ep.recon_period = cfg.recon_period;
          ep.k = p.k;
          ep.plan_horizon = plan_horizon(p.plan);
          ep.rollouts = cfg.rollouts;
          ep.rollout_epsilon = cfg.rollout_epsilon;
          ep.timing = cfg.timing;
          const auto sc_rule = ScenarioConstraint::make(p.constraint, n, cfg.group_size, cfg.fixed_fraction);
          std::ofstream log;
          if (!events_dir.empty()) {
            std::string name = std::string(to_string(p.mode)) + "_" + p.label + "_" + std::to_string(n) + "_" +
                               std::to_string(seed) + ".ndjson";
            std::replace(name.begin(), name.end(), ':', '_');
            log.open(events_dir / name);
            if (!log) throw Error(ErrorCode::IoError, (events_dir / name).string());
          }
          auto rep = run_episode(resolved, make_agents(static_cast<std::size_t>(n)), sc_rule, ep, seed, *policies,
                                 log.is_open() ? &log : nullptr);
          for (const auto& st : rep.stages) {
            ResultRow r;
            r.mode = rep.mode;
            r.scenario = p.label;
            r.agents = n;
            r.seed = seed;
            r.stage = st.stage;
            r.score = st.score;
            r.efficiency = st.efficiency;
            r.accuracy = st.accuracy;
            r.recognition_time_ms = st.recognition_time_ms;
            results[i].rows.push_back(r);
          }
          results[i].reports.push_back(std::move(rep));
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  const int nw = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  if (nw == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& r : results) {
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    out.skipped.insert(out.skipped.end(), r.skipped.begin(), r.skipped.end());
    for (auto& rep : r.reports) out.reports.push_back(std::move(rep));
  }
  std::sort(out.rows.begin(), out.rows.end());
  detail::add_summaries(out.rows);
  std::sort(out.rows.begin(), out.rows.end());
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline constexpr const char* kCsvHeader = "mode,scenario,agents,seed,stage,score,efficiency,accuracy,recognition_time_ms";

inline std::string format_csv(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no result rows");
  std::string out = std::string(kCsvHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    const std::string seed = r.summary() ? r.statistic : std::to_string(r.seed);
    const std::string score = r.summary() ? [&] {
      std::snprintf(buf, sizeof buf, "%.6f", r.score);
      return std::string(buf);
    }()
                                          : std::to_string(static_cast<long long>(std::llround(r.score)));
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%s,%s,%.6f,%.6f,%.6f\n", r.mode.c_str(), r.scenario.c_str(), r.agents,
                  seed.c_str(), std::string(to_string(r.stage)).c_str(), score.c_str(), r.efficiency, r.accuracy,
                  r.recognition_time_ms);
    out += buf;
  }
  return out;
}

inline nlohmann::json rows_json(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no result rows");
  nlohmann::json out = nlohmann::json::array();
  auto fixed6 = [](double v) { return std::round(v * 1e6) / 1e6; };
  for (const auto& r : rows) {
    nlohmann::json j = {{"mode", r.mode},
                        {"scenario", r.scenario},
                        {"agents", r.agents},
                        {"stage", to_string(r.stage)},
                        {"efficiency", fixed6(r.efficiency)},
                        {"accuracy", fixed6(r.accuracy)},
                        {"recognition_time_ms", fixed6(r.recognition_time_ms)}};
    if (r.summary()) {
      j["seed"] = r.statistic;
      j["score"] = fixed6(r.score);
    } else {
      j["seed"] = r.seed;
      j["score"] = std::llround(r.score);
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline void emit_results(const std::vector<ResultRow>& rows, const std::string& format, const std::filesystem::path& path) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no result rows");
  std::string text;
  if (format == "csv") text = format_csv(rows);
  else if (format == "json") text = rows_json(rows).dump(2) + "\n";
  else throw Error(ErrorCode::InvalidArgument, "format must be csv or json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace intent
