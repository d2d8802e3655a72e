#pragma once

// Experiment orchestration behind the command-line tool: build, solve,
// simulate and infer, with an on-disk cache keyed by content hashes and a
// manifest of every file a command writes.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "peg/config.hpp"
#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/inference.hpp"
#include "peg/io.hpp"
#include "peg/level_k.hpp"
#include "peg/mcam.hpp"
#include "peg/simulator.hpp"

namespace peg {

inline constexpr std::string_view kToolVersion = "1.0.0";

struct RunOptions {
  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir = ".peg-cache";
  bool use_cache = true;
  // Progress messages; null silences them.
  std::ostream* log = &std::cerr;
};

namespace detail {

inline nlohmann::json cells_json(const std::vector<Cell>& cells) {
  nlohmann::json j = nlohmann::json::array();
  for (const Cell& c : cells) j.push_back({c.x, c.y});
  return j;
}

inline nlohmann::json kernel_key_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["tool"] = kToolVersion;
  j["grid"] = {{"width", c.grid.width},
               {"height", c.grid.height},
               {"cell_size", c.grid.cell_size},
               {"capture_radius", c.make_grid().capture_radius()},
               {"obstacles", cells_json(c.make_grid().obstacle_cells())},
               {"evasion", cells_json(c.make_grid().evasion_cells())}};
  if (c.wind.file.empty())
    j["wind"] = {{"seed", c.wind.seed}, {"max_speed", c.wind.max_speed}, {"sigma", c.wind.sigma}};
  else
    j["wind"] = {{"table_sha256", sha256_hex(c.wind_table)}, {"sigma", c.wind.sigma}};
  for (Agent a : {Agent::Pursuer, Agent::Evader})
    j["agents"][std::string(to_string(a))] = {{"speed", c.agent(a).speed},
                                              {"headings_deg", c.agent(a).headings_deg}};
  return j;
}

inline nlohmann::json hierarchy_key_json(const ExperimentConfig& c) {
  nlohmann::json j = kernel_key_json(c);
  j["k_max"] = {c.pursuer.k_max, c.evader.k_max};
  j["level0"] = to_string(c.level0);
  j["solver"] = {{"tol", c.solver.tol},
                 {"max_iterations", c.solver.max_iterations},
                 {"jump_interval", c.solver.jump_interval}};
  return j;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Hash of the whole validated config (every section, defaults filled in).
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = detail::hierarchy_key_json(c);
  j["name"] = c.name;
  const auto& s = c.simulation;
  j["simulation"] = {{"start", {s.start.pursuer.x, s.start.pursuer.y, s.start.evader.x,
                                s.start.evader.y}},
                     {"games", s.games},
                     {"seed", s.seed},
                     {"max_steps", s.max_steps},
                     {"levels", {s.pursuer_level, s.evader_level}}};
  const auto& i = c.inference;
  j["inference"] = {{"mode", i.mode == InferenceMode::Fixed ? "fixed" : "dynamic"},
                    {"window", i.window},
                    {"observer", to_string(i.observer)},
                    {"observer_level", i.observer_level},
                    {"opponent_level", i.opponent_level},
                    {"both_adapt", i.both_adapt},
                    {"seed", i.seed}};
  return sha256_hex(j.dump());
}

inline std::string kernel_cache_key(const ExperimentConfig& c) {
  return sha256_hex(detail::kernel_key_json(c).dump());
}
inline std::string hierarchy_cache_key(const ExperimentConfig& c) {
  return sha256_hex(detail::hierarchy_key_json(c).dump());
}

// Collects the files a command writes; `write` records path and hash.
class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig& cfg, std::filesystem::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)) {
    doc_["command"] = command_;
    doc_["tool_version"] = kToolVersion;
    doc_["config_hash"] = config_hash(cfg);
    doc_["started"] = detail::utc_timestamp();
    doc_["files"] = nlohmann::ordered_json::array();
  }

  void write(const std::string& relative, std::string_view bytes) {
    write_file(out_dir_ / relative, bytes);
    doc_["files"].push_back(
        {{"path", relative}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }

  nlohmann::ordered_json& summary() { return doc_["summary"]; }
  void note(const std::string& key, nlohmann::ordered_json v) { doc_[key] = std::move(v); }

  std::filesystem::path finish() {
    doc_["finished"] = detail::utc_timestamp();
    const auto path = out_dir_ / ("manifest-" + command_ + ".json");
    write_file(path, doc_.dump(2) + "\n");
    return path;
  }

 private:
  std::string command_;
  std::filesystem::path out_dir_;
  nlohmann::ordered_json doc_;
};

struct World {
  GridSpec grid;
  WindField wind;
  Agents agents;
  TransitionKernel kernel;
  bool kernel_cache_hit = false;
};

struct Solved {
  World world;
  Hierarchy hierarchy;
  bool hierarchy_cache_hit = false;
};

inline void log_line(const RunOptions& opt, const std::string& s) {
  if (opt.log) *opt.log << s << '\n';
}

// Kernel from the cache, or built and cached.
inline World load_world(const ExperimentConfig& cfg, const RunOptions& opt) {
  World w;
  w.grid = cfg.make_grid();
  w.wind = make_wind(cfg, w.grid);
  w.agents = cfg.make_agents();
  const auto path = opt.cache_dir / ("kernel-" + kernel_cache_key(cfg) + ".bin");
  if (opt.use_cache && std::filesystem::exists(path)) {
    try {
      w.kernel = deserialize_kernel(read_file(path));
      w.kernel_cache_hit = w.kernel.grid() == w.grid;
    } catch (const IoError& e) {
      log_line(opt, std::string("ignoring unreadable kernel cache: ") + e.what());
    }
  }
  if (!w.kernel_cache_hit) {
    log_line(opt, "building kernel over " + std::to_string(w.grid.state_count()) + " states");
    w.kernel = build_kernel(w.grid, w.wind, w.agents);
    if (opt.use_cache) write_file(path, serialize_kernel(w.kernel));
  } else {
    log_line(opt, "kernel cache hit: " + path.string());
  }
  return w;
}

inline Solved load_solved(const ExperimentConfig& cfg, const RunOptions& opt) {
  Solved s{load_world(cfg, opt), {}, false};
  const auto path = opt.cache_dir / ("hierarchy-" + hierarchy_cache_key(cfg) + ".bin");
  if (opt.use_cache && std::filesystem::exists(path)) {
    try {
      s.hierarchy = deserialize_hierarchy(read_file(path));
      s.hierarchy_cache_hit = true;
      log_line(opt, "hierarchy cache hit: " + path.string());
    } catch (const IoError& e) {
      log_line(opt, std::string("ignoring unreadable hierarchy cache: ") + e.what());
    }
  }
  if (!s.hierarchy_cache_hit) {
    s.hierarchy = build_hierarchy(
        s.world.kernel, cfg.pursuer.k_max, cfg.evader.k_max, cfg.level0, cfg.solver,
        [&](Agent a, int level, long it) {
          log_line(opt, "  " + std::string(to_string(a)) + " level " + std::to_string(level) +
                            ": " + std::to_string(it) + " sweeps");
        });
    if (opt.use_cache) write_file(path, serialize_hierarchy(s.hierarchy));
  }
  return s;
}

inline nlohmann::ordered_json kernel_summary(const World& w) {
  const TransitionKernel& k = w.kernel;
  nlohmann::ordered_json j;
  j["width"] = w.grid.width();
  j["height"] = w.grid.height();
  j["cell_size"] = w.grid.cell_size();
  j["capture_radius"] = w.grid.capture_radius();
  j["states"] = k.state_count();
  j["interior_states"] = k.interior_count();
  j["joint_actions"] = k.joint_actions();
  std::array<std::size_t, 6> counts{};
  for (TerminalClass c : k.terminal_classes()) ++counts[static_cast<std::size_t>(c)];
  for (TerminalClass c : kAllTerminalClasses)
    j["states_by_class"][std::string(to_string(c))] = counts[static_cast<std::size_t>(c)];
  if (k.interior_count() > 0) {
    const auto& ht = k.raw_holding_times();
    j["holding_time_min"] = *std::min_element(ht.begin(), ht.end());
    j["holding_time_max"] = *std::max_element(ht.begin(), ht.end());
  }
  return j;
}

inline World cmd_build(const ExperimentConfig& cfg, const RunOptions& opt) {
  Manifest m("build", cfg, opt.out_dir);
  World w = load_world(cfg, opt);
  m.write("wind.csv", wind_csv(w.grid, w.wind));
  nlohmann::ordered_json j = kernel_summary(w);
  j["cache_key"] = kernel_cache_key(cfg);
  m.write("kernel.json", j.dump(2) + "\n");
  m.note("kernel_cache_hit", w.kernel_cache_hit);
  m.summary() = j;
  m.finish();
  return w;
}

struct SolveResult {
  Solved solved;
  std::optional<NashReport> nash;
};

inline SolveResult cmd_solve(const ExperimentConfig& cfg, const RunOptions& opt,
                             bool export_values = false) {
  Manifest m("solve", cfg, opt.out_dir);
  SolveResult r{load_solved(cfg, opt), std::nullopt};
  const Hierarchy& h = r.solved.hierarchy;
  const TransitionKernel& k = r.solved.world.kernel;

  nlohmann::ordered_json j;
  j["level0"] = to_string(h.level0_variant());
  j["k_max"] = {{"pursuer", h.k_max(Agent::Pursuer)}, {"evader", h.k_max(Agent::Evader)}};
  for (Agent a : {Agent::Pursuer, Agent::Evader}) {
    auto& arr = j["levels"][std::string(to_string(a))];
    arr = nlohmann::ordered_json::array();
    for (int lv = 0; lv <= h.top_level(a); ++lv) {
      const HierarchyLevel& L = h.level(a, lv);
      std::string bytes(reinterpret_cast<const char*>(L.policy.table().data()),
                        L.policy.table().size() * sizeof(double));
      nlohmann::ordered_json e;
      e["level"] = lv;
      e["kind"] = L.policy.kind() == PolicyKind::Pure ? "pure" : "mixed";
      e["sweeps"] = L.iterations;
      e["residual"] = L.residual;
      e["policy_sha256"] = sha256_hex(bytes);
      for (int prev = 0; prev < lv; ++prev)
        if (h.policy(a, prev) == L.policy) {
          e["same_as_level"] = prev;
          break;
        }
      arr.push_back(e);
    }
  }
  const JointState s0 = cfg.simulation.start;
  const StateIndex si = k.grid().state_index(s0);
  for (Agent a : {Agent::Pursuer, Agent::Evader})
    for (int lv = 1; lv <= h.top_level(a); ++lv)
      j["levels"][std::string(to_string(a))][static_cast<std::size_t>(lv)]["value_at_start"] =
          h.level(a, lv).value->values[si];
  if (const auto& fp = h.fixed_point()) {
    j["fixed_point"] = {{"agent", to_string(fp->agent)}, {"level", fp->level}};
    const Policy& mine = h.policy(fp->agent, fp->level);
    const Policy& theirs = h.policy(opponent(fp->agent), fp->level + 1);
    const Policy& p = fp->agent == Agent::Pursuer ? mine : theirs;
    const Policy& e = fp->agent == Agent::Pursuer ? theirs : mine;
    r.nash = nash_check(k, p, e, 1e-6, cfg.solver);
    nlohmann::ordered_json n;
    n["pursuer_level"] = fp->agent == Agent::Pursuer ? fp->level : fp->level + 1;
    n["evader_level"] = fp->agent == Agent::Evader ? fp->level : fp->level + 1;
    n["pursuer_gain"] = r.nash->pursuer_gain;
    n["evader_gain"] = r.nash->evader_gain;
    n["tolerance"] = 1e-6;
    n["is_nash"] = r.nash->is_nash;
    m.write("nash.json", n.dump(2) + "\n");
    log_line(opt, std::string("fixed point at level ") + std::to_string(fp->level) +
                      (r.nash->is_nash ? ", Nash check passed" : ", Nash check FAILED"));
  } else {
    j["fixed_point"] = nullptr;
    log_line(opt, "no fixed point within the computed levels");
  }
  m.write("hierarchy.json", j.dump(2) + "\n");
  m.write("policies.bin", serialize_hierarchy(h));
  if (export_values) m.write("values.csv", values_csv(k, h));
  m.note("kernel_cache_hit", r.solved.world.kernel_cache_hit);
  m.note("hierarchy_cache_hit", r.solved.hierarchy_cache_hit);
  m.summary() = {{"fixed_point", j["fixed_point"]}};
  m.finish();
  return r;
}

struct SimulateRequest {
  bool matrix = false;
  // Pair mode; negative means "take it from the config".
  int pursuer_level = -1;
  int evader_level = -1;
  // Matrix mode: `fixed_agent` at `fixed_level`, the other over `levels`
  // (empty means 1..k_max).
  Agent fixed_agent = Agent::Evader;
  int fixed_level = 2;
  std::vector<int> levels;
  // Pair mode: write the first n trajectories as CSV.
  long dump_trajectories = 0;
  // Overrides of the config's game count (0 keeps it).
  long games = 0;
};

inline nlohmann::ordered_json cmd_simulate(const ExperimentConfig& cfg, const RunOptions& opt,
                                           const SimulateRequest& req) {
  Manifest m("simulate", cfg, opt.out_dir);
  const Solved s = load_solved(cfg, opt);
  const TransitionKernel& k = s.world.kernel;
  const Hierarchy& h = s.hierarchy;
  const auto& sim = cfg.simulation;
  const long games = req.games > 0 ? req.games : sim.games;
  const StateIndex si = k.grid().state_index(sim.start);
  nlohmann::ordered_json out;
  out["start"] = {{"pursuer", {sim.start.pursuer.x, sim.start.pursuer.y}},
                  {"evader", {sim.start.evader.x, sim.start.evader.y}}};
  out["games"] = games;
  out["seed"] = sim.seed;
  out["max_steps"] = sim.max_steps > 0 ? sim.max_steps : default_max_steps(k.grid());

  if (!req.matrix) {
    const int lp = req.pursuer_level >= 0 ? req.pursuer_level : sim.pursuer_level;
    const int le = req.evader_level >= 0 ? req.evader_level : sim.evader_level;
    const Policy& p = h.policy(Agent::Pursuer, lp);
    const Policy& e = h.policy(Agent::Evader, le);
    log_line(opt, "simulating pursuer level " + std::to_string(lp) + " vs evader level " +
                      std::to_string(le) + " over " + std::to_string(games) + " games");
    const MatchStats st = run_match(k, p, e, sim.start, games, sim.seed, sim.max_steps);
    out["pursuer_level"] = lp;
    out["evader_level"] = le;
    out["stats"] = to_json(st);
    out["exact_value_at_start"] = policy_evaluation(k, p, e, cfg.solver)[si];
    LevelMatrix one{Agent::Evader, le, {{lp, st}}};
    m.write("match.json", out.dump(2) + "\n");
    m.write("match.txt", level_matrix_table(one));
    const long n_dump = std::min(req.dump_trajectories, games);
    for (long g = 0; g < n_dump; ++g) {
      const Trajectory t = rollout(k, p, e, sim.start, game_seed(sim.seed, static_cast<std::uint64_t>(g)),
                                   sim.max_steps);
      char name[64];
      std::snprintf(name, sizeof name, "trajectories/game-%05ld.csv", g);
      m.write(name, trajectory_csv(t));
    }
  } else {
    std::vector<int> levels = req.levels;
    const Agent varying = opponent(req.fixed_agent);
    if (levels.empty())
      for (int lv = 1; lv <= cfg.agent(varying).k_max; ++lv) levels.push_back(lv);
    log_line(opt, "level matrix: " + std::string(to_string(req.fixed_agent)) + " fixed at " +
                      std::to_string(req.fixed_level) + ", " + std::to_string(games) +
                      " games per column");
    const LevelMatrix lm = level_matrix_experiment(h, k, sim.start, req.fixed_agent,
                                                   req.fixed_level, levels, games, sim.seed,
                                                   sim.max_steps);
    out["fixed_agent"] = to_string(req.fixed_agent);
    out["fixed_level"] = req.fixed_level;
    out["columns"] = nlohmann::ordered_json::array();
    for (const auto& c : lm.columns) {
      const Policy& fixed = h.policy(req.fixed_agent, req.fixed_level);
      const Policy& other = h.policy(varying, c.level);
      const Policy& p = req.fixed_agent == Agent::Pursuer ? fixed : other;
      const Policy& e = req.fixed_agent == Agent::Pursuer ? other : fixed;
      nlohmann::ordered_json col;
      col["level"] = c.level;
      col["stats"] = to_json(c.stats);
      col["exact_value_at_start"] = policy_evaluation(k, p, e, cfg.solver)[si];
      out["columns"].push_back(col);
    }
    m.write("matrix.json", out.dump(2) + "\n");
    m.write("matrix.txt", level_matrix_table(lm));
  }
  m.note("kernel_cache_hit", s.world.kernel_cache_hit);
  m.note("hierarchy_cache_hit", s.hierarchy_cache_hit);
  m.summary() = out.contains("stats") ? out["stats"] : nlohmann::ordered_json(out["columns"]);
  m.finish();
  return out;
}

struct InferRequest {
  // Observed trajectory; empty means simulate one from the config.
  std::filesystem::path trajectory_file;
};

inline nlohmann::ordered_json cmd_infer(const ExperimentConfig& cfg, const RunOptions& opt,
                                        const InferRequest& req) {
  Manifest m("infer", cfg, opt.out_dir);
  const Solved s = load_solved(cfg, opt);
  const TransitionKernel& k = s.world.kernel;
  const Hierarchy& h = s.hierarchy;
  const InferenceConfig& inf = cfg.inference;
  const Agent me = inf.observer;
  nlohmann::ordered_json out;
  out["mode"] = inf.mode == InferenceMode::Fixed ? "fixed" : "dynamic";
  out["observer"] = to_string(me);
  out["window"] = inf.window;

  std::vector<JointState> states;
  if (!req.trajectory_file.empty()) {
    states = parse_trajectory_csv(read_file(req.trajectory_file));
    for (const JointState& js : states)
      if (!k.grid().contains(js)) throw InputError("trajectory state outside the grid");
    out["source"] = "file";
  }

  if (inf.mode == InferenceMode::Fixed) {
    if (states.empty()) {
      const Policy& mine = h.policy(me, inf.observer_level);
      const Policy& theirs = h.policy(opponent(me), inf.opponent_level);
      const Trajectory t =
          rollout(k, me == Agent::Pursuer ? mine : theirs, me == Agent::Pursuer ? theirs : mine,
                  cfg.simulation.start, inf.seed, cfg.simulation.max_steps);
      states = t.states;
      m.write("trajectory.csv", trajectory_csv(t));
      out["source"] = "simulated";
      out["true_opponent_level"] = inf.opponent_level;
      out["outcome"] = t.truncated ? "truncated" : std::string(to_string(t.outcome));
    }
    // Only transitions out of interior states carry policy information.
    std::size_t n = states.size();
    while (n > 1 && !k.is_interior(k.grid().state_index(states[n - 1])) &&
           !k.is_interior(k.grid().state_index(states[n - 2])))
      --n;
    states.resize(n);
    const int candidates = h.k_max(me);
    const auto beliefs = infer_fixed(k, h, me, inf.observer_level, states, inf.window, candidates);
    m.write("heatmap.csv", heatmap_csv(beliefs));
    out["observer_level"] = inf.observer_level;
    out["stages"] = beliefs.size();
    out["final_mle_level"] = beliefs.back().mle_level;
    out["final_probabilities"] = beliefs.back().normalized();
    out["any_floored"] = std::any_of(beliefs.begin(), beliefs.end(),
                                     [](const Belief& b) { return b.floored; });
  } else {
    if (!states.empty()) {
      // Offline replay: what the controller would have played on this path.
      DynamicLevelController ctl(k, h, me, h.k_max(me), inf.window);
      for (const JointState& js : states) {
        const StateIndex si = k.grid().state_index(js);
        if (!k.is_interior(si)) break;
        ctl.observe(si);
      }
      m.write("schedule.csv", schedule_csv(ctl.schedule()));
      m.write("heatmap.csv", heatmap_csv(ctl.beliefs()));
      out["final_own_level"] = ctl.schedule().back().own_level;
    } else if (inf.both_adapt) {
      const DynamicGame g =
          play_dynamic_both(k, h, h.k_max(Agent::Pursuer), h.k_max(Agent::Evader), inf.window,
                            cfg.simulation.start, inf.seed, cfg.simulation.max_steps);
      m.write("trajectory.csv", trajectory_csv(g.trajectory));
      m.write("schedule-pursuer.csv", schedule_csv(g.schedules[0]));
      m.write("schedule-evader.csv", schedule_csv(g.schedules[1]));
      m.write("heatmap-pursuer.csv", heatmap_csv(g.beliefs[0]));
      m.write("heatmap-evader.csv", heatmap_csv(g.beliefs[1]));
      out["both_adapt"] = true;
      out["outcome"] = g.trajectory.truncated ? "truncated"
                                              : std::string(to_string(g.trajectory.outcome));
    } else {
      const DynamicGame g =
          play_dynamic(k, h, me, h.k_max(me), inf.window, inf.opponent_level,
                       cfg.simulation.start, inf.seed, cfg.simulation.max_steps);
      m.write("trajectory.csv", trajectory_csv(g.trajectory));
      m.write("schedule.csv", schedule_csv(g.schedules[0]));
      m.write("heatmap.csv", heatmap_csv(g.beliefs[0]));
      out["opponent_level"] = inf.opponent_level;
      out["k_max"] = h.k_max(me);
      out["final_own_level"] = g.schedules[0].back().own_level;
      out["outcome"] = g.trajectory.truncated ? "truncated"
                                              : std::string(to_string(g.trajectory.outcome));
    }
  }
  m.write("inference.json", out.dump(2) + "\n");
  m.summary() = out;
  m.finish();
  return out;
}

}  // namespace peg
