// peg: command-line front end for the level-k pursuit-evasion solver.
//
//   peg build    CONFIG            kernel (cached) + wind table
//   peg solve    CONFIG            level-k hierarchy, fixed point, Nash report
//   peg simulate CONFIG            Monte Carlo matches (pair or level matrix)
//   peg infer    CONFIG            level inference (fixed or dynamic)
//
// Exit codes: 0 ok, 1 usage / bad input, 2 config error, 3 solver error,
// 4 I/O error.

#include <charconv>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "peg/commands.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kSolver = 3, kIo = 4 };

// "1-6" or "1,3,5".
std::vector<int> parse_levels(const std::string& s) {
  std::vector<int> out;
  auto to_int = [&](std::string_view t) {
    int v = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size() || v < 0)
      throw peg::InputError("bad level list \"" + s + "\"");
    return v;
  };
  if (const auto dash = s.find('-'); dash != std::string::npos) {
    const int lo = to_int(std::string_view(s).substr(0, dash));
    const int hi = to_int(std::string_view(s).substr(dash + 1));
    if (lo > hi) throw peg::InputError("bad level range \"" + s + "\"");
    for (int v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::string_view rest = s;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    out.push_back(to_int(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Level-k pursuit-evasion games in a stochastic wind field"};
  app.set_version_flag("--version", std::string(peg::kToolVersion));
  app.require_subcommand(1);

  std::string config_path;
  peg::RunOptions opt;
  std::string out_dir = "out", cache_dir = ".peg-cache";
  bool no_cache = false, quiet = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "experiment config (JSON)")->required();
    sub->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--cache", cache_dir, "cache directory")->capture_default_str();
    sub->add_flag("--no-cache", no_cache, "neither read nor write the cache");
    sub->add_flag("-q,--quiet", quiet, "no progress messages");
  };

  auto* build = app.add_subcommand("build", "build the discrete game (kernel) and cache it");
  common(build);

  bool export_values = false;
  auto* solve = app.add_subcommand("solve", "compute the level-k hierarchy");
  common(solve);
  solve->add_flag("--values", export_values, "also export every value function as CSV");

  peg::SimulateRequest sim;
  std::string matrix_agent, levels;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo matches between levels");
  common(simulate);
  simulate->add_option("-p,--pursuer-level", sim.pursuer_level, "pursuer level (pair mode)");
  simulate->add_option("-e,--evader-level", sim.evader_level, "evader level (pair mode)");
  simulate->add_option("--matrix", matrix_agent, "fix this agent and sweep the other")
      ->check(CLI::IsMember({"pursuer", "evader"}));
  simulate->add_option("--fixed-level", sim.fixed_level, "level of the fixed agent")
      ->capture_default_str();
  simulate->add_option("--levels", levels, "levels of the swept agent, e.g. 1-6 or 1,3");
  simulate->add_option("--games", sim.games, "override the config's game count");
  simulate->add_option("--dump", sim.dump_trajectories, "write the first N trajectories (pair mode)");

  peg::InferRequest inf;
  std::string trajectory;
  auto* infer = app.add_subcommand("infer", "infer the opponent's level from a trajectory");
  common(infer);
  infer->add_option("-t,--trajectory", trajectory, "trajectory CSV (default: simulate one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  opt.out_dir = out_dir;
  opt.cache_dir = cache_dir;
  opt.use_cache = !no_cache;
  if (quiet) opt.log = nullptr;

  try {
    const peg::ExperimentConfig cfg = peg::load_config(config_path);
    if (build->parsed()) {
      peg::cmd_build(cfg, opt);
    } else if (solve->parsed()) {
      peg::cmd_solve(cfg, opt, export_values);
    } else if (simulate->parsed()) {
      if (!matrix_agent.empty()) {
        sim.matrix = true;
        sim.fixed_agent = matrix_agent == "pursuer" ? peg::Agent::Pursuer : peg::Agent::Evader;
      }
      if (!levels.empty()) sim.levels = parse_levels(levels);
      peg::cmd_simulate(cfg, opt, sim);
      if (!quiet) {
        const auto table = peg::read_file(opt.out_dir / (sim.matrix ? "matrix.txt" : "match.txt"));
        std::cout << table;
      }
    } else if (infer->parsed()) {
      inf.trajectory_file = trajectory;
      const auto out = peg::cmd_infer(cfg, opt, inf);
      if (!quiet) std::cout << out.dump(2) << '\n';
    }
  } catch (const peg::ConfigError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << '\n';
    return kConfig;
  } catch (const peg::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const peg::ConvergenceError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kSolver;
  } catch (const peg::DegenerateModelError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kSolver;
  } catch (const peg::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
