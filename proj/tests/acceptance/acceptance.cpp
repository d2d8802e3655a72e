// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../unit/fixtures.hpp"
#include "peg/commands.hpp"

using namespace peg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path bundled_config() { return fs::path(PEG_SOURCE_DIR) / "configs" / "peg_18x18.json"; }

RunOptions options(const fs::path& out, const fs::path& cache) {
  RunOptions o;
  o.out_dir = out;
  o.cache_dir = cache;
  o.log = nullptr;
  return o;
}

double pursuer_win(TerminalClass c) {
  return c == TerminalClass::Capture || c == TerminalClass::CrashEvaderOnly ? 1.0 : 0.0;
}

// 1 -----------------------------------------------------------------------
Outcome kernel_normalization(const TransitionKernel& k) {
  double worst_sum = 0.0, min_entry = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < k.interior_count(); ++i)
    for (std::size_t a = 0; a < k.joint_actions(); ++a, ++rows) {
      double s = 0.0;
      for (double p : k.row(i, a)) {
        s += p;
        min_entry = std::min(min_entry, p);
      }
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  return {worst_sum <= 1e-12 && min_entry >= 0.0,
          fmt("%zu rows, max |sum-1| = %.2e, min entry = %.2e", rows, worst_sum, min_entry)};
}

// 2 -----------------------------------------------------------------------
// Same physical domain at cell sizes h0, h0/2, h0/4; each fine cell takes the
// wind of the coarse cell it lies in.
struct MomentErrors {
  double mean = 0.0;
  double cov = 0.0;
};

MomentErrors moment_errors(int refine, double h0, const WindField& coarse, int n0) {
  const int n = n0 << refine;
  const double h = h0 / double(1 << refine);
  const GridSpec g = GridSpec::make(n, n, h, {}, {});
  WindField w = WindField::calm(g, coarse.sigma);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto c = GridSpec::make(n0, n0, h0, {}, {}).cell_index({x >> refine, y >> refine});
      w.mean_x[g.cell_index({x, y})] = coarse.mean_x[c];
      w.mean_y[g.cell_index({x, y})] = coarse.mean_y[c];
    }
  const Agents agents;
  const TransitionKernel k = build_kernel(g, w, agents);
  const double s2 = w.sigma * w.sigma;
  MomentErrors e;
  for (std::size_t i = 0; i < k.interior_count(); ++i) {
    const JointState s = g.state_at(k.interior_state(i));
    const double dt = k.holding_time(i);
    for (std::size_t a = 0; a < k.joint_actions(); ++a) {
      const JointAction ja{static_cast<std::uint32_t>(a / k.evader_actions()),
                           static_cast<std::uint32_t>(a % k.evader_actions())};
      const Drift b = drift(g, w, agents, s, ja);
      const auto row = k.row(i, a);
      std::array<double, 4> m{};
      std::array<std::array<double, 4>, 4> second{};
      for (std::size_t slot = 1; slot < kStencilSize; ++slot) {
        const std::size_t j = (slot - 1) / 2;
        const double d = ((slot - 1) % 2 == 0 ? h : -h);
        m[j] += row[slot] * d;
        second[j][j] += row[slot] * d * d;
      }
      for (std::size_t j = 0; j < 4; ++j) {
        e.mean = std::max(e.mean, std::abs(m[j] / dt - b[j]));
        for (std::size_t l = 0; l < 4; ++l) {
          const double cov = (second[j][l] - m[j] * m[l]) / dt;
          e.cov = std::max(e.cov, std::abs(cov - (j == l ? s2 : 0.0)));
        }
      }
    }
  }
  return e;
}

Outcome local_consistency() {
  const int n0 = 6;
  const double h0 = 0.1;
  const WindField coarse = generate_wind(GridSpec::make(n0, n0, h0, {}, {}), 17, 0.3, 0.4);
  std::array<MomentErrors, 3> e;
  for (int r = 0; r < 3; ++r) e[r] = moment_errors(r, h0, coarse, n0);
  // The drift is matched exactly at every h; only rounding is left.
  const bool mean_ok = std::all_of(e.begin(), e.end(), [](auto& x) { return x.mean <= 1e-12; }) ||
                       (e[0].mean / e[1].mean >= 1.8 && e[1].mean / e[2].mean >= 1.8);
  const double r1 = e[0].cov / e[1].cov, r2 = e[1].cov / e[2].cov;
  return {mean_ok && r1 >= 1.8 && r2 >= 1.8,
          fmt("h=%.3g/%.3g/%.3g: mean err %.1e/%.1e/%.1e; cov err %.4f/%.4f/%.4f, ratios %.3f %.3f",
              h0, h0 / 2, h0 / 4, e[0].mean, e[1].mean, e[2].mean, e[0].cov, e[1].cov, e[2].cov,
              r1, r2)};
}

// 3 -----------------------------------------------------------------------
// Backward induction over a finite horizon, straight from transition_probs.
// Returns values and the largest probability of still being unabsorbed.
struct Induction {
  std::vector<double> values;
  int horizon = 0;
  double unabsorbed = 1.0;
};

Induction backward_induction(const peg::testing::SmallGame& g, const Policy& opp, Agent me) {
  const TransitionKernel& k = g.kernel;
  const GridSpec& grid = g.grid;
  const std::size_t n_me = k.action_count(me), n_opp = k.action_count(opponent(me));
  // Per interior state and own action: successor distribution after averaging the opponent.
  std::vector<std::vector<std::map<StateIndex, double>>> next(k.interior_count());
  for (std::size_t i = 0; i < k.interior_count(); ++i) {
    const JointState s = grid.state_at(k.interior_state(i));
    next[i].resize(n_me);
    for (std::size_t a = 0; a < n_me; ++a)
      for (std::size_t b = 0; b < n_opp; ++b) {
        const double q = opp.prob(i, b);
        if (q == 0.0) continue;
        const JointAction ja = me == Agent::Pursuer
                                   ? JointAction{std::uint32_t(a), std::uint32_t(b)}
                                   : JointAction{std::uint32_t(b), std::uint32_t(a)};
        for (const auto& [t, p] : transition_probs(grid, g.wind, g.agents, s, ja))
          next[i][a][grid.state_index(t)] += q * p;
      }
  }
  const std::size_t ns = grid.state_count();
  Induction out;
  std::vector<double> v(ns, 0.0), u(ns, 0.0);
  for (StateIndex s = 0; s < ns; ++s) {
    const TerminalClass c = classify_state(grid, grid.state_at(s));
    if (is_terminal(c)) v[s] = reward_for(me, c);
    else u[s] = 1.0;
  }
  // Each agent maximizes its own reward. Stop once absorption is all but certain.
  while (out.unabsorbed > 1e-11 && out.horizon < 1000000) {
    std::vector<double> v2 = v, u2 = u;
    out.unabsorbed = 0.0;
    for (std::size_t i = 0; i < k.interior_count(); ++i) {
      const StateIndex s = k.interior_state(i);
      double best = -1e300, worst_u = 0.0;
      for (std::size_t a = 0; a < n_me; ++a) {
        double val = 0.0, un = 0.0;
        for (const auto& [t, p] : next[i][a]) {
          val += p * v[t];
          un += p * u[t];
        }
        best = std::max(best, val);
        worst_u = std::max(worst_u, un);
      }
      v2[s] = best;
      u2[s] = worst_u;
      out.unabsorbed = std::max(out.unabsorbed, worst_u);
    }
    v.swap(v2);
    u.swap(u2);
    ++out.horizon;
  }
  out.values = std::move(v);
  return out;
}

Outcome oracle_equivalence() {
  const auto g = peg::testing::small_game(peg::testing::arena3x3(), 11, 0.3, 0.4);
  const TransitionKernel& k = g.kernel;
  std::mt19937_64 rng(3);
  SolverOptions tight;
  tight.tol = 1e-13;
  double worst = 0.0;
  int cases = 0, horizon = 0;
  for (Agent me : {Agent::Pursuer, Agent::Evader}) {
    std::vector<Policy> opps{uniform_policy(k, opponent(me)),
                             level0_policy(k, opponent(me), Level0Variant::SafeUniform)};
    for (int r = 0; r < 3; ++r) opps.push_back(peg::testing::random_mixed_policy(k, opponent(me), rng));
    opps.push_back(peg::testing::random_pure_policy(k, opponent(me), rng));
    for (const Policy& opp : opps) {
      const BestResponse br = best_response(k, opp, me, tight);
      const Induction bi = backward_induction(g, opp, me);
      horizon = std::max(horizon, bi.horizon);
      for (StateIndex s = 0; s < k.state_count(); ++s)
        worst = std::max(worst, std::abs(br.value[s] - bi.values[s]));
      ++cases;
    }
  }
  return {worst <= 1e-6,
          fmt("%d opponents, %zu-state grid (81 playable joint states), horizon up to %d, max |diff| = %.2e",
              cases, k.state_count(), horizon, worst)};
}

// 4 -----------------------------------------------------------------------
Outcome best_response_dominance() {
  const auto g = peg::testing::small_game(peg::testing::arena3x3(), 11, 0.3, 0.4);
  const TransitionKernel& k = g.kernel;
  std::mt19937_64 rng(4);
  double worst = -1e300;
  long comparisons = 0;
  for (Agent me : {Agent::Pursuer, Agent::Evader})
    for (int o = 0; o < 50; ++o) {
      const Policy opp = peg::testing::random_mixed_policy(k, opponent(me), rng);
      const BestResponse br = best_response(k, opp, me);
      const ValueFunction vb = policy_evaluation(k, br.policy, opp);
      for (int alt = 0; alt < 200; ++alt) {
        const ValueFunction va =
            policy_evaluation(k, peg::testing::random_pure_policy(k, me, rng), opp);
        for (StateIndex s : k.interior_states()) worst = std::max(worst, va[s] - vb[s]);
        ++comparisons;
      }
    }
  return {worst <= 1e-9,
          fmt("%ld policy comparisons (both agents), max alternative gain = %.2e", comparisons,
              worst)};
}

// 5 -----------------------------------------------------------------------
Outcome nash_certificates(const TransitionKernel& bundled_k, const Hierarchy& bundled_h) {
  int found = 0, passed = 0;
  double worst = 0.0;
  std::string where;
  auto certify = [&](const TransitionKernel& k, const Hierarchy& h, const std::string& name) {
    const auto& fp = h.fixed_point();
    if (!fp) return;
    ++found;
    const Policy& mine = h.policy(fp->agent, fp->level);
    const Policy& theirs = h.policy(opponent(fp->agent), fp->level + 1);
    const NashReport r = fp->agent == Agent::Pursuer ? nash_check(k, mine, theirs, 1e-6)
                                                     : nash_check(k, theirs, mine, 1e-6);
    worst = std::max(worst, r.max_gain());
    if (r.is_nash && r.max_gain() <= 1e-6) ++passed;
    where += (where.empty() ? "" : ",") + name + ":K=" + std::to_string(fp->level);
  };
  certify(bundled_k, bundled_h, "bundled");
  for (int seed = 1; seed <= 8; ++seed)
    for (Level0Variant v : {Level0Variant::SafeUniform, Level0Variant::Uniform}) {
      const auto g = peg::testing::small_game(peg::testing::arena3x3(), std::uint64_t(seed), 0.3, 0.4);
      certify(g.kernel, build_hierarchy(g.kernel, 6, 6, v),
              "arena" + std::to_string(seed) + (v == Level0Variant::Uniform ? "u" : "s"));
    }
  return {found > 0 && passed == found,
          fmt("%d/%d fixed points certified, max deviation gain %.2e (%s)", passed, found, worst,
              where.c_str())};
}

// 6 -----------------------------------------------------------------------
Outcome table_ordering(const ExperimentConfig& cfg, const TransitionKernel& k, const Hierarchy& h) {
  const StateIndex s0 = k.grid().state_index(cfg.simulation.start);
  const Policy& e2 = h.policy(Agent::Evader, 2);
  std::array<double, 7> mc{}, exact{};
  for (int lv = 1; lv <= 6; ++lv) {
    const MatchStats m = run_match(k, h.policy(Agent::Pursuer, lv), e2, cfg.simulation.start,
                                   cfg.simulation.games, cfg.simulation.seed);
    mc[lv] = m.percent(m.pursuer_wins);
    exact[lv] = 100.0 * evaluate_pair(k, h.policy(Agent::Pursuer, lv), e2, pursuer_win)[s0];
  }
  auto ordered = [](const std::array<double, 7>& p) {
    bool ok = p[3] > p[2];
    for (int lv = 4; lv <= 6; ++lv) ok = ok && std::abs(p[lv] - p[3]) <= 3.0;
    return ok;
  };
  std::string d = fmt("pursuer L1-L6 vs evader L2, %ld games: MC", cfg.simulation.games);
  for (int lv = 1; lv <= 6; ++lv) d += fmt(" %.1f", mc[lv]);
  d += "; exact";
  for (int lv = 1; lv <= 6; ++lv) d += fmt(" %.1f", exact[lv]);
  return {ordered(mc) && ordered(exact), d};
}

// 7 -----------------------------------------------------------------------
Outcome simulator_agreement(const ExperimentConfig& cfg, const TransitionKernel& k,
                            const Hierarchy& h) {
  const StateIndex s0 = k.grid().state_index(cfg.simulation.start);
  bool ok = true;
  std::string d;
  for (auto [lp, le] : {std::pair{3, 2}, std::pair{1, 1}}) {
    const Policy& p = h.policy(Agent::Pursuer, lp);
    const Policy& e = h.policy(Agent::Evader, le);
    // V(s0) is the value of play until absorption, so no game may be cut short.
    const MatchStats m =
        run_match(k, p, e, cfg.simulation.start, 10000, cfg.simulation.seed + 1, 1000000);
    const double v = policy_evaluation(k, p, e)[s0];
    const double z = std::abs(m.mean_reward - v) / m.reward_stderr();
    ok = ok && m.truncated == 0 && z <= 3.0;
    d += fmt("%sP%d/E%d: MC %.4f vs V %.4f (%.2f SE, %ld truncated)", d.empty() ? "" : "; ", lp,
             le, m.mean_reward, v, z, m.truncated);
  }
  return {ok, d};
}

// 8 -----------------------------------------------------------------------
Outcome inference_recovery(const ExperimentConfig& cfg, const TransitionKernel& k,
                           const Hierarchy& h) {
  const InferenceConfig& inf = cfg.inference;
  const Agent me = inf.observer;
  const Policy& mine = h.policy(me, inf.observer_level);
  const Policy& theirs = h.policy(opponent(me), 2);
  const Policy& p = me == Agent::Pursuer ? mine : theirs;
  const Policy& e = me == Agent::Pursuer ? theirs : mine;
  int hits = 0;
  const int games = 200;
  for (int gi = 0; gi < games; ++gi) {
    const Trajectory t = rollout(k, p, e, cfg.simulation.start, game_seed(inf.seed, std::uint64_t(gi)));
    const auto beliefs = infer_fixed(k, h, me, inf.observer_level, t.states, 1 << 30, 3);
    hits += beliefs.back().mle_level == 2;
  }
  const double pct = 100.0 * hits / games;
  return {pct >= 70.0, fmt("%s observer at level %d, opponent level 2, candidates {0,1,2}: MLE = 2 in %.1f%% of %d games",
                           std::string(to_string(me)).c_str(), inf.observer_level, pct, games)};
}

// 9 -----------------------------------------------------------------------
Outcome controller_settling(const ExperimentConfig& cfg, const TransitionKernel& k,
                            const Hierarchy& h) {
  const int games = 100;
  int settled = 0;
  std::array<int, 6> final_levels{};
  for (int gi = 0; gi < games; ++gi) {
    const DynamicGame g = play_dynamic(k, h, Agent::Pursuer, 5, cfg.inference.window, 3,
                                       cfg.simulation.start,
                                       game_seed(cfg.inference.seed, std::uint64_t(gi)));
    const int last = g.schedules[0].back().own_level;
    ++final_levels[static_cast<std::size_t>(last)];
    settled += last == 4;
  }
  std::string hist;
  for (int lv = 0; lv <= 5; ++lv) hist += fmt(" L%d:%d", lv, final_levels[lv]);
  return {2 * settled > games,
          fmt("adaptive pursuer k_max 5 vs evader L3, window %d: final level 4 in %d/%d games (%s)",
              cfg.inference.window, settled, games, hist.c_str() + 1)};
}

// 10 ----------------------------------------------------------------------
std::map<std::string, std::string> exports(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel.rfind("manifest-", 0) == 0) continue;  // timestamps
    files[rel] = read_file(e.path());
  }
  return files;
}

Outcome determinism(const ExperimentConfig& cfg, const fs::path& work) {
  std::array<std::map<std::string, std::string>, 2> runs;
  for (int r = 0; r < 2; ++r) {
    const fs::path dir = work / ("determinism-" + std::to_string(r));
    fs::remove_all(dir);
    const RunOptions opt = options(dir / "out", dir / "cache");
    cmd_build(cfg, opt);
    cmd_solve(cfg, opt, true);
    SimulateRequest req;
    req.dump_trajectories = 5;
    cmd_simulate(cfg, opt, req);
    runs[r] = exports(opt.out_dir);
  }
  std::size_t bytes = 0, differing = 0;
  std::string first_diff;
  for (const auto& [name, body] : runs[0]) {
    bytes += body.size();
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != body) {
      ++differing;
      if (first_diff.empty()) first_diff = name;
    }
  }
  const bool ok = differing == 0 && runs[0].size() == runs[1].size() && !runs[0].empty();
  return {ok, fmt("%zu files, %zu bytes compared (manifests excluded), %zu differ%s%s", runs[0].size(),
                  bytes, differing, first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance suite");
  fs::path work = "acceptance-work";
  app.add_option("--work-dir", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const ExperimentConfig cfg = load_config(bundled_config());
  const Solved solved = load_solved(cfg, options(work / "out", work / "cache"));
  const TransitionKernel& k = solved.world.kernel;
  const Hierarchy& h = solved.hierarchy;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kernel normalization and nonnegativity", [&] { return kernel_normalization(k); }},
      {"local consistency under refinement", [] { return local_consistency(); }},
      {"best response vs backward induction", [] { return oracle_equivalence(); }},
      {"best response dominance", [] { return best_response_dominance(); }},
      {"fixed point is a Nash equilibrium", [&] { return nash_certificates(k, h); }},
      {"level ordering of win rates", [&] { return table_ordering(cfg, k, h); }},
      {"simulator agrees with exact values", [&] { return simulator_agreement(cfg, k, h); }},
      {"fixed-mode level inference", [&] { return inference_recovery(cfg, k, h); }},
      {"dynamic controller settles at level 4", [&] { return controller_settling(cfg, k, h); }},
      {"end-to-end determinism", [&] { return determinism(cfg, work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
              << o.detail << fmt(" (%.1fs)", secs) << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
