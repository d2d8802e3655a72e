#pragma once

// Monte Carlo rollouts of the discrete game and match statistics.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/level_k.hpp"
#include "peg/mcam.hpp"
#include "peg/parallel.hpp"
#include "peg/rng.hpp"

namespace peg {

struct Trajectory {
  std::vector<JointState> states;
  std::vector<JointAction> actions;
  // Cumulative holding time at each state (elapsed[0] = 0).
  std::vector<double> elapsed;
  TerminalClass outcome = TerminalClass::Interior;
  bool truncated = false;

  std::size_t steps() const { return actions.size(); }
};

// Index of the action drawn from `probs` with the uniform variate u.
inline std::uint32_t sample_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::uint32_t last = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] <= 0.0) continue;
    acc += probs[a];
    last = static_cast<std::uint32_t>(a);
    if (u < acc) return last;
  }
  return last;
}

inline long default_max_steps(const GridSpec& g) { return 50L * (g.width() + g.height()); }

// Drives one game. Per step the RNG is consumed in a fixed order: pursuer
// action, evader action, successor. `choose(agent, stage, interior, state, rng)`
// returns the agent's action index; `observe(stage, state)` is called for
// every state entered, starting with s0.
template <class Choose, class Observe>
Trajectory play_game(const TransitionKernel& k, const JointState& s0, Rng& rng, long max_steps,
                     Choose&& choose, Observe&& observe) {
  const GridSpec& g = k.grid();
  if (!g.contains(s0)) throw InputError("initial state outside the grid");
  StateIndex s = g.state_index(s0);
  if (!k.is_interior(s))
    throw InputError("initial state is terminal (" +
                     std::string(to_string(k.terminal_class(s))) + ")");
  if (max_steps <= 0) max_steps = default_max_steps(g);
  Trajectory t;
  t.states.push_back(s0);
  t.elapsed.push_back(0.0);
  observe(0L, s);
  for (long n = 0; n < max_steps; ++n) {
    const auto i = static_cast<std::size_t>(k.interior_index(s));
    const std::uint32_t ap = choose(Agent::Pursuer, n, i, s, rng);
    const std::uint32_t ae = choose(Agent::Evader, n, i, s, rng);
    const JointAction a{ap, ae};
    const std::uint32_t slot = sample_index(k.row(i, k.joint_index(a)), rng.uniform());
    const double dt = k.holding_time(i);
    s = k.successor(s, slot);
    t.actions.push_back(a);
    t.states.push_back(g.state_at(s));
    t.elapsed.push_back(t.elapsed.back() + dt);
    observe(n + 1, s);
    if (!k.is_interior(s)) {
      t.outcome = k.terminal_class(s);
      return t;
    }
  }
  t.truncated = true;
  return t;
}

inline Trajectory rollout(const TransitionKernel& k, const Policy& pursuer, const Policy& evader,
                          const JointState& s0, std::uint64_t seed, long max_steps = 0) {
  detail::check_covers(k, pursuer, Agent::Pursuer);
  detail::check_covers(k, evader, Agent::Evader);
  Rng rng(seed);
  return play_game(
      k, s0, rng, max_steps,
      [&](Agent a, long, std::size_t i, StateIndex, Rng& r) {
        return sample_index((a == Agent::Pursuer ? pursuer : evader).row(i), r.uniform());
      },
      [](long, StateIndex) {});
}

struct MatchStats {
  long games = 0;
  long pursuer_wins = 0;
  long wins_by_capture = 0;
  long wins_by_evader_crash = 0;
  long evader_wins = 0;
  long wins_by_evasion = 0;
  long wins_by_pursuer_crash = 0;
  long draws = 0;
  // Hit max_steps; excluded from every percentage.
  long truncated = 0;
  double mean_steps = 0.0;
  // Mean and sample standard deviation of the pursuer's terminal reward over
  // completed games.
  double mean_reward = 0.0;
  double reward_stddev = 0.0;

  long completed() const { return games - truncated; }
  double percent(long count) const {
    return completed() > 0 ? 100.0 * double(count) / double(completed()) : 0.0;
  }
  double reward_stderr() const {
    return completed() > 0 ? reward_stddev / std::sqrt(double(completed())) : 0.0;
  }

  void add(const Trajectory& t) {
    ++games;
    if (t.truncated) {
      ++truncated;
      return;
    }
    switch (t.outcome) {
      case TerminalClass::Capture: ++pursuer_wins; ++wins_by_capture; break;
      case TerminalClass::CrashEvaderOnly: ++pursuer_wins; ++wins_by_evader_crash; break;
      case TerminalClass::Evasion: ++evader_wins; ++wins_by_evasion; break;
      case TerminalClass::CrashPursuerOnly: ++evader_wins; ++wins_by_pursuer_crash; break;
      case TerminalClass::CrashBoth: ++draws; break;
      case TerminalClass::Interior: break;
    }
  }
};

struct GameSummary {
  TerminalClass outcome = TerminalClass::Interior;
  bool truncated = false;
  std::size_t steps = 0;
};

// Order-independent reduction of per-game summaries.
inline MatchStats summarize(std::span<const GameSummary> games) {
  MatchStats m;
  double steps = 0.0, sum = 0.0, sum_sq = 0.0;
  for (const GameSummary& g : games) {
    Trajectory stub;
    stub.outcome = g.outcome;
    stub.truncated = g.truncated;
    m.add(stub);
    steps += double(g.steps);
    if (!g.truncated) {
      const double r = terminal_reward(g.outcome);
      sum += r;
      sum_sq += r * r;
    }
  }
  if (m.games > 0) m.mean_steps = steps / double(m.games);
  const long n = m.completed();
  if (n > 0) {
    m.mean_reward = sum / double(n);
    if (n > 1)
      m.reward_stddev = std::sqrt(std::max(0.0, (sum_sq - double(n) * m.mean_reward * m.mean_reward) /
                                                    double(n - 1)));
  }
  return m;
}

// n_games independent rollouts; game g uses seed game_seed(seed, g).
inline MatchStats run_match(const TransitionKernel& k, const Policy& pursuer,
                            const Policy& evader, const JointState& s0, long n_games,
                            std::uint64_t seed, long max_steps = 0) {
  if (n_games < 1) throw InputError("run_match needs at least one game");
  std::vector<GameSummary> results(static_cast<std::size_t>(n_games));
  parallel_for(results.size(), [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t g = lo; g < hi; ++g) {
      const Trajectory t = rollout(k, pursuer, evader, s0, game_seed(seed, g), max_steps);
      results[g] = {t.outcome, t.truncated, t.steps()};
    }
  }, 64);
  return summarize(results);
}

struct LevelMatrixColumn {
  int level = 0;
  MatchStats stats;
};

// One agent fixed at `fixed_level`, the other swept over `levels`.
struct LevelMatrix {
  Agent fixed_agent = Agent::Evader;
  int fixed_level = 2;
  std::vector<LevelMatrixColumn> columns;
};

// Every column uses the same master seed (common random numbers).
inline LevelMatrix level_matrix_experiment(const Hierarchy& h, const TransitionKernel& k,
                                           const JointState& s0, Agent fixed_agent,
                                           int fixed_level, const std::vector<int>& levels,
                                           long n_games, std::uint64_t seed,
                                           long max_steps = 0) {
  if (n_games < 1) throw InputError("level matrix needs at least one game per column");
  if (levels.empty()) throw InputError("level matrix needs at least one opposing level");
  const Agent varying = opponent(fixed_agent);
  const Policy& fixed = h.policy(fixed_agent, fixed_level);
  for (int lv : levels) (void)h.policy(varying, lv);
  LevelMatrix out{fixed_agent, fixed_level, {}};
  for (int lv : levels) {
    const Policy& other = h.policy(varying, lv);
    const Policy& p = fixed_agent == Agent::Pursuer ? fixed : other;
    const Policy& e = fixed_agent == Agent::Pursuer ? other : fixed;
    out.columns.push_back({lv, run_match(k, p, e, s0, n_games, seed, max_steps)});
  }
  return out;
}

}  // namespace peg
