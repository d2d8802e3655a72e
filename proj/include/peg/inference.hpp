#pragma once

// Maximum-likelihood inference of the opponent's rationality level from an
// observed state sequence, and the dynamic-level controller built on it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/level_k.hpp"
#include "peg/mcam.hpp"
#include "peg/simulator.hpp"

namespace peg {

// Log-likelihood charged for a transition that has zero probability under a
// hypothesis.
inline constexpr double kLogFloor = -50.0;

struct LogLikelihood {
  double value = 0.0;
  bool floored = false;
};

// P(to | from, pursuer policy, evader policy) with both action
// distributions marginalized out.
inline double pair_transition_prob(const TransitionKernel& k, const Policy& pursuer,
                                   const Policy& evader, StateIndex from, StateIndex to) {
  if (!k.is_interior(from)) throw InputError("transition starts from a terminal state");
  const int slot = k.slot_of(from, to);
  if (slot < 0) return 0.0;
  const auto i = static_cast<std::size_t>(k.interior_index(from));
  double p = 0.0;
  for (std::size_t a = 0; a < k.pursuer_actions(); ++a) {
    const double wp = pursuer.prob(i, a);
    if (wp == 0.0) continue;
    for (std::size_t b = 0; b < k.evader_actions(); ++b) {
      const double w = wp * evader.prob(i, b);
      if (w != 0.0) p += w * k.row(i, a * k.evader_actions() + b)[static_cast<std::size_t>(slot)];
    }
  }
  return p;
}

inline LogLikelihood transition_log_likelihood(const TransitionKernel& k, const Policy& mine,
                                               const Policy& theirs, StateIndex from,
                                               StateIndex to) {
  const Policy& p = mine.agent() == Agent::Pursuer ? mine : theirs;
  const Policy& e = mine.agent() == Agent::Pursuer ? theirs : mine;
  const double prob = pair_transition_prob(k, p, e, from, to);
  if (!(prob > 0.0)) return {kLogFloor, true};
  return {std::log(prob), false};
}

// Sum over transitions n in [begin, end) of
// log P(s_{n+1} | s_n, mu^{me,(my_levels[n])}, mu^{-me,(opp_level)}).
inline LogLikelihood window_log_likelihood(const TransitionKernel& k, const Hierarchy& h,
                                           Agent me, std::span<const int> my_levels,
                                           int opp_level, std::span<const StateIndex> states,
                                           std::size_t begin, std::size_t end) {
  if (begin > end || end >= states.size())
    throw InputError("likelihood window runs past the observed states");
  if (my_levels.size() < end) throw InputError("own level missing for a window stage");
  const Policy& theirs = h.policy(opponent(me), opp_level);
  LogLikelihood total;
  for (std::size_t n = begin; n < end; ++n) {
    const LogLikelihood t = transition_log_likelihood(k, h.policy(me, my_levels[n]), theirs,
                                                      states[n], states[n + 1]);
    total.value += t.value;
    total.floored = total.floored || t.floored;
  }
  return total;
}

struct Belief {
  std::vector<int> candidate_levels;
  std::vector<double> log_likelihoods;
  int mle_level = 0;
  bool floored = false;

  // exp(log-likelihood), normalized to sum to one.
  std::vector<double> normalized() const {
    std::vector<double> p(log_likelihoods.size(), 0.0);
    if (p.empty()) return p;
    const double top = *std::max_element(log_likelihoods.begin(), log_likelihoods.end());
    double z = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) z += (p[j] = std::exp(log_likelihoods[j] - top));
    for (double& v : p) v /= z;
    return p;
  }
};

// Argmax with ties resolved toward the lowest candidate.
inline int argmax_level(const std::vector<int>& levels, const std::vector<double>& ll) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < ll.size(); ++j)
    if (ll[j] > ll[best]) best = j;
  return levels[best];
}

inline std::vector<StateIndex> to_indices(const GridSpec& g, std::span<const JointState> states) {
  std::vector<StateIndex> out;
  out.reserve(states.size());
  for (const JointState& s : states) {
    if (!g.contains(s)) throw InputError("trajectory state outside the grid");
    out.push_back(g.state_index(s));
  }
  return out;
}

// Belief at every stage N = 0..len-1 from the last min(N, window) transitions,
// with the observer fixed at my_level. Candidates are 0..candidates-1
// (defaults to the observer's k_max).
inline std::vector<Belief> infer_fixed(const TransitionKernel& k, const Hierarchy& h, Agent me,
                                       int my_level, std::span<const JointState> trajectory,
                                       int window, int candidates = 0) {
  if (trajectory.empty()) throw InputError("cannot infer from an empty trajectory");
  if (window < 1) throw InputError("inference window must be at least 1");
  if (candidates <= 0) candidates = h.k_max(me);
  (void)h.policy(me, my_level);
  (void)h.policy(opponent(me), candidates - 1);
  const std::vector<StateIndex> states = to_indices(k.grid(), trajectory);
  std::vector<int> levels(static_cast<std::size_t>(candidates));
  for (int c = 0; c < candidates; ++c) levels[static_cast<std::size_t>(c)] = c;

  // Per-transition terms, so each window is a plain sum of them.
  const std::size_t n_trans = states.size() - 1;
  std::vector<std::vector<LogLikelihood>> terms(levels.size(), std::vector<LogLikelihood>(n_trans));
  for (std::size_t c = 0; c < levels.size(); ++c)
    for (std::size_t n = 0; n < n_trans; ++n)
      terms[c][n] = transition_log_likelihood(k, h.policy(me, my_level),
                                              h.policy(opponent(me), levels[c]), states[n],
                                              states[n + 1]);

  std::vector<Belief> out;
  out.reserve(states.size());
  for (std::size_t stage = 0; stage < states.size(); ++stage) {
    const std::size_t begin = stage > static_cast<std::size_t>(window) ? stage - window : 0;
    Belief b;
    b.candidate_levels = levels;
    b.log_likelihoods.assign(levels.size(), 0.0);
    for (std::size_t c = 0; c < levels.size(); ++c)
      for (std::size_t n = begin; n < stage; ++n) {
        b.log_likelihoods[c] += terms[c][n].value;
        b.floored = b.floored || terms[c][n].floored;
      }
    b.mle_level = argmax_level(levels, b.log_likelihoods);
    out.push_back(std::move(b));
  }
  return out;
}

struct ScheduleEntry {
  long stage = 0;
  int own_level = 0;
  int inferred_level = 0;
};

// Plays min{k_hat_{n-1} + 1, k_max} at stage n, re-estimating k_hat_n from a
// sliding window of transitions with the levels it actually played. Stage 0
// plays level 1 against an assumed level-0 opponent.
class DynamicLevelController {
 public:
  DynamicLevelController(const TransitionKernel& k, const Hierarchy& h, Agent me, int k_max,
                         int window)
      : kernel_(&k), hierarchy_(&h), me_(me), k_max_(k_max), window_(window) {
    if (k_max < 1) throw InputError("controller k_max must be at least 1");
    if (window < 1) throw InputError("inference window must be at least 1");
    (void)h.policy(me, k_max);
    (void)h.policy(opponent(me), k_max - 1);
    for (int c = 0; c < k_max; ++c) candidates_.push_back(c);
  }

  Agent agent() const { return me_; }

  // Records the interior state entered at the next decision stage and returns
  // the level to play there.
  int observe(StateIndex s) {
    const long stage = static_cast<long>(states_.size());
    states_.push_back(s);
    if (stage == 0) {
      schedule_.push_back({0, 1, 0});
      beliefs_.push_back(Belief{candidates_, std::vector<double>(candidates_.size(), 0.0), 0, false});
      return 1;
    }
    const int own = std::min(schedule_.back().inferred_level + 1, k_max_);
    std::vector<int> own_levels;
    own_levels.reserve(schedule_.size());
    for (const ScheduleEntry& e : schedule_) own_levels.push_back(e.own_level);
    const auto end = static_cast<std::size_t>(stage);
    const std::size_t begin = end > static_cast<std::size_t>(window_) ? end - window_ : 0;
    Belief b;
    b.candidate_levels = candidates_;
    for (int c : candidates_) {
      const LogLikelihood ll = window_log_likelihood(*kernel_, *hierarchy_, me_, own_levels, c,
                                                     states_, begin, end);
      b.log_likelihoods.push_back(ll.value);
      b.floored = b.floored || ll.floored;
    }
    b.mle_level = argmax_level(candidates_, b.log_likelihoods);
    schedule_.push_back({stage, own, b.mle_level});
    beliefs_.push_back(std::move(b));
    return own;
  }

  int current_level() const { return schedule_.empty() ? 1 : schedule_.back().own_level; }
  const std::vector<ScheduleEntry>& schedule() const { return schedule_; }
  const std::vector<Belief>& beliefs() const { return beliefs_; }

 private:
  const TransitionKernel* kernel_;
  const Hierarchy* hierarchy_;
  Agent me_;
  int k_max_;
  int window_;
  std::vector<int> candidates_;
  std::vector<StateIndex> states_;
  std::vector<ScheduleEntry> schedule_;
  std::vector<Belief> beliefs_;
};

struct DynamicGame {
  Trajectory trajectory;
  // One schedule per adaptive agent (pursuer first when both adapt).
  std::vector<std::vector<ScheduleEntry>> schedules;
  std::vector<std::vector<Belief>> beliefs;
};

// One adaptive agent against an opponent fixed at opponent_level.
inline DynamicGame play_dynamic(const TransitionKernel& k, const Hierarchy& h, Agent adaptive,
                                int k_max, int window, int opponent_level, const JointState& s0,
                                std::uint64_t seed, long max_steps = 0) {
  DynamicLevelController ctl(k, h, adaptive, k_max, window);
  const Policy& fixed = h.policy(opponent(adaptive), opponent_level);
  Rng rng(seed);
  int own_level = 1;
  DynamicGame g;
  g.trajectory = play_game(
      k, s0, rng, max_steps,
      [&](Agent a, long, std::size_t i, StateIndex, Rng& r) {
        const Policy& p = a == adaptive ? h.policy(adaptive, own_level) : fixed;
        return sample_index(p.row(i), r.uniform());
      },
      [&](long, StateIndex s) {
        if (k.is_interior(s)) own_level = ctl.observe(s);
      });
  g.schedules.push_back(ctl.schedule());
  g.beliefs.push_back(ctl.beliefs());
  return g;
}

// Both agents adapt simultaneously. Each controller still assumes a fixed
// opponent level, so this regime has no guarantees.
inline DynamicGame play_dynamic_both(const TransitionKernel& k, const Hierarchy& h,
                                     int k_max_pursuer, int k_max_evader, int window,
                                     const JointState& s0, std::uint64_t seed,
                                     long max_steps = 0) {
  DynamicLevelController cp(k, h, Agent::Pursuer, k_max_pursuer, window);
  DynamicLevelController ce(k, h, Agent::Evader, k_max_evader, window);
  Rng rng(seed);
  int lp = 1, le = 1;
  DynamicGame g;
  g.trajectory = play_game(
      k, s0, rng, max_steps,
      [&](Agent a, long, std::size_t i, StateIndex, Rng& r) {
        const Policy& p = a == Agent::Pursuer ? h.policy(Agent::Pursuer, lp)
                                              : h.policy(Agent::Evader, le);
        return sample_index(p.row(i), r.uniform());
      },
      [&](long, StateIndex s) {
        if (!k.is_interior(s)) return;
        lp = cp.observe(s);
        le = ce.observe(s);
      });
  g.schedules = {cp.schedule(), ce.schedule()};
  g.beliefs = {cp.beliefs(), ce.beliefs()};
  return g;
}

}  // namespace peg
