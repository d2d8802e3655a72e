#pragma once

// Level-k hierarchy: level-0 policies, policy evaluation, pure best responses
// by undiscounted value iteration, the alternating level ladder and the
// fixed-point (Nash) check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/mcam.hpp"
#include "peg/parallel.hpp"

namespace peg {

enum class PolicyKind : std::uint8_t { Mixed = 0, Pure = 1 };
enum class Level0Variant : std::uint8_t { Uniform = 0, SafeUniform = 1 };

constexpr std::string_view to_string(Level0Variant v) {
  return v == Level0Variant::Uniform ? "uniform" : "safe_uniform";
}

// Action distribution of one agent at every interior state, stored row-major
// as interior_count x action_count.
class Policy {
 public:
  Policy() = default;
  Policy(Agent agent, PolicyKind kind, std::size_t actions, std::vector<double> table)
      : agent_(agent), kind_(kind), actions_(actions), table_(std::move(table)) {
    if (actions_ == 0 || table_.size() % actions_ != 0)
      throw InputError("policy table shape does not match the action count");
  }

  static Policy pure(Agent agent, std::size_t actions, std::span<const std::uint32_t> choice) {
    std::vector<double> t(choice.size() * actions, 0.0);
    for (std::size_t i = 0; i < choice.size(); ++i) {
      if (choice[i] >= actions) throw InputError("pure policy action out of range");
      t[i * actions + choice[i]] = 1.0;
    }
    return Policy(agent, PolicyKind::Pure, actions, std::move(t));
  }

  Agent agent() const { return agent_; }
  PolicyKind kind() const { return kind_; }
  std::size_t action_count() const { return actions_; }
  std::size_t state_count() const { return actions_ == 0 ? 0 : table_.size() / actions_; }

  std::span<const double> row(std::size_t interior) const {
    return {table_.data() + interior * actions_, actions_};
  }
  double prob(std::size_t interior, std::size_t action) const {
    return table_[interior * actions_ + action];
  }

  // For pure policies, the chosen action (first action with mass 1).
  std::uint32_t action(std::size_t interior) const {
    const auto r = row(interior);
    return static_cast<std::uint32_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }

  const std::vector<double>& table() const { return table_; }

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  Agent agent_ = Agent::Pursuer;
  PolicyKind kind_ = PolicyKind::Mixed;
  std::size_t actions_ = 0;
  std::vector<double> table_;
};

// Values over all joint states, in `agent`'s own reward convention: terminal
// states hold reward_for(agent, class).
struct ValueFunction {
  Agent agent = Agent::Pursuer;
  std::vector<double> values;

  double operator[](StateIndex s) const { return values[s]; }
  friend bool operator==(const ValueFunction&, const ValueFunction&) = default;
};

struct SolverOptions {
  double tol = 1e-9;
  // 0 means 10 * |S_h|.
  long max_iterations = 0;
  // Every `jump_interval` sweeps, replace the iterate by the exact value of
  // its greedy policy (one sparse linear solve). The fixed point and the
  // stopping rule are unchanged; near-recurrent chains just get there in far
  // fewer sweeps. 0 disables the jumps (plain value iteration).
  long jump_interval = 64;

  long iteration_cap(const TransitionKernel& k) const {
    return max_iterations > 0 ? max_iterations : static_cast<long>(10 * k.state_count());
  }
};

namespace detail {

inline void check_covers(const TransitionKernel& k, const Policy& p, Agent expected) {
  if (p.agent() != expected)
    throw InputError("policy belongs to the " + std::string(to_string(p.agent())) +
                     ", expected the " + std::string(to_string(expected)));
  if (p.state_count() != k.interior_count() || p.action_count() != k.action_count(expected))
    throw InputError("policy does not cover the kernel's interior states");
}

inline std::size_t joint_of(const TransitionKernel& k, Agent me, std::size_t mine,
                            std::size_t theirs) {
  return me == Agent::Pursuer ? mine * k.evader_actions() + theirs
                              : theirs * k.evader_actions() + mine;
}

// P(. | s, own action, opponent policy): interior x own actions x stencil.
inline std::vector<double> marginalize_opponent(const TransitionKernel& k, const Policy& opp,
                                                Agent me) {
  const std::size_t n_me = k.action_count(me);
  const std::size_t n_opp = k.action_count(opponent(me));
  std::vector<double> m(k.interior_count() * n_me * kStencilSize, 0.0);
  parallel_for(k.interior_count(), [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t a = 0; a < n_me; ++a) {
        double* out = m.data() + (i * n_me + a) * kStencilSize;
        for (std::size_t b = 0; b < n_opp; ++b) {
          const double w = opp.prob(i, b);
          if (w == 0.0) continue;
          const auto r = k.row(i, joint_of(k, me, a, b));
          for (std::size_t s = 0; s < kStencilSize; ++s) out[s] += w * r[s];
        }
      }
    }
  });
  return m;
}

// P(. | s, pursuer policy, evader policy): interior x stencil.
inline std::vector<double> marginalize_pair(const TransitionKernel& k, const Policy& p,
                                            const Policy& e) {
  std::vector<double> m(k.interior_count() * kStencilSize, 0.0);
  parallel_for(k.interior_count(), [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* out = m.data() + i * kStencilSize;
      for (std::size_t a = 0; a < k.pursuer_actions(); ++a) {
        const double wp = p.prob(i, a);
        if (wp == 0.0) continue;
        for (std::size_t b = 0; b < k.evader_actions(); ++b) {
          const double w = wp * e.prob(i, b);
          if (w == 0.0) continue;
          const auto r = k.row(i, a * k.evader_actions() + b);
          for (std::size_t s = 0; s < kStencilSize; ++s) out[s] += w * r[s];
        }
      }
    }
  });
  return m;
}

template <class RewardFn>
std::vector<double> terminal_values(const TransitionKernel& k, RewardFn&& reward) {
  std::vector<double> v(k.state_count(), 0.0);
  for (std::size_t s = 0; s < v.size(); ++s)
    if (!k.is_interior(static_cast<StateIndex>(s)))
      v[s] = reward(k.terminal_class(static_cast<StateIndex>(s)));
  return v;
}

// Solves V = P V on interior states for the chain whose stencil row at
// interior i is row(i), with terminal entries of v as boundary values.
// Leaves v untouched and returns false if the solve fails or leaves the range
// [lo, hi] that every value iterate stays in.
template <class RowFn>
bool exact_chain_values(const TransitionKernel& k, RowFn&& row, std::vector<double>& v,
                        double lo, double hi) {
  const std::size_t n = k.interior_count();
  if (n == 0) return true;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n * kStencilSize);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const StateIndex s = k.interior_state(i);
    const double* p = row(i);
    const auto ii = static_cast<Eigen::Index>(i);
    trip.emplace_back(ii, ii, 1.0 - p[0]);
    for (std::size_t j = 1; j < kStencilSize; ++j) {
      if (p[j] == 0.0) continue;
      const StateIndex t = k.successor(s, j);
      if (k.is_interior(t))
        trip.emplace_back(ii, static_cast<Eigen::Index>(k.interior_index(t)), -p[j]);
      else
        b[ii] += p[j] * v[t];
    }
  }
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::BiCGSTAB<Eigen::SparseMatrix<double>> solver;
  solver.setTolerance(1e-14);
  solver.setMaxIterations(5000);
  solver.compute(a);
  if (solver.info() != Eigen::Success) return false;
  const Eigen::VectorXd x = solver.solve(b);
  if (solver.info() != Eigen::Success && solver.error() > 1e-10) return false;
  const double slack = 1e-9;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || x[i] < lo - slack || x[i] > hi + slack) return false;
  for (std::size_t i = 0; i < n; ++i)
    v[k.interior_state(i)] = std::clamp(x[static_cast<Eigen::Index>(i)], lo, hi);
  return true;
}

// Range holding every iterate started from zero on interior states.
inline std::pair<double, double> value_bounds(const TransitionKernel& k,
                                              const std::vector<double>& v) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t s = 0; s < v.size(); ++s)
    if (!k.is_interior(static_cast<StateIndex>(s))) {
      lo = std::min(lo, v[s]);
      hi = std::max(hi, v[s]);
    }
  return {lo, hi};
}

// Jacobi sweeps: next[s] = backup(i, current) for interior s, terminal entries
// pinned. Stops when the sup-norm change drops below tol. `jump(v)` may
// overwrite the iterate every opt.jump_interval sweeps; it returns false once
// it gives up.
template <class Backup, class Jump>
std::pair<long, double> jacobi_iterate(const TransitionKernel& k, std::vector<double>& v,
                                       const SolverOptions& opt, const char* what,
                                       Backup&& backup, Jump&& jump) {
  std::vector<double> next = v;
  const long cap = opt.iteration_cap(k);
  std::vector<double> chunk_delta(worker_count(), 0.0);
  double delta = std::numeric_limits<double>::infinity();
  bool jumping = opt.jump_interval > 0;
  for (long it = 1; it <= cap; ++it) {
    std::fill(chunk_delta.begin(), chunk_delta.end(), 0.0);
    const std::vector<double>& cur = v;
    parallel_for(k.interior_count(), [&](std::size_t lo, std::size_t hi, std::size_t c) {
      double d = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const StateIndex s = k.interior_state(i);
        const double nv = backup(i, s, cur);
        d = std::max(d, std::abs(nv - cur[s]));
        next[s] = nv;
      }
      chunk_delta[c] = d;
    });
    delta = *std::max_element(chunk_delta.begin(), chunk_delta.end());
    v.swap(next);
    if (delta < opt.tol) return {it, delta};
    if (jumping && it % opt.jump_interval == 0) jumping = jump(v);
  }
  throw ConvergenceError(std::string(what) + " did not converge", delta, cap);
}

inline std::array<double, kStencilSize> gather(const TransitionKernel& k, StateIndex s,
                                               const std::vector<double>& v) {
  std::array<double, kStencilSize> out;
  for (std::size_t j = 0; j < kStencilSize; ++j) out[j] = v[k.successor(s, j)];
  return out;
}

inline double dot9(const double* p, const std::array<double, kStencilSize>& v) {
  double acc = 0.0;
  for (std::size_t j = 0; j < kStencilSize; ++j) acc += p[j] * v[j];
  return acc;
}

}  // namespace detail

inline Policy uniform_policy(const TransitionKernel& k, Agent agent) {
  const std::size_t n = k.action_count(agent);
  return Policy(agent, PolicyKind::Mixed, n,
                std::vector<double>(k.interior_count() * n, 1.0 / double(n)));
}

// For each heading, the neighbour cell this agent is most likely to step into
// (ties to the lowest stencil slot). The heading is safe when that cell is not
// a crash cell.
inline std::vector<bool> safe_actions(const TransitionKernel& k, Agent agent,
                                      std::size_t interior) {
  const std::size_t n = k.action_count(agent);
  const StateIndex s = k.interior_state(interior);
  const JointState js = k.grid().state_at(s);
  const std::size_t first_slot = agent == Agent::Pursuer ? 1 : 5;
  std::vector<bool> safe(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto r = k.row(interior, detail::joint_of(k, agent, a, 0));
    std::size_t best = first_slot;
    for (std::size_t slot = first_slot + 1; slot < first_slot + 4; ++slot)
      if (r[slot] > r[best]) best = slot;
    const JointState next = stencil_successor(js, best);
    const Cell c = agent == Agent::Pursuer ? next.pursuer : next.evader;
    safe[a] = !k.grid().is_crash_cell(c);
  }
  return safe;
}

inline Policy level0_policy(const TransitionKernel& k, Agent agent, Level0Variant variant) {
  if (variant == Level0Variant::Uniform) return uniform_policy(k, agent);
  const std::size_t n = k.action_count(agent);
  std::vector<double> t(k.interior_count() * n, 0.0);
  for (std::size_t i = 0; i < k.interior_count(); ++i) {
    const auto safe = safe_actions(k, agent, i);
    const auto count = static_cast<std::size_t>(std::count(safe.begin(), safe.end(), true));
    for (std::size_t a = 0; a < n; ++a)
      t[i * n + a] = count == 0 ? 1.0 / double(n) : (safe[a] ? 1.0 / double(count) : 0.0);
  }
  return Policy(agent, PolicyKind::Mixed, n, std::move(t));
}

// Expected terminal reward under a fixed policy pair, with an arbitrary
// reward on terminal classes. Returns values over all joint states.
template <class RewardFn>
std::vector<double> evaluate_pair(const TransitionKernel& k, const Policy& pursuer,
                                  const Policy& evader, RewardFn&& reward,
                                  const SolverOptions& opt = {}) {
  detail::check_covers(k, pursuer, Agent::Pursuer);
  detail::check_covers(k, evader, Agent::Evader);
  const std::vector<double> m = detail::marginalize_pair(k, pursuer, evader);
  std::vector<double> v = detail::terminal_values(k, reward);
  const auto [lo, hi] = detail::value_bounds(k, v);
  auto row = [&](std::size_t i) { return m.data() + i * kStencilSize; };
  auto solve = [&](std::vector<double>& x) { return detail::exact_chain_values(k, row, x, lo, hi); };
  if (opt.jump_interval > 0) solve(v);
  detail::jacobi_iterate(
      k, v, opt, "policy evaluation",
      [&](std::size_t i, StateIndex s, const std::vector<double>& cur) {
        return detail::dot9(row(i), detail::gather(k, s, cur));
      },
      solve);
  return v;
}

// J(my_policy, opp_policy) in my_policy.agent()'s reward convention.
inline ValueFunction policy_evaluation(const TransitionKernel& k, const Policy& my_policy,
                                       const Policy& opp_policy, const SolverOptions& opt = {}) {
  const Agent me = my_policy.agent();
  if (opp_policy.agent() != opponent(me))
    throw InputError("policy_evaluation needs one policy per agent");
  const Policy& p = me == Agent::Pursuer ? my_policy : opp_policy;
  const Policy& e = me == Agent::Pursuer ? opp_policy : my_policy;
  return {me, evaluate_pair(k, p, e, [me](TerminalClass c) { return reward_for(me, c); }, opt)};
}

struct BestResponse {
  Policy policy;
  ValueFunction value;
  long iterations = 0;
  double residual = 0.0;
};

// Action values closer than this to the maximum count as ties and resolve to
// the lowest action index.
inline constexpr double kTieTolerance = 1e-12;

// Pure best response of `agent` to a fixed opponent policy by undiscounted
// value iteration from V0 = 0 on interior states.
inline BestResponse best_response(const TransitionKernel& k, const Policy& opp_policy,
                                  Agent agent, const SolverOptions& opt = {}) {
  detail::check_covers(k, opp_policy, opponent(agent));
  const std::size_t n = k.action_count(agent);
  const std::vector<double> m = detail::marginalize_opponent(k, opp_policy, agent);
  std::vector<double> v =
      detail::terminal_values(k, [agent](TerminalClass c) { return reward_for(agent, c); });

  auto best_value = [&](std::size_t i, StateIndex s, const std::vector<double>& cur) {
    const auto nb = detail::gather(k, s, cur);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a)
      best = std::max(best, detail::dot9(m.data() + (i * n + a) * kStencilSize, nb));
    return best;
  };
  // Jump to the exact value of the current greedy policy.
  const auto [lo, hi] = detail::value_bounds(k, v);
  std::vector<std::uint32_t> greedy(k.interior_count());
  auto jump = [&](std::vector<double>& x) {
    parallel_for(k.interior_count(), [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t i = b; i < e; ++i) {
        const auto nb = detail::gather(k, k.interior_state(i), x);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a) {
          const double q = detail::dot9(m.data() + (i * n + a) * kStencilSize, nb);
          if (q > best) {
            best = q;
            greedy[i] = static_cast<std::uint32_t>(a);
          }
        }
      }
    });
    return detail::exact_chain_values(
        k, [&](std::size_t i) { return m.data() + (i * n + greedy[i]) * kStencilSize; }, x, lo,
        hi);
  };
  const auto [iterations, residual] =
      detail::jacobi_iterate(k, v, opt, "best-response value iteration", best_value, jump);

  std::vector<std::uint32_t> choice(k.interior_count());
  std::vector<double> qs(n);
  for (std::size_t i = 0; i < k.interior_count(); ++i) {
    const auto nb = detail::gather(k, k.interior_state(i), v);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      qs[a] = detail::dot9(m.data() + (i * n + a) * kStencilSize, nb);
      best = std::max(best, qs[a]);
    }
    std::uint32_t pick = 0;
    while (qs[pick] < best - kTieTolerance) ++pick;
    choice[i] = pick;
  }
  return {Policy::pure(agent, n, choice), ValueFunction{agent, std::move(v)}, iterations,
          residual};
}

struct HierarchyLevel {
  Policy policy;
  // Empty at level 0.
  std::optional<ValueFunction> value;
  long iterations = 0;
  double residual = 0.0;
};

struct FixedPoint {
  Agent agent = Agent::Pursuer;
  // mu^{agent,(level+2)} == mu^{agent,(level)}; the pair
  // (mu^{agent,(level)}, mu^{-agent,(level+1)}) is a Nash equilibrium.
  int level = 0;
};

// Policies of both agents for levels 0..max(k_max). Level k of one agent is
// the best response to level k-1 of the other.
class Hierarchy {
 public:
  Hierarchy() = default;
  Hierarchy(std::array<int, 2> k_max, Level0Variant variant,
            std::array<std::vector<HierarchyLevel>, 2> ladders,
            std::optional<FixedPoint> fixed_point)
      : k_max_(k_max),
        variant_(variant),
        ladders_(std::move(ladders)),
        fixed_point_(fixed_point) {}

  int k_max(Agent a) const { return k_max_[idx(a)]; }
  // Highest level stored for `a` (at least k_max(a)).
  int top_level(Agent a) const { return static_cast<int>(ladders_[idx(a)].size()) - 1; }
  Level0Variant level0_variant() const { return variant_; }

  const HierarchyLevel& level(Agent a, int k) const {
    if (k < 0 || k > top_level(a))
      throw InputError("level " + std::to_string(k) + " not available for the " +
                       std::string(to_string(a)) + " (top level " +
                       std::to_string(top_level(a)) + ")");
    return ladders_[idx(a)][static_cast<std::size_t>(k)];
  }
  const Policy& policy(Agent a, int k) const { return level(a, k).policy; }

  const std::optional<FixedPoint>& fixed_point() const { return fixed_point_; }

  friend bool operator==(const Hierarchy& a, const Hierarchy& b) {
    if (a.k_max_ != b.k_max_ || a.variant_ != b.variant_) return false;
    for (int i = 0; i < 2; ++i) {
      if (a.ladders_[i].size() != b.ladders_[i].size()) return false;
      for (std::size_t k = 0; k < a.ladders_[i].size(); ++k)
        if (a.ladders_[i][k].policy != b.ladders_[i][k].policy ||
            a.ladders_[i][k].value != b.ladders_[i][k].value)
          return false;
    }
    return true;
  }

 private:
  static std::size_t idx(Agent a) { return static_cast<std::size_t>(a); }

  std::array<int, 2> k_max_{0, 0};
  Level0Variant variant_ = Level0Variant::Uniform;
  std::array<std::vector<HierarchyLevel>, 2> ladders_;
  std::optional<FixedPoint> fixed_point_;
};

// Smallest K (pursuer checked first) with mu^{i,(K+2)} == mu^{i,(K)} exactly.
inline std::optional<FixedPoint> find_fixed_point(
    const std::array<std::vector<HierarchyLevel>, 2>& ladders) {
  const std::size_t top = std::min(ladders[0].size(), ladders[1].size());
  for (std::size_t kk = 0; kk + 2 < top; ++kk)
    for (Agent a : {Agent::Pursuer, Agent::Evader}) {
      const auto& ladder = ladders[static_cast<std::size_t>(a)];
      if (ladder[kk + 2].policy == ladder[kk].policy) return FixedPoint{a, static_cast<int>(kk)};
    }
  return std::nullopt;
}

using HierarchyProgress = std::function<void(Agent, int level, long iterations)>;

inline Hierarchy build_hierarchy(const TransitionKernel& k, int k_max_pursuer, int k_max_evader,
                                 Level0Variant variant, const SolverOptions& opt = {},
                                 const HierarchyProgress& progress = {}) {
  if (k_max_pursuer < 1 || k_max_evader < 1)
    throw InputError("maximum rationality levels must be at least 1");
  const int top = std::max(k_max_pursuer, k_max_evader);
  std::array<std::vector<HierarchyLevel>, 2> ladders;
  for (Agent a : {Agent::Pursuer, Agent::Evader})
    ladders[static_cast<std::size_t>(a)].push_back({level0_policy(k, a, variant), {}, 0, 0.0});

  for (int level = 1; level <= top; ++level) {
    for (Agent a : {Agent::Pursuer, Agent::Evader}) {
      const auto& opp_ladder = ladders[static_cast<std::size_t>(opponent(a))];
      auto& mine = ladders[static_cast<std::size_t>(a)];
      const Policy& parent = opp_ladder[static_cast<std::size_t>(level - 1)].policy;
      // Best responses are deterministic: an opponent policy seen before at
      // level j already produced our level j+1.
      std::optional<HierarchyLevel> reuse;
      for (int j = level - 2; j >= 0 && !reuse; --j)
        if (opp_ladder[static_cast<std::size_t>(j)].policy == parent)
          reuse = mine[static_cast<std::size_t>(j + 1)];
      if (reuse) {
        mine.push_back(*reuse);
      } else {
        BestResponse br = best_response(k, parent, a, opt);
        mine.push_back({std::move(br.policy), std::move(br.value), br.iterations, br.residual});
      }
      if (progress) progress(a, level, mine.back().iterations);
    }
  }
  auto fp = find_fixed_point(ladders);
  return Hierarchy({k_max_pursuer, k_max_evader}, variant, std::move(ladders), fp);
}

struct NashReport {
  bool is_nash = false;
  double pursuer_gain = 0.0;
  double evader_gain = 0.0;
  double max_gain() const { return std::max(pursuer_gain, evader_gain); }
};

// Largest improvement either agent can get by deviating unilaterally, over
// all interior states.
inline NashReport nash_check(const TransitionKernel& k, const Policy& pursuer,
                             const Policy& evader, double tol, const SolverOptions& opt = {}) {
  const ValueFunction j = policy_evaluation(k, pursuer, evader, opt);
  const BestResponse bp = best_response(k, evader, Agent::Pursuer, opt);
  const BestResponse be = best_response(k, pursuer, Agent::Evader, opt);
  NashReport r;
  for (StateIndex s : k.interior_states()) {
    r.pursuer_gain = std::max(r.pursuer_gain, bp.value[s] - j[s]);
    r.evader_gain = std::max(r.evader_gain, be.value[s] + j[s]);
  }
  r.is_nash = r.pursuer_gain <= tol && r.evader_gain <= tol;
  return r;
}

}  // namespace peg
