#pragma once

// Markov chain approximation of the pursuit-evasion dynamics: a locally
// consistent nearest-neighbour chain on the joint grid, with per-state holding
// times h^2 / Q_h(s).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/parallel.hpp"

namespace peg {

struct JointAction {
  std::uint32_t pursuer = 0;
  std::uint32_t evader = 0;
  friend bool operator==(const JointAction&, const JointAction&) = default;
};

using Drift = std::array<double, 4>;

// Successor slots of the stencil: stay, then +e1, -e1, +e2, -e2, +e3, -e3,
// +e4, -e4 where (e1, e2) move the pursuer in x, y and (e3, e4) the evader.
inline constexpr std::size_t kStencilSize = 9;
using StencilProbs = std::array<double, kStencilSize>;

constexpr std::size_t stencil_slot(std::size_t coordinate, bool positive) {
  return 1 + 2 * coordinate + (positive ? 0 : 1);
}

inline JointState stencil_successor(const JointState& s, std::size_t slot) {
  if (slot == 0) return s;
  const std::size_t j = (slot - 1) / 2;
  const int step = ((slot - 1) % 2 == 0) ? 1 : -1;
  JointState n = s;
  switch (j) {
    case 0: n.pursuer.x += step; break;
    case 1: n.pursuer.y += step; break;
    case 2: n.evader.x += step; break;
    default: n.evader.y += step; break;
  }
  return n;
}

inline void check_action(const Agents& agents, const JointAction& a) {
  if (a.pursuer >= agents.pursuer.action_count() || a.evader >= agents.evader.action_count())
    throw InputError("joint action index out of range");
}

// b(s, theta): each agent's heading velocity plus the mean wind at its own cell.
inline Drift drift(const GridSpec& grid, const WindField& wind, const Agents& agents,
                   const JointState& s, const JointAction& a) {
  if (!grid.contains(s)) throw InputError("drift: joint state outside the grid");
  check_action(agents, a);
  const auto& dp = agents.pursuer.direction(a.pursuer);
  const auto& de = agents.evader.direction(a.evader);
  const auto wp = wind.at(grid, s.pursuer);
  const auto we = wind.at(grid, s.evader);
  const double vp = agents.pursuer.speed();
  const double ve = agents.evader.speed();
  return {vp * dp[0] + wp[0], vp * dp[1] + wp[1], ve * de[0] + we[0], ve * de[1] + we[1]};
}

// Q_h(s) = h * max_theta sum_j |b_j(s, theta)| + 4 sigma^2.
inline double q_factor(const GridSpec& grid, const WindField& wind, const Agents& agents,
                       const JointState& s) {
  double max_abs = 0.0;
  for (std::uint32_t ap = 0; ap < agents.pursuer.action_count(); ++ap) {
    for (std::uint32_t ae = 0; ae < agents.evader.action_count(); ++ae) {
      const Drift b = drift(grid, wind, agents, s, {ap, ae});
      max_abs = std::max(max_abs, std::abs(b[0]) + std::abs(b[1]) + std::abs(b[2]) +
                                      std::abs(b[3]));
    }
  }
  const double q = grid.cell_size() * max_abs + 4.0 * wind.sigma * wind.sigma;
  if (!(q > 0.0))
    throw DegenerateModelError(
        "Q_h(s) = 0: zero speeds, zero wind and zero noise leave the chain frozen");
  return q;
}

inline double holding_time(const GridSpec& grid, const WindField& wind, const Agents& agents,
                           const JointState& s) {
  const double h = grid.cell_size();
  return h * h / q_factor(grid, wind, agents, s);
}

// Stencil probabilities given the drift and Q_h(s):
// P(s +- h e_j) = (sigma^2 / 2 + h b_j^+-) / Q, stay = 1 - sum of the rest.
inline StencilProbs stencil_probs(const Drift& b, double sigma, double h, double q) {
  StencilProbs p{};
  const double base = 0.5 * sigma * sigma;
  double moved = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double plus = (base + h * std::max(b[j], 0.0)) / q;
    const double minus = (base + h * std::max(-b[j], 0.0)) / q;
    p[stencil_slot(j, true)] = plus;
    p[stencil_slot(j, false)] = minus;
    moved += plus + minus;
  }
  double stay = 1.0 - moved;
  // The maximizing joint action leaves exactly zero mass up to roundoff.
  if (stay < 0.0 && stay > -1e-12) stay = 0.0;
  p[0] = stay;
  return p;
}

inline std::vector<std::pair<JointState, double>> transition_probs(
    const GridSpec& grid, const WindField& wind, const Agents& agents, const JointState& s,
    const JointAction& a) {
  if (is_terminal(classify_state(grid, s)))
    throw InputError("transition_probs: state is terminal (absorbing)");
  const double q = q_factor(grid, wind, agents, s);
  const StencilProbs p = stencil_probs(drift(grid, wind, agents, s, a), wind.sigma,
                                       grid.cell_size(), q);
  std::vector<std::pair<JointState, double>> out;
  out.reserve(kStencilSize);
  for (std::size_t k = 0; k < kStencilSize; ++k)
    out.emplace_back(stencil_successor(s, k), p[k]);
  return out;
}

// The discrete game M_h: terminal classes of every joint state, and for each
// interior state and joint action the nine stencil probabilities. Terminal
// states are absorbing and store nothing.
class TransitionKernel {
 public:
  TransitionKernel() = default;

  const GridSpec& grid() const { return grid_; }
  std::size_t pursuer_actions() const { return n_pursuer_; }
  std::size_t evader_actions() const { return n_evader_; }
  std::size_t action_count(Agent a) const {
    return a == Agent::Pursuer ? n_pursuer_ : n_evader_;
  }
  std::size_t joint_actions() const { return n_pursuer_ * n_evader_; }
  std::size_t joint_index(const JointAction& a) const {
    return std::size_t(a.pursuer) * n_evader_ + a.evader;
  }

  std::size_t state_count() const { return classes_.size(); }
  std::size_t interior_count() const { return interior_states_.size(); }

  TerminalClass terminal_class(StateIndex s) const { return classes_[s]; }
  const std::vector<TerminalClass>& terminal_classes() const { return classes_; }
  bool is_interior(StateIndex s) const { return interior_index_[s] >= 0; }

  // Position of `s` among interior states, or -1 for terminal states.
  std::int64_t interior_index(StateIndex s) const { return interior_index_[s]; }
  StateIndex interior_state(std::size_t i) const { return interior_states_[i]; }
  const std::vector<StateIndex>& interior_states() const { return interior_states_; }

  double holding_time(std::size_t interior) const { return holding_[interior]; }

  std::span<const double, kStencilSize> row(std::size_t interior, std::size_t joint) const {
    return std::span<const double, kStencilSize>(
        probs_.data() + (interior * joint_actions() + joint) * kStencilSize, kStencilSize);
  }

  // State index of stencil slot `slot` from interior state `s`. Interior
  // states never touch the perimeter, so every successor is in range.
  StateIndex successor(StateIndex s, std::size_t slot) const {
    return static_cast<StateIndex>(static_cast<std::int64_t>(s) + offsets_[slot]);
  }

  // Slot index whose successor is `to`, or -1 if `to` is not a neighbour.
  int slot_of(StateIndex from, StateIndex to) const {
    const std::int64_t d = static_cast<std::int64_t>(to) - static_cast<std::int64_t>(from);
    for (std::size_t k = 0; k < kStencilSize; ++k)
      if (offsets_[k] == d) return static_cast<int>(k);
    return -1;
  }

  std::vector<std::pair<JointState, double>> distribution(const JointState& s,
                                                          const JointAction& a) const {
    if (!grid_.contains(s)) throw InputError("distribution: state outside the grid");
    const StateIndex si = grid_.state_index(s);
    if (!is_interior(si)) throw InputError("distribution: state is terminal (absorbing)");
    if (a.pursuer >= n_pursuer_ || a.evader >= n_evader_)
      throw InputError("distribution: joint action out of range");
    const auto r = row(static_cast<std::size_t>(interior_index_[si]), joint_index(a));
    std::vector<std::pair<JointState, double>> out;
    for (std::size_t k = 0; k < kStencilSize; ++k)
      out.emplace_back(grid_.state_at(successor(si, k)), r[k]);
    return out;
  }

  const std::vector<double>& raw_probabilities() const { return probs_; }
  const std::vector<double>& raw_holding_times() const { return holding_; }

  // Assembles a kernel from stored parts (cache loading). Validates shapes.
  static TransitionKernel from_parts(GridSpec grid, std::size_t n_pursuer,
                                     std::size_t n_evader, std::vector<double> holding,
                                     std::vector<double> probs) {
    TransitionKernel k;
    k.init_layout(std::move(grid), n_pursuer, n_evader);
    if (holding.size() != k.interior_count() ||
        probs.size() != k.interior_count() * k.joint_actions() * kStencilSize)
      throw InputError("kernel parts do not match the grid layout");
    k.holding_ = std::move(holding);
    k.probs_ = std::move(probs);
    return k;
  }

  friend bool operator==(const TransitionKernel& a, const TransitionKernel& b) {
    return a.grid_ == b.grid_ && a.n_pursuer_ == b.n_pursuer_ && a.n_evader_ == b.n_evader_ &&
           a.holding_ == b.holding_ && a.probs_ == b.probs_;
  }

 private:
  friend TransitionKernel build_kernel(const GridSpec&, const WindField&, const Agents&);

  void init_layout(GridSpec grid, std::size_t n_pursuer, std::size_t n_evader) {
    grid_ = std::move(grid);
    n_pursuer_ = n_pursuer;
    n_evader_ = n_evader;
    const std::size_t n = grid_.state_count();
    classes_.resize(n);
    interior_index_.assign(n, -1);
    interior_states_.clear();
    for (std::size_t s = 0; s < n; ++s) {
      classes_[s] = classify_state(grid_, grid_.state_at(static_cast<StateIndex>(s)));
      if (!is_terminal(classes_[s])) {
        interior_index_[s] = static_cast<std::int64_t>(interior_states_.size());
        interior_states_.push_back(static_cast<StateIndex>(s));
      }
    }
    const auto cells = static_cast<std::int64_t>(grid_.cell_count());
    const auto w = static_cast<std::int64_t>(grid_.width());
    offsets_ = {0, cells, -cells, w * cells, -w * cells, 1, -1, w, -w};
  }

  GridSpec grid_;
  std::size_t n_pursuer_ = 0;
  std::size_t n_evader_ = 0;
  std::vector<TerminalClass> classes_;
  std::vector<std::int64_t> interior_index_;
  std::vector<StateIndex> interior_states_;
  std::vector<double> holding_;
  std::vector<double> probs_;
  std::array<std::int64_t, kStencilSize> offsets_{};
};

inline TransitionKernel build_kernel(const GridSpec& grid, const WindField& wind,
                                     const Agents& agents) {
  wind.validate(grid);
  TransitionKernel k;
  k.init_layout(grid, agents.pursuer.action_count(), agents.evader.action_count());
  const std::size_t n_int = k.interior_count();
  const std::size_t n_joint = k.joint_actions();
  k.holding_.assign(n_int, 0.0);
  k.probs_.assign(n_int * n_joint * kStencilSize, 0.0);
  const double h = grid.cell_size();
  parallel_for(n_int, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      const JointState s = grid.state_at(k.interior_states_[i]);
      const double q = q_factor(grid, wind, agents, s);
      k.holding_[i] = h * h / q;
      for (std::uint32_t ap = 0; ap < agents.pursuer.action_count(); ++ap) {
        for (std::uint32_t ae = 0; ae < agents.evader.action_count(); ++ae) {
          const JointAction a{ap, ae};
          const StencilProbs p = stencil_probs(drift(grid, wind, agents, s, a), wind.sigma, h, q);
          std::copy(p.begin(), p.end(),
                    k.probs_.begin() + static_cast<std::ptrdiff_t>(
                                           (i * n_joint + k.joint_index(a)) * kStencilSize));
        }
      }
    }
  }, 256);
  return k;
}

}  // namespace peg
