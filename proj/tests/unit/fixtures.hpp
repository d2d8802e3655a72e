#pragma once

#include <random>
#include <vector>

#include "peg/grid_world.hpp"
#include "peg/level_k.hpp"
#include "peg/mcam.hpp"

namespace peg::testing {

// 5x5 grid: a 3x3 playable interior ringed by crash cells, one evasion cell.
inline GridSpec arena3x3() { return GridSpec::make(5, 5, 1.0, {}, {{3, 3}}); }

// 5x3 grid: a 3x1 playable strip, evasion at its right end.
inline GridSpec strip3x1() { return GridSpec::make(5, 3, 1.0, {}, {{3, 1}}); }

struct SmallGame {
  GridSpec grid;
  WindField wind;
  Agents agents;
  TransitionKernel kernel;
};

inline SmallGame small_game(GridSpec g, std::uint64_t wind_seed = 11, double max_speed = 0.3,
                            double sigma = 0.4) {
  SmallGame s{std::move(g), {}, {}, {}};
  s.wind = generate_wind(s.grid, wind_seed, max_speed, sigma);
  s.kernel = build_kernel(s.grid, s.wind, s.agents);
  return s;
}

inline Policy random_mixed_policy(const TransitionKernel& k, Agent a, std::mt19937_64& rng) {
  const std::size_t n = k.action_count(a);
  std::vector<double> t(k.interior_count() * n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < k.interior_count(); ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (t[i * n + j] = u(rng) + 1e-3);
    for (std::size_t j = 0; j < n; ++j) t[i * n + j] /= z;
  }
  return Policy(a, PolicyKind::Mixed, n, std::move(t));
}

inline Policy random_pure_policy(const TransitionKernel& k, Agent a, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> pick(
      0, static_cast<std::uint32_t>(k.action_count(a) - 1));
  std::vector<std::uint32_t> c(k.interior_count());
  for (auto& x : c) x = pick(rng);
  return Policy::pure(a, k.action_count(a), c);
}

}  // namespace peg::testing
