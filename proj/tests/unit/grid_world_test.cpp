#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "peg/grid_world.hpp"

using namespace peg;

namespace {

GridSpec demo_grid(std::optional<double> rho = std::nullopt) {
  return GridSpec::make(8, 6, 1.0, {{3, 2}, {4, 2}}, {{6, 4}}, rho);
}

}  // namespace

TEST(GridSpec, RejectsBadLayouts) {
  EXPECT_THROW(GridSpec::make(1, 5, 1.0, {}, {}), InputError);
  EXPECT_THROW(GridSpec::make(5, 5, 0.0, {}, {}), InputError);
  EXPECT_THROW(GridSpec::make(5, 5, 1.0, {{5, 0}}, {}), InputError);
  EXPECT_THROW(GridSpec::make(5, 5, 1.0, {}, {{-1, 2}}), InputError);
  EXPECT_THROW(GridSpec::make(5, 5, 1.0, {{2, 2}}, {{2, 2}}), InputError);
  EXPECT_THROW(GridSpec::make(5, 5, 1.0, {}, {}, -0.1), InputError);
}

TEST(GridSpec, StateIndexRoundTrips) {
  const GridSpec g = demo_grid();
  EXPECT_EQ(g.state_count(), 48u * 48u);
  for (StateIndex s = 0; s < g.state_count(); s += 7) EXPECT_EQ(g.state_index(g.state_at(s)), s);
  EXPECT_EQ(g.state_index({{1, 0}, {0, 0}}), 48u);
  EXPECT_EQ(g.state_index({{0, 0}, {0, 1}}), 8u);
}

TEST(GridSpec, CentroidsScaleWithCellSize) {
  const GridSpec g = GridSpec::make(4, 4, 2.5, {}, {});
  EXPECT_DOUBLE_EQ(g.centroid({1, 2})[0], 3.75);
  EXPECT_DOUBLE_EQ(g.centroid({1, 2})[1], 6.25);
  EXPECT_DOUBLE_EQ(g.centroid_distance({0, 0}, {1, 1}), 2.5 * std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(g.capture_radius(), 1.25);
}

TEST(Classify, PursuerOnObstacleIsPursuerCrash) {
  EXPECT_EQ(classify_state(demo_grid(), {{3, 2}, {1, 1}}), TerminalClass::CrashPursuerOnly);
}

TEST(Classify, PerimeterIsCrash) {
  const GridSpec g = demo_grid();
  EXPECT_EQ(classify_state(g, {{2, 2}, {7, 3}}), TerminalClass::CrashEvaderOnly);
  EXPECT_EQ(classify_state(g, {{0, 0}, {2, 5}}), TerminalClass::CrashBoth);
}

TEST(Classify, CoLocationIsCapture) {
  EXPECT_EQ(classify_state(demo_grid(0.0), {{2, 3}, {2, 3}}), TerminalClass::Capture);
}

TEST(Classify, EvasionBeatsNothingButLosesToCapture) {
  // Adjacent at distance h with rho = 0.4h: no capture, evader on E.
  EXPECT_EQ(classify_state(demo_grid(0.4), {{5, 4}, {6, 4}}), TerminalClass::Evasion);
  // rho = 1.0h makes the same configuration a capture.
  EXPECT_EQ(classify_state(demo_grid(1.0), {{5, 4}, {6, 4}}), TerminalClass::Capture);
}

TEST(Classify, CrashTakesPrecedenceOverCapture) {
  // Both on the same obstacle cell: capture distance holds but crash wins.
  EXPECT_EQ(classify_state(demo_grid(), {{3, 2}, {3, 2}}), TerminalClass::CrashBoth);
  // Pursuer crashed next to the evader with a wide capture radius.
  EXPECT_EQ(classify_state(demo_grid(2.0), {{3, 2}, {2, 2}}), TerminalClass::CrashPursuerOnly);
}

TEST(Classify, OutOfBoundsThrows) {
  EXPECT_THROW(classify_state(demo_grid(), {{8, 0}, {1, 1}}), InputError);
}

TEST(Classify, SixClassesPartitionEveryState) {
  const GridSpec g = demo_grid(1.0);
  std::set<TerminalClass> seen;
  for (StateIndex s = 0; s < g.state_count(); ++s) {
    const JointState js = g.state_at(s);
    const TerminalClass c = classify_state(g, js);
    seen.insert(c);
    const bool p = g.is_crash_cell(js.pursuer), e = g.is_crash_cell(js.evader);
    if (p || e) {
      EXPECT_TRUE(c == TerminalClass::CrashBoth || c == TerminalClass::CrashPursuerOnly ||
                  c == TerminalClass::CrashEvaderOnly);
    } else if (g.centroid_distance(js.pursuer, js.evader) <= 1.0) {
      EXPECT_EQ(c, TerminalClass::Capture);
    }
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(Rewards, TableAndAntisymmetry) {
  EXPECT_EQ(terminal_reward(TerminalClass::Capture), 1.0);
  EXPECT_EQ(terminal_reward(TerminalClass::CrashBoth), 0.0);
  EXPECT_EQ(terminal_reward(TerminalClass::Evasion), -1.0);
  EXPECT_EQ(evader_reward(TerminalClass::Evasion), 1.0);
  EXPECT_EQ(terminal_reward(TerminalClass::CrashPursuerOnly), -1.0);
  EXPECT_EQ(terminal_reward(TerminalClass::CrashEvaderOnly), 1.0);
  EXPECT_EQ(terminal_reward(TerminalClass::Interior), 0.0);
  for (TerminalClass c : kAllTerminalClasses) {
    EXPECT_EQ(evader_reward(c), -terminal_reward(c));
    EXPECT_EQ(reward_for(Agent::Pursuer, c), terminal_reward(c));
    EXPECT_EQ(reward_for(Agent::Evader, c), evader_reward(c));
  }
}

TEST(Wind, ZeroMaxSpeedIsCalm) {
  const GridSpec g = demo_grid();
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const WindField w = generate_wind(g, seed, 0.0, 0.4);
    for (std::size_t i = 0; i < g.cell_count(); ++i) {
      EXPECT_EQ(w.mean_x[i], 0.0);
      EXPECT_EQ(w.mean_y[i], 0.0);
    }
    EXPECT_EQ(w.sigma, 0.4);
  }
}

TEST(Wind, DeterministicBoundedAndSeedSensitive) {
  const GridSpec g = demo_grid();
  const WindField a = generate_wind(g, 1, 0.7);
  EXPECT_EQ(a, generate_wind(g, 1, 0.7));
  EXPECT_NE(a, generate_wind(g, 2, 0.7));
  for (std::size_t i = 0; i < g.cell_count(); ++i)
    EXPECT_LE(std::hypot(a.mean_x[i], a.mean_y[i]), 0.7 + 1e-15);
  EXPECT_THROW(generate_wind(g, 1, -1.0), InputError);
}

TEST(Wind, SmallestGridStillSeedSensitive) {
  const GridSpec g = GridSpec::make(2, 2, 1.0, {}, {});
  EXPECT_NE(generate_wind(g, 1, 1.0), generate_wind(g, 2, 1.0));
}

TEST(Wind, ValidateChecksShape) {
  const GridSpec g = demo_grid();
  WindField w = WindField::calm(g, 0.1);
  EXPECT_NO_THROW(w.validate(g));
  w.mean_x.pop_back();
  EXPECT_THROW(w.validate(g), InputError);
  WindField neg = WindField::calm(g, -0.1);
  EXPECT_THROW(neg.validate(g), InputError);
}

TEST(AgentSpec, CompassDefaultsAreExactlyAxisAligned) {
  const AgentSpec a;
  ASSERT_EQ(a.action_count(), 4u);
  EXPECT_EQ(a.direction(0), (std::array<double, 2>{1.0, 0.0}));
  EXPECT_EQ(a.direction(1), (std::array<double, 2>{0.0, 1.0}));
  EXPECT_EQ(a.direction(2), (std::array<double, 2>{-1.0, 0.0}));
  EXPECT_EQ(a.direction(3), (std::array<double, 2>{0.0, -1.0}));
}

TEST(AgentSpec, RejectsDuplicatesAndEmptySets) {
  EXPECT_THROW(AgentSpec(1.0, {}), InputError);
  EXPECT_THROW(AgentSpec(1.0, {0.0, 2 * std::numbers::pi}), InputError);
  EXPECT_THROW(AgentSpec(-1.0, {0.0}), InputError);
  EXPECT_NO_THROW(AgentSpec(0.5, {0.0, std::numbers::pi / 4}));
}
