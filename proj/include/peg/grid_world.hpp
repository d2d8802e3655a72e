#pragma once

// The discretized arena: cells, obstacles, evasion region, wind, agent
// kinematics, and the classification of joint states into terminal classes.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "peg/errors.hpp"
#include "peg/rng.hpp"

namespace peg {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct JointState {
  Cell pursuer;
  Cell evader;
  friend bool operator==(const JointState&, const JointState&) = default;
};

using StateIndex = std::uint32_t;

enum class Agent : std::uint8_t { Pursuer = 0, Evader = 1 };

constexpr Agent opponent(Agent a) {
  return a == Agent::Pursuer ? Agent::Evader : Agent::Pursuer;
}

constexpr std::string_view to_string(Agent a) {
  return a == Agent::Pursuer ? "pursuer" : "evader";
}

enum class TerminalClass : std::uint8_t {
  Interior = 0,
  CrashPursuerOnly,
  CrashEvaderOnly,
  CrashBoth,
  Capture,
  Evasion,
};

inline constexpr std::array<TerminalClass, 6> kAllTerminalClasses = {
    TerminalClass::Interior,        TerminalClass::CrashPursuerOnly,
    TerminalClass::CrashEvaderOnly, TerminalClass::CrashBoth,
    TerminalClass::Capture,         TerminalClass::Evasion};

constexpr std::string_view to_string(TerminalClass c) {
  switch (c) {
    case TerminalClass::Interior: return "interior";
    case TerminalClass::CrashPursuerOnly: return "crash_pursuer";
    case TerminalClass::CrashEvaderOnly: return "crash_evader";
    case TerminalClass::CrashBoth: return "crash_both";
    case TerminalClass::Capture: return "capture";
    case TerminalClass::Evasion: return "evasion";
  }
  return "unknown";
}

constexpr bool is_terminal(TerminalClass c) { return c != TerminalClass::Interior; }

// Pursuer's terminal reward G_h. The evader receives the negation.
constexpr double terminal_reward(TerminalClass c) {
  switch (c) {
    case TerminalClass::Capture: return 1.0;
    case TerminalClass::Evasion: return -1.0;
    case TerminalClass::CrashPursuerOnly: return -1.0;
    case TerminalClass::CrashEvaderOnly: return 1.0;
    case TerminalClass::CrashBoth: return 0.0;
    case TerminalClass::Interior: return 0.0;
  }
  return 0.0;
}

constexpr double evader_reward(TerminalClass c) { return -terminal_reward(c); }

constexpr double reward_for(Agent a, TerminalClass c) {
  return a == Agent::Pursuer ? terminal_reward(c) : evader_reward(c);
}

// Rectangular arena of width x height square cells of side cell_size. The
// outermost ring of cells is always a crash region.
class GridSpec {
 public:
  GridSpec() = default;

  // Validates the layout. capture_radius defaults to half a cell, which
  // makes capture equivalent to co-location.
  static GridSpec make(int width, int height, double cell_size,
                       const std::vector<Cell>& obstacle_cells,
                       const std::vector<Cell>& evasion_cells,
                       std::optional<double> capture_radius = std::nullopt) {
    if (width < 2 || height < 2)
      throw InputError("grid must be at least 2x2, got " + std::to_string(width) +
                       "x" + std::to_string(height));
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw InputError("cell size must be positive");
    GridSpec g;
    g.width_ = width;
    g.height_ = height;
    g.cell_size_ = cell_size;
    g.capture_radius_ = capture_radius.value_or(0.5 * cell_size);
    if (!(g.capture_radius_ >= 0.0) || !std::isfinite(g.capture_radius_))
      throw InputError("capture radius must be finite and non-negative");
    g.flags_.assign(static_cast<std::size_t>(width) * height, 0);
    for (const Cell& c : obstacle_cells) {
      if (!g.contains(c))
        throw InputError("obstacle cell (" + std::to_string(c.x) + "," +
                         std::to_string(c.y) + ") outside the grid");
      g.flags_[g.cell_index(c)] |= kObstacle;
    }
    for (const Cell& c : evasion_cells) {
      if (!g.contains(c))
        throw InputError("evasion cell (" + std::to_string(c.x) + "," +
                         std::to_string(c.y) + ") outside the grid");
      if (g.flags_[g.cell_index(c)] & kObstacle)
        throw InputError("cell (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                         ") is both obstacle and evasion");
      g.flags_[g.cell_index(c)] |= kEvasion;
    }
    return g;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double cell_size() const { return cell_size_; }
  double capture_radius() const { return capture_radius_; }
  std::size_t cell_count() const { return flags_.size(); }
  std::size_t state_count() const { return cell_count() * cell_count(); }

  bool contains(Cell c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }
  bool contains(const JointState& s) const {
    return contains(s.pursuer) && contains(s.evader);
  }

  std::size_t cell_index(Cell c) const {
    return static_cast<std::size_t>(c.y) * width_ + c.x;
  }
  Cell cell_at(std::size_t index) const {
    return {static_cast<int>(index % width_), static_cast<int>(index / width_)};
  }

  // Joint state index: pursuer_cell * cell_count + evader_cell.
  StateIndex state_index(const JointState& s) const {
    return static_cast<StateIndex>(cell_index(s.pursuer) * cell_count() +
                                   cell_index(s.evader));
  }
  JointState state_at(StateIndex index) const {
    return {cell_at(index / cell_count()), cell_at(index % cell_count())};
  }

  bool is_obstacle(Cell c) const { return flags_[cell_index(c)] & kObstacle; }
  bool is_evasion(Cell c) const { return flags_[cell_index(c)] & kEvasion; }
  bool is_perimeter(Cell c) const {
    return c.x == 0 || c.y == 0 || c.x == width_ - 1 || c.y == height_ - 1;
  }
  bool is_crash_cell(Cell c) const { return is_perimeter(c) || is_obstacle(c); }

  std::vector<Cell> obstacle_cells() const { return cells_with(kObstacle); }
  std::vector<Cell> evasion_cells() const { return cells_with(kEvasion); }

  // Cell centroid ((x + 1/2) h, (y + 1/2) h).
  std::array<double, 2> centroid(Cell c) const {
    return {(c.x + 0.5) * cell_size_, (c.y + 0.5) * cell_size_};
  }

  double centroid_distance(Cell a, Cell b) const {
    return cell_size_ * std::hypot(double(a.x - b.x), double(a.y - b.y));
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  static constexpr std::uint8_t kObstacle = 1;
  static constexpr std::uint8_t kEvasion = 2;

  std::vector<Cell> cells_with(std::uint8_t flag) const {
    std::vector<Cell> out;
    for (std::size_t i = 0; i < flags_.size(); ++i)
      if (flags_[i] & flag) out.push_back(cell_at(i));
    return out;
  }

  int width_ = 0;
  int height_ = 0;
  double cell_size_ = 1.0;
  double capture_radius_ = 0.5;
  std::vector<std::uint8_t> flags_;
};

// Crash > Capture > Evasion > Interior.
inline TerminalClass classify_state(const GridSpec& grid, const JointState& s) {
  if (!grid.contains(s))
    throw InputError("joint state outside the grid: pursuer (" +
                     std::to_string(s.pursuer.x) + "," + std::to_string(s.pursuer.y) +
                     "), evader (" + std::to_string(s.evader.x) + "," +
                     std::to_string(s.evader.y) + ")");
  const bool p_crash = grid.is_crash_cell(s.pursuer);
  const bool e_crash = grid.is_crash_cell(s.evader);
  if (p_crash && e_crash) return TerminalClass::CrashBoth;
  if (p_crash) return TerminalClass::CrashPursuerOnly;
  if (e_crash) return TerminalClass::CrashEvaderOnly;
  if (grid.centroid_distance(s.pursuer, s.evader) <= grid.capture_radius())
    return TerminalClass::Capture;
  if (grid.is_evasion(s.evader)) return TerminalClass::Evasion;
  return TerminalClass::Interior;
}

// Per-cell mean wind plus a spatially constant noise intensity sigma.
struct WindField {
  std::vector<double> mean_x;
  std::vector<double> mean_y;
  double sigma = 0.0;

  static WindField calm(const GridSpec& grid, double sigma) {
    return {std::vector<double>(grid.cell_count(), 0.0),
            std::vector<double>(grid.cell_count(), 0.0), sigma};
  }

  void validate(const GridSpec& grid) const {
    if (mean_x.size() != grid.cell_count() || mean_y.size() != grid.cell_count())
      throw InputError("wind field has " + std::to_string(mean_x.size()) + "/" +
                       std::to_string(mean_y.size()) + " entries, grid has " +
                       std::to_string(grid.cell_count()) + " cells");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
      throw InputError("wind sigma must be finite and non-negative");
  }

  std::array<double, 2> at(const GridSpec& grid, Cell c) const {
    const auto i = grid.cell_index(c);
    return {mean_x[i], mean_y[i]};
  }

  friend bool operator==(const WindField&, const WindField&) = default;
};

// Independent per cell: direction uniform on [0, 2pi), magnitude uniform on
// [0, max_speed]. Cell i uses counter draws 2i and 2i+1 under `seed`.
inline WindField generate_wind(const GridSpec& grid, std::uint64_t seed,
                               double max_speed, double sigma = 0.0) {
  if (!(max_speed >= 0.0) || !std::isfinite(max_speed))
    throw InputError("wind max_speed must be finite and non-negative");
  WindField w = WindField::calm(grid, sigma);
  for (std::size_t i = 0; i < grid.cell_count(); ++i) {
    const double angle = 2.0 * std::numbers::pi * to_unit(counter_draw(seed, 2 * i));
    const double speed = max_speed * to_unit(counter_draw(seed, 2 * i + 1));
    w.mean_x[i] = speed * std::cos(angle);
    w.mean_y[i] = speed * std::sin(angle);
  }
  return w;
}

// A constant speed and an ordered set of headings.
class AgentSpec {
 public:
  AgentSpec() : AgentSpec(1.0, compass_headings()) {}

  AgentSpec(double speed, std::vector<double> headings)
      : speed_(speed), headings_(std::move(headings)) {
    if (!(speed_ >= 0.0) || !std::isfinite(speed_))
      throw InputError("agent speed must be finite and non-negative");
    if (headings_.empty()) throw InputError("agent action set is empty");
    for (std::size_t i = 0; i < headings_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j)
        if (same_angle(headings_[i], headings_[j]))
          throw InputError("duplicate heading in action set");
      directions_.push_back({snap(std::cos(headings_[i])), snap(std::sin(headings_[i]))});
    }
  }

  static std::vector<double> compass_headings() {
    return {0.0, std::numbers::pi / 2, std::numbers::pi, 3 * std::numbers::pi / 2};
  }

  double speed() const { return speed_; }
  const std::vector<double>& headings() const { return headings_; }
  std::size_t action_count() const { return headings_.size(); }

  // Unit heading vector; cos/sin values within 1e-12 of 0 or +-1 are snapped
  // so that compass headings are exactly axis-aligned.
  const std::array<double, 2>& direction(std::size_t action) const {
    return directions_.at(action);
  }

  friend bool operator==(const AgentSpec& a, const AgentSpec& b) {
    return a.speed_ == b.speed_ && a.headings_ == b.headings_;
  }

 private:
  static double snap(double v) {
    for (double t : {-1.0, 0.0, 1.0})
      if (std::abs(v - t) < 1e-12) return t;
    return v;
  }
  static bool same_angle(double a, double b) {
    const double two_pi = 2 * std::numbers::pi;
    double d = std::fmod(std::abs(a - b), two_pi);
    return std::min(d, two_pi - d) < 1e-12;
  }

  double speed_ = 1.0;
  std::vector<double> headings_;
  std::vector<std::array<double, 2>> directions_;
};

struct Agents {
  AgentSpec pursuer;
  AgentSpec evader;

  const AgentSpec& operator[](Agent a) const {
    return a == Agent::Pursuer ? pursuer : evader;
  }
};

}  // namespace peg
