#pragma once

// Experiment configuration: a versioned JSON document. Every semantic error
// names the offending value by JSON pointer and by line in the source text.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/level_k.hpp"

namespace peg {

inline constexpr int kConfigVersion = 1;

namespace detail {

// Line of every value in a JSON text, keyed by JSON pointer. The text is
// assumed to be valid JSON (nlohmann has already accepted it).
class LineMap {
 public:
  explicit LineMap(std::string_view text) : text_(text) {
    skip_ws();
    if (pos_ < text_.size()) value("");
  }

  int line_of(const std::string& pointer) const {
    // Fall back to the closest recorded ancestor (missing keys).
    std::string p = pointer;
    while (true) {
      if (auto it = lines_.find(p); it != lines_.end()) return it->second;
      if (p.empty()) return 0;
      p.erase(p.rfind('/'));
    }
  }

 private:
  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string string() {
    std::string out;
    ++pos_;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') out += text_[pos_++];
      out += text_[pos_++];
    }
    ++pos_;
    return out;
  }

  void value(const std::string& pointer) {
    lines_.emplace(pointer, line_);
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const std::string key = string();
        skip_ws();
        ++pos_;  // ':'
        skip_ws();
        value(pointer + "/" + escape(key));
        skip_ws();
        if (text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      for (int i = 0; pos_ < text_.size() && text_[pos_] != ']'; ++i) {
        value(pointer + "/" + std::to_string(i));
        skip_ws();
        if (text_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '"') {
      string();
    } else {
      while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
             text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != '}')
        ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

}  // namespace detail

struct GridConfig {
  int width = 0;
  int height = 0;
  double cell_size = 1.0;
  std::optional<double> capture_radius;
  std::vector<Cell> obstacles;
  std::vector<Cell> evasion;
};

struct WindConfig {
  // Either generated from (seed, max_speed) or read from a CSV table.
  std::uint64_t seed = 0;
  double max_speed = 0.0;
  std::string file;
  double sigma = 0.0;
};

struct AgentConfig {
  double speed = 1.0;
  std::vector<double> headings_deg{0.0, 90.0, 180.0, 270.0};
  int k_max = 1;
};

struct SimulationConfig {
  JointState start;
  long games = 1500;
  std::uint64_t seed = 1;
  long max_steps = 0;
  int pursuer_level = 1;
  int evader_level = 1;
};

enum class InferenceMode : std::uint8_t { Fixed = 0, Dynamic = 1 };

struct InferenceConfig {
  InferenceMode mode = InferenceMode::Fixed;
  int window = 10;
  // Fixed mode: the observer plays observer_level against an opponent at
  // opponent_level. Dynamic mode: the observer adapts up to its k_max, or
  // both agents adapt when both_adapt is set.
  Agent observer = Agent::Evader;
  int observer_level = 1;
  int opponent_level = 0;
  bool both_adapt = false;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string name;
  GridConfig grid;
  WindConfig wind;
  AgentConfig pursuer;
  AgentConfig evader;
  Level0Variant level0 = Level0Variant::Uniform;
  SolverOptions solver;
  SimulationConfig simulation;
  InferenceConfig inference;
  // Directory the config was read from; relative paths resolve against it.
  std::filesystem::path base_dir;
  // Wind table contents when wind.file is used (part of the cache key).
  std::string wind_table;

  GridSpec make_grid() const {
    return GridSpec::make(grid.width, grid.height, grid.cell_size, grid.obstacles, grid.evasion,
                          grid.capture_radius);
  }
  Agents make_agents() const {
    auto spec = [](const AgentConfig& a) {
      std::vector<double> rad;
      for (double d : a.headings_deg) rad.push_back(d * std::numbers::pi / 180.0);
      return AgentSpec(a.speed, rad);
    };
    return {spec(pursuer), spec(evader)};
  }
  const AgentConfig& agent(Agent a) const { return a == Agent::Pursuer ? pursuer : evader; }
};

WindField parse_wind_table(const GridSpec& grid, std::string_view text, double sigma);

inline WindField make_wind(const ExperimentConfig& c, const GridSpec& grid) {
  if (c.wind.file.empty()) return generate_wind(grid, c.wind.seed, c.wind.max_speed, c.wind.sigma);
  return parse_wind_table(grid, c.wind_table, c.wind.sigma);
}

// CSV with header "x,y,w_x,w_y" and one row per cell, any order.
inline WindField parse_wind_table(const GridSpec& grid, std::string_view text, double sigma) {
  WindField w = WindField::calm(grid, sigma);
  std::vector<bool> seen(grid.cell_count(), false);
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "x,y,w_x,w_y") throw InputError("wind table: expected header x,y,w_x,w_y");
      continue;
    }
    std::istringstream row(line);
    std::string f[4];
    for (auto& s : f)
      if (!std::getline(row, s, ','))
        throw InputError("wind table line " + std::to_string(line_no) + ": expected 4 fields");
    Cell c;
    double wx = 0.0, wy = 0.0;
    try {
      c.x = std::stoi(f[0]);
      c.y = std::stoi(f[1]);
      wx = std::stod(f[2]);
      wy = std::stod(f[3]);
    } catch (const std::exception&) {
      throw InputError("wind table line " + std::to_string(line_no) + ": not a number");
    }
    if (!grid.contains(c))
      throw InputError("wind table line " + std::to_string(line_no) + ": cell outside the grid");
    const auto i = grid.cell_index(c);
    if (seen[i])
      throw InputError("wind table line " + std::to_string(line_no) + ": duplicate cell");
    seen[i] = true;
    w.mean_x[i] = wx;
    w.mean_y[i] = wy;
  }
  for (bool s : seen)
    if (!s) throw InputError("wind table does not cover every cell");
  return w;
}

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& root, const LineMap& lines) : root_(root), lines_(lines) {}

  [[noreturn]] void fail(const std::string& pointer, const std::string& what) const {
    const int line = lines_.line_of(pointer);
    throw ConfigError(pointer.empty() ? "/" : pointer,
                      (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + what);
  }

  const nlohmann::json& at(const std::string& pointer) const {
    return root_.at(nlohmann::json::json_pointer(pointer));
  }
  bool has(const std::string& pointer) const {
    return root_.contains(nlohmann::json::json_pointer(pointer));
  }

  void object(const std::string& p, std::initializer_list<std::string_view> allowed) const {
    const auto& j = at(p);
    if (!j.is_object()) fail(p, "expected an object");
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == key;
      if (!ok) fail(p + "/" + key, "unknown key \"" + key + "\"");
    }
  }

  void require(const std::string& p) const {
    if (!has(p)) fail(p, "missing required value");
  }

  long integer(const std::string& p, long lo, long hi) const {
    require(p);
    const auto& j = at(p);
    if (!j.is_number_integer()) fail(p, "expected an integer");
    const auto v = j.get<long>();
    if (v < lo || v > hi)
      fail(p, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                  std::to_string(hi) + "]");
    return v;
  }
  long integer_or(const std::string& p, long dflt, long lo, long hi) const {
    return has(p) ? integer(p, lo, hi) : dflt;
  }

  std::uint64_t seed(const std::string& p, std::uint64_t dflt) const {
    if (!has(p)) return dflt;
    const auto& j = at(p);
    if (!j.is_number_unsigned()) fail(p, "expected a non-negative integer seed");
    return j.get<std::uint64_t>();
  }

  double number(const std::string& p, double lo, double hi, bool open_lo = false) const {
    require(p);
    const auto& j = at(p);
    if (!j.is_number()) fail(p, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v) || v < lo || v > hi || (open_lo && v == lo)) {
      std::ostringstream os;
      os << "value " << v << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
      fail(p, os.str());
    }
    return v;
  }
  double number_or(const std::string& p, double dflt, double lo, double hi,
                   bool open_lo = false) const {
    return has(p) ? number(p, lo, hi, open_lo) : dflt;
  }

  std::string string(const std::string& p) const {
    require(p);
    if (!at(p).is_string()) fail(p, "expected a string");
    return at(p).get<std::string>();
  }

  template <class E>
  E choice(const std::string& p, E dflt, std::initializer_list<std::pair<std::string_view, E>> opts) const {
    if (!has(p)) return dflt;
    const std::string s = string(p);
    std::string names;
    for (const auto& [name, v] : opts) {
      if (name == s) return v;
      names += (names.empty() ? "" : ", ") + std::string(name);
    }
    fail(p, "unknown value \"" + s + "\" (expected one of: " + names + ")");
  }

  Cell cell(const std::string& p) const {
    const auto& j = at(p);
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
      fail(p, "expected a cell [x, y]");
    return {j[0].get<int>(), j[1].get<int>()};
  }

  // Items are single cells [x, y] or inclusive rectangles {"from": [x, y], "to": [x, y]}.
  std::vector<Cell> cells(const std::string& p, int width, int height) const {
    std::vector<Cell> out;
    if (!has(p)) return out;
    const auto& j = at(p);
    if (!j.is_array()) fail(p, "expected a list of cells or rectangles");
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string q = p + "/" + std::to_string(i);
      auto inside = [&](const std::string& at_p) {
        const Cell c = cell(at_p);
        if (c.x < 0 || c.y < 0 || c.x >= width || c.y >= height)
          fail(at_p, "cell (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                         ") outside the " + std::to_string(width) + "x" +
                         std::to_string(height) + " grid");
        return c;
      };
      if (j[i].is_array()) {
        out.push_back(inside(q));
        continue;
      }
      object(q, {"from", "to"});
      require(q + "/from");
      require(q + "/to");
      const Cell a = inside(q + "/from"), b = inside(q + "/to");
      if (a.x > b.x || a.y > b.y) fail(q, "rectangle corners out of order");
      for (int y = a.y; y <= b.y; ++y)
        for (int x = a.x; x <= b.x; ++x) out.push_back({x, y});
    }
    return out;
  }

 private:
  const nlohmann::json& root_;
  const LineMap& lines_;
};

inline AgentConfig read_agent(const ConfigReader& r, const std::string& p) {
  r.require(p);
  r.object(p, {"speed", "headings_deg", "k_max"});
  AgentConfig a;
  a.speed = r.number_or(p + "/speed", 1.0, 0.0, 1e6);
  if (r.has(p + "/headings_deg")) {
    const auto& j = r.at(p + "/headings_deg");
    if (!j.is_array() || j.empty()) r.fail(p + "/headings_deg", "expected a non-empty list");
    a.headings_deg.clear();
    for (std::size_t i = 0; i < j.size(); ++i)
      a.headings_deg.push_back(r.number(p + "/headings_deg/" + std::to_string(i), -360.0, 360.0));
  }
  a.k_max = static_cast<int>(r.integer(p + "/k_max", 1, 64));
  return a;
}

}  // namespace detail

// Parses and validates a config document. `base_dir` resolves the wind file.
inline ExperimentConfig parse_config(std::string_view text,
                                     const std::filesystem::path& base_dir = {}) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("syntax error: ") + e.what());
  }
  const detail::LineMap lines(text);
  const detail::ConfigReader r(root, lines);
  r.object("", {"version", "name", "grid", "wind", "agents", "solver", "simulation", "inference"});

  ExperimentConfig c;
  c.base_dir = base_dir;
  c.version = static_cast<int>(r.integer("/version", 1, 1000));
  if (c.version != kConfigVersion)
    r.fail("/version", "unsupported config version " + std::to_string(c.version));
  if (r.has("/name")) c.name = r.string("/name");

  r.require("/grid");
  r.object("/grid", {"width", "height", "cell_size", "capture_radius", "obstacles", "evasion"});
  c.grid.width = static_cast<int>(r.integer("/grid/width", 3, 4096));
  c.grid.height = static_cast<int>(r.integer("/grid/height", 3, 4096));
  c.grid.cell_size = r.number_or("/grid/cell_size", 1.0, 0.0, 1e6, true);
  if (r.has("/grid/capture_radius"))
    c.grid.capture_radius = r.number("/grid/capture_radius", 0.0, 1e9);
  c.grid.obstacles = r.cells("/grid/obstacles", c.grid.width, c.grid.height);
  c.grid.evasion = r.cells("/grid/evasion", c.grid.width, c.grid.height);

  r.require("/wind");
  r.object("/wind", {"seed", "max_speed", "file", "sigma"});
  c.wind.sigma = r.number("/wind/sigma", 0.0, 1e6);
  if (r.has("/wind/file")) {
    if (r.has("/wind/seed") || r.has("/wind/max_speed"))
      r.fail("/wind", "give either file or seed + max_speed, not both");
    c.wind.file = r.string("/wind/file");
    const auto path = base_dir / c.wind.file;
    std::ifstream in(path, std::ios::binary);
    if (!in) r.fail("/wind/file", "cannot read wind table " + path.string());
    c.wind_table.assign(std::istreambuf_iterator<char>(in), {});
  } else {
    r.require("/wind/seed");
    c.wind.seed = r.seed("/wind/seed", 0);
    c.wind.max_speed = r.number("/wind/max_speed", 0.0, 1e6);
  }

  r.require("/agents");
  r.object("/agents", {"pursuer", "evader", "level0"});
  c.pursuer = detail::read_agent(r, "/agents/pursuer");
  c.evader = detail::read_agent(r, "/agents/evader");
  c.level0 = r.choice<Level0Variant>("/agents/level0", Level0Variant::Uniform,
                                     {{"uniform", Level0Variant::Uniform},
                                      {"safe_uniform", Level0Variant::SafeUniform}});

  if (r.has("/solver")) {
    r.object("/solver", {"tol", "max_iterations", "jump_interval"});
    c.solver.tol = r.number_or("/solver/tol", 1e-9, 0.0, 1.0, true);
    c.solver.max_iterations = r.integer_or("/solver/max_iterations", 0, 0, 1L << 40);
    c.solver.jump_interval = r.integer_or("/solver/jump_interval", 64, 0, 1L << 30);
  }

  r.require("/simulation");
  r.object("/simulation", {"pursuer_start", "evader_start", "games", "seed", "max_steps",
                           "pursuer_level", "evader_level"});
  r.require("/simulation/pursuer_start");
  r.require("/simulation/evader_start");
  c.simulation.start = {r.cell("/simulation/pursuer_start"), r.cell("/simulation/evader_start")};
  for (const auto& [p, cell] : {std::pair{"/simulation/pursuer_start", c.simulation.start.pursuer},
                                std::pair{"/simulation/evader_start", c.simulation.start.evader}})
    if (cell.x < 0 || cell.y < 0 || cell.x >= c.grid.width || cell.y >= c.grid.height)
      r.fail(p, "start cell outside the grid");
  c.simulation.games = r.integer_or("/simulation/games", 1500, 1, 1L << 40);
  c.simulation.seed = r.seed("/simulation/seed", 1);
  c.simulation.max_steps = r.integer_or("/simulation/max_steps", 0, 0, 1L << 40);
  c.simulation.pursuer_level =
      static_cast<int>(r.integer_or("/simulation/pursuer_level", 1, 0, c.pursuer.k_max));
  c.simulation.evader_level =
      static_cast<int>(r.integer_or("/simulation/evader_level", 1, 0, c.evader.k_max));

  if (r.has("/inference")) {
    r.object("/inference", {"mode", "window", "observer", "observer_level", "opponent_level",
                            "both_adapt", "seed"});
    auto& inf = c.inference;
    inf.mode = r.choice<InferenceMode>("/inference/mode", InferenceMode::Fixed,
                                       {{"fixed", InferenceMode::Fixed},
                                        {"dynamic", InferenceMode::Dynamic}});
    inf.window = static_cast<int>(r.integer_or("/inference/window", 10, 1, 1L << 30));
    inf.observer = r.choice<Agent>("/inference/observer", Agent::Evader,
                                   {{"pursuer", Agent::Pursuer}, {"evader", Agent::Evader}});
    const int my_max = c.agent(inf.observer).k_max;
    const int opp_max = c.agent(opponent(inf.observer)).k_max;
    inf.observer_level =
        static_cast<int>(r.integer_or("/inference/observer_level", my_max, 0, my_max));
    inf.opponent_level = static_cast<int>(
        r.integer_or("/inference/opponent_level", 0, 0, std::max(my_max - 1, 0)));
    if (inf.opponent_level > opp_max)
      r.fail("/inference/opponent_level", "level exceeds the opponent's k_max");
    if (r.has("/inference/both_adapt")) {
      if (!r.at("/inference/both_adapt").is_boolean())
        r.fail("/inference/both_adapt", "expected true or false");
      inf.both_adapt = r.at("/inference/both_adapt").get<bool>();
    }
    inf.seed = r.seed("/inference/seed", 1);
  }

  // Layout errors (overlaps, bad start cells) surface through the grid itself.
  GridSpec grid;
  try {
    grid = c.make_grid();
  } catch (const InputError& e) {
    r.fail("/grid", e.what());
  }
  try {
    (void)c.make_agents();
  } catch (const InputError& e) {
    r.fail("/agents", e.what());
  }
  if (!c.wind.file.empty()) {
    try {
      (void)make_wind(c, grid);
    } catch (const InputError& e) {
      r.fail("/wind/file", e.what());
    }
  }
  if (is_terminal(classify_state(grid, c.simulation.start)))
    r.fail("/simulation", "start state is terminal (" +
                              std::string(to_string(classify_state(grid, c.simulation.start))) +
                              ")");
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text(std::istreambuf_iterator<char>(in), {});
  return parse_config(text, path.parent_path());
}

}  // namespace peg
