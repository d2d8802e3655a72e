#pragma once

// Binary kernel / hierarchy files, CSV and JSON exports, content hashing.
// Binary files are little-endian with a magic tag, a format version and a
// trailing SHA-256 of everything before it.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "peg/errors.hpp"
#include "peg/grid_world.hpp"
#include "peg/inference.hpp"
#include "peg/level_k.hpp"
#include "peg/mcam.hpp"
#include "peg/simulator.hpp"

namespace peg {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

inline std::array<unsigned char, 32> sha256(std::string_view bytes) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw IoError("SHA-256 failed");
  return out;
}

inline std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (unsigned char c : sha256(bytes)) {
    s += kHex[c >> 4];
    s += kHex[c & 15];
  }
  return s;
}

// Shortest decimal that round-trips.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Writes through a temporary file and renames, so readers never see a
// partially written file.
inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  const auto tmp = std::filesystem::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

namespace detail {

class BinaryWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  void put_vec(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    if (!v.empty()) buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }

  std::string finish() {
    const auto digest = sha256(buf_);
    buf_.append(reinterpret_cast<const char*>(digest.data()), digest.size());
    return std::move(buf_);
  }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string_view bytes, std::string what) : what_(std::move(what)) {
    if (bytes.size() < 32) fail("file too short");
    data_ = bytes.substr(0, bytes.size() - 32);
    const auto digest = sha256(data_);
    if (std::memcmp(digest.data(), bytes.data() + data_.size(), 32) != 0)
      fail("checksum mismatch (corrupt or truncated)");
  }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <class T>
  std::vector<T> get_vec() {
    const auto n = get<std::uint64_t>();
    if (n > (data_.size() - pos_) / sizeof(T)) fail("array length exceeds file size");
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  void expect_bytes(std::string_view s) {
    need(s.size());
    if (data_.substr(pos_, s.size()) != s) fail("bad magic");
    pos_ += s.size();
  }
  void done() const {
    if (pos_ != data_.size()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& why) const { throw IoError(what_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) fail("unexpected end of data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline constexpr std::uint32_t kFormatVersion = 1;

inline void put_cells(BinaryWriter& w, const std::vector<Cell>& cells) {
  std::vector<std::int32_t> flat;
  for (const Cell& c : cells) {
    flat.push_back(c.x);
    flat.push_back(c.y);
  }
  w.put_vec(flat);
}

inline std::vector<Cell> get_cells(BinaryReader& r) {
  const auto flat = r.get_vec<std::int32_t>();
  if (flat.size() % 2) r.fail("odd cell array");
  std::vector<Cell> out;
  for (std::size_t i = 0; i < flat.size(); i += 2) out.push_back({flat[i], flat[i + 1]});
  return out;
}

inline void put_grid(BinaryWriter& w, const GridSpec& g) {
  w.put<std::int32_t>(g.width());
  w.put<std::int32_t>(g.height());
  w.put<double>(g.cell_size());
  w.put<double>(g.capture_radius());
  put_cells(w, g.obstacle_cells());
  put_cells(w, g.evasion_cells());
}

inline GridSpec get_grid(BinaryReader& r) {
  const auto w = r.get<std::int32_t>();
  const auto h = r.get<std::int32_t>();
  const auto cs = r.get<double>();
  const auto rho = r.get<double>();
  auto obs = get_cells(r);
  auto ev = get_cells(r);
  try {
    return GridSpec::make(w, h, cs, obs, ev, rho);
  } catch (const InputError& e) {
    r.fail(std::string("invalid grid: ") + e.what());
  }
}

}  // namespace detail

inline std::string serialize_kernel(const TransitionKernel& k) {
  detail::BinaryWriter w;
  w.put_bytes("PEGKERNL");
  w.put<std::uint32_t>(detail::kFormatVersion);
  detail::put_grid(w, k.grid());
  w.put<std::uint64_t>(k.pursuer_actions());
  w.put<std::uint64_t>(k.evader_actions());
  w.put_vec(k.raw_holding_times());
  w.put_vec(k.raw_probabilities());
  return w.finish();
}

inline TransitionKernel deserialize_kernel(std::string_view bytes) {
  detail::BinaryReader r(bytes, "kernel file");
  r.expect_bytes("PEGKERNL");
  if (r.get<std::uint32_t>() != detail::kFormatVersion) r.fail("unsupported format version");
  GridSpec g = detail::get_grid(r);
  const auto np = r.get<std::uint64_t>();
  const auto ne = r.get<std::uint64_t>();
  auto holding = r.get_vec<double>();
  auto probs = r.get_vec<double>();
  r.done();
  try {
    return TransitionKernel::from_parts(std::move(g), np, ne, std::move(holding),
                                        std::move(probs));
  } catch (const InputError& e) {
    r.fail(e.what());
  }
}

inline std::string serialize_hierarchy(const Hierarchy& h) {
  detail::BinaryWriter w;
  w.put_bytes("PEGHIERA");
  w.put<std::uint32_t>(detail::kFormatVersion);
  w.put<std::int32_t>(h.k_max(Agent::Pursuer));
  w.put<std::int32_t>(h.k_max(Agent::Evader));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.level0_variant()));
  for (Agent a : {Agent::Pursuer, Agent::Evader}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(h.top_level(a) + 1));
    for (int k = 0; k <= h.top_level(a); ++k) {
      const HierarchyLevel& lv = h.level(a, k);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(lv.policy.kind()));
      w.put<std::uint64_t>(lv.policy.action_count());
      w.put_vec(lv.policy.table());
      w.put<std::uint8_t>(lv.value ? 1 : 0);
      if (lv.value) w.put_vec(lv.value->values);
      w.put<std::int64_t>(lv.iterations);
      w.put<double>(lv.residual);
    }
  }
  const auto& fp = h.fixed_point();
  w.put<std::uint8_t>(fp ? 1 : 0);
  w.put<std::uint8_t>(fp ? static_cast<std::uint8_t>(fp->agent) : 0);
  w.put<std::int32_t>(fp ? fp->level : 0);
  return w.finish();
}

inline Hierarchy deserialize_hierarchy(std::string_view bytes) {
  detail::BinaryReader r(bytes, "hierarchy file");
  r.expect_bytes("PEGHIERA");
  if (r.get<std::uint32_t>() != detail::kFormatVersion) r.fail("unsupported format version");
  const auto kp = r.get<std::int32_t>();
  const auto ke = r.get<std::int32_t>();
  const auto variant = r.get<std::uint8_t>();
  if (variant > 1) r.fail("unknown level-0 variant");
  std::array<std::vector<HierarchyLevel>, 2> ladders;
  for (Agent a : {Agent::Pursuer, Agent::Evader}) {
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n; ++k) {
      HierarchyLevel lv;
      const auto kind = r.get<std::uint8_t>();
      if (kind > 1) r.fail("unknown policy kind");
      const auto actions = r.get<std::uint64_t>();
      auto table = r.get_vec<double>();
      try {
        lv.policy = Policy(a, static_cast<PolicyKind>(kind), actions, std::move(table));
      } catch (const InputError& e) {
        r.fail(e.what());
      }
      if (r.get<std::uint8_t>()) lv.value = ValueFunction{a, r.get_vec<double>()};
      lv.iterations = r.get<std::int64_t>();
      lv.residual = r.get<double>();
      ladders[static_cast<std::size_t>(a)].push_back(std::move(lv));
    }
  }
  std::optional<FixedPoint> fp;
  const auto has_fp = r.get<std::uint8_t>();
  const auto fp_agent = r.get<std::uint8_t>();
  const auto fp_level = r.get<std::int32_t>();
  if (has_fp) fp = FixedPoint{fp_agent ? Agent::Evader : Agent::Pursuer, fp_level};
  r.done();
  if (static_cast<int>(ladders[0].size()) <= kp || static_cast<int>(ladders[1].size()) <= ke)
    r.fail("ladder shorter than k_max");
  return Hierarchy({kp, ke}, static_cast<Level0Variant>(variant), std::move(ladders), fp);
}

// Header: step,pursuer_x,pursuer_y,evader_x,evader_y,pursuer_action,
// evader_action,elapsed,class. The final row has empty action fields.
inline std::string trajectory_csv(const Trajectory& t) {
  std::ostringstream os;
  os << "step,pursuer_x,pursuer_y,evader_x,evader_y,pursuer_action,evader_action,elapsed,class\n";
  for (std::size_t n = 0; n < t.states.size(); ++n) {
    const JointState& s = t.states[n];
    os << n << ',' << s.pursuer.x << ',' << s.pursuer.y << ',' << s.evader.x << ','
       << s.evader.y << ',';
    if (n < t.actions.size()) os << t.actions[n].pursuer << ',' << t.actions[n].evader;
    else os << ',';
    const bool last = n + 1 == t.states.size();
    os << ',' << num(t.elapsed[n]) << ','
       << (last && !t.truncated ? to_string(t.outcome) : std::string_view("interior")) << '\n';
  }
  return os.str();
}

// Reads the state columns of a trajectory CSV (as written by trajectory_csv;
// only the first five columns are required).
inline std::vector<JointState> parse_trajectory_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<JointState> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("step,", 0) == 0) continue;
    std::istringstream row(line);
    std::string f;
    int v[5];
    for (int& x : v) {
      if (!std::getline(row, f, ','))
        throw InputError("trajectory line " + std::to_string(line_no) + ": expected 5 fields");
      const auto r = std::from_chars(f.data(), f.data() + f.size(), x);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size())
        throw InputError("trajectory line " + std::to_string(line_no) + ": not an integer");
    }
    out.push_back({{v[1], v[2]}, {v[3], v[4]}});
  }
  if (out.empty()) throw InputError("trajectory file has no states");
  return out;
}

// Long format: stage,level,probability,log_likelihood,mle.
inline std::string heatmap_csv(const std::vector<Belief>& beliefs) {
  std::ostringstream os;
  os << "stage,level,probability,log_likelihood,mle\n";
  for (std::size_t n = 0; n < beliefs.size(); ++n) {
    const auto p = beliefs[n].normalized();
    for (std::size_t c = 0; c < p.size(); ++c)
      os << n << ',' << beliefs[n].candidate_levels[c] << ',' << num(p[c]) << ','
         << num(beliefs[n].log_likelihoods[c]) << ','
         << (beliefs[n].candidate_levels[c] == beliefs[n].mle_level ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string schedule_csv(const std::vector<ScheduleEntry>& schedule) {
  std::ostringstream os;
  os << "stage,own_level,inferred_level\n";
  for (const auto& e : schedule)
    os << e.stage << ',' << e.own_level << ',' << e.inferred_level << '\n';
  return os.str();
}

inline std::string wind_csv(const GridSpec& g, const WindField& w) {
  std::ostringstream os;
  os << "x,y,w_x,w_y\n";
  for (std::size_t i = 0; i < g.cell_count(); ++i) {
    const Cell c = g.cell_at(i);
    os << c.x << ',' << c.y << ',' << num(w.mean_x[i]) << ',' << num(w.mean_y[i]) << '\n';
  }
  return os.str();
}

// One row per joint state; one column per stored level of each agent, in
// that agent's reward convention.
inline std::string values_csv(const TransitionKernel& k, const Hierarchy& h) {
  std::ostringstream os;
  os << "pursuer_x,pursuer_y,evader_x,evader_y,class";
  std::vector<const ValueFunction*> cols;
  for (Agent a : {Agent::Pursuer, Agent::Evader})
    for (int lv = 1; lv <= h.top_level(a); ++lv) {
      os << ',' << to_string(a) << "_L" << lv;
      cols.push_back(&*h.level(a, lv).value);
    }
  os << '\n';
  for (std::size_t s = 0; s < k.state_count(); ++s) {
    const JointState js = k.grid().state_at(static_cast<StateIndex>(s));
    os << js.pursuer.x << ',' << js.pursuer.y << ',' << js.evader.x << ',' << js.evader.y << ','
       << to_string(k.terminal_class(static_cast<StateIndex>(s)));
    for (const ValueFunction* v : cols) os << ',' << num(v->values[s]);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const MatchStats& m) {
  nlohmann::ordered_json j;
  j["games"] = m.games;
  j["completed"] = m.completed();
  j["truncated"] = m.truncated;
  j["pursuer_wins"] = m.pursuer_wins;
  j["wins_by_capture"] = m.wins_by_capture;
  j["wins_by_evader_crash"] = m.wins_by_evader_crash;
  j["evader_wins"] = m.evader_wins;
  j["wins_by_evasion"] = m.wins_by_evasion;
  j["wins_by_pursuer_crash"] = m.wins_by_pursuer_crash;
  j["draws"] = m.draws;
  j["pursuer_win_pct"] = m.percent(m.pursuer_wins);
  j["capture_pct"] = m.percent(m.wins_by_capture);
  j["evader_win_pct"] = m.percent(m.evader_wins);
  j["evasion_pct"] = m.percent(m.wins_by_evasion);
  j["mean_steps"] = m.mean_steps;
  j["mean_reward"] = m.mean_reward;
  j["reward_stderr"] = m.reward_stderr();
  return j;
}

// Aligned text in the layout of a win-percentage table: one column per
// opposing level, percentages with raw counts in parentheses.
inline std::string level_matrix_table(const LevelMatrix& m) {
  const bool evader_fixed = m.fixed_agent == Agent::Evader;
  const std::string varying = evader_fixed ? "pursuer" : "evader";
  std::ostringstream os;
  auto cell = [&](const MatchStats& s, long count) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(1) << s.percent(count) << " (" << count << ")";
    return c.str();
  };
  constexpr int kLabel = 22, kCol = 15;
  os << std::left << std::setw(kLabel)
     << (std::string(to_string(m.fixed_agent)) + " level " + std::to_string(m.fixed_level));
  for (const auto& c : m.columns)
    os << std::right << std::setw(kCol) << (varying + " " + std::to_string(c.level));
  os << '\n';
  auto row = [&](const std::string& label, auto count_of) {
    os << std::left << std::setw(kLabel) << label;
    for (const auto& c : m.columns) os << std::right << std::setw(kCol) << cell(c.stats, count_of(c.stats));
    os << '\n';
  };
  if (evader_fixed) {
    row("Pursuer wins", [](const MatchStats& s) { return s.pursuer_wins; });
    row("  due to capture", [](const MatchStats& s) { return s.wins_by_capture; });
    row("  due to evader crash", [](const MatchStats& s) { return s.wins_by_evader_crash; });
  } else {
    row("Evader wins", [](const MatchStats& s) { return s.evader_wins; });
    row("  due to evasion", [](const MatchStats& s) { return s.wins_by_evasion; });
    row("  due to pursuer crash", [](const MatchStats& s) { return s.wins_by_pursuer_crash; });
  }
  row("Draws (both crash)", [](const MatchStats& s) { return s.draws; });
  os << std::left << std::setw(kLabel) << "Truncated (excluded)";
  for (const auto& c : m.columns) os << std::right << std::setw(kCol) << c.stats.truncated;
  os << '\n';
  return os.str();
}

}  // namespace peg
