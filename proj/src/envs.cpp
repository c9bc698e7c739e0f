#include "demoq/envs.hpp"

#include <array>
#include <deque>
#include <stdexcept>

#include "demoq/error.hpp"

namespace demoq::env {

std::pair<EnvState, Observation> Env::reset(std::uint64_t seed) const {
  EnvState s = initial_state(seed);
  s.seed = seed;
  s.steps = 0;
  return {s, observe(s)};
}

StepResult Env::step(const EnvState& state, std::size_t action) const {
  if (action >= spec_.n_actions) {
    throw std::out_of_range("action " + std::to_string(action) + " outside [0, " +
                            std::to_string(spec_.n_actions) + ")");
  }
  if (state.steps >= spec_.step_cap) throw std::logic_error("step called on a finished episode");
  Move m = move(state, action);
  m.next.steps = state.steps + 1;
  m.next.seed = state.seed;
  StepResult r;
  r.state = m.next;
  r.obs = observe(m.next);
  r.reward_raw = m.reward;
  r.terminal = m.terminal;
  r.truncated = !m.terminal && m.next.steps >= spec_.step_cap;
  return r;
}

namespace {

constexpr std::array<std::pair<int, int>, 4> kDeltas = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

class KeyDoor final : public Env {
 public:
  KeyDoor() : Env({"keydoor", 22, 4, keydoor::kStepCap, "{0, +100}"}) {}

  Observation observe(const EnvState& s) const override {
    Observation o(22, 0.0);
    o[static_cast<std::size_t>(s.row)] = 1.0;
    o[10 + static_cast<std::size_t>(s.col)] = 1.0;
    o[20] = s.key ? 1.0 : 0.0;
    o[21] = s.door ? 1.0 : 0.0;
    return o;
  }

  std::size_t scripted_expert(const EnvState& s) const override {
    const char target = !s.key ? 'K' : !s.door ? 'D' : 'G';
    return first_step_towards(s, target);
  }

 protected:
  EnvState initial_state(std::uint64_t seed) const override {
    EnvState s;
    // splitmix-style scramble so consecutive seeds spread across the starts
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    const auto& start = keydoor::kStarts[z % 3];
    s.row = start.first;
    s.col = start.second;
    return s;
  }

  Move move(const EnvState& s, std::size_t action) const override {
    Move m{s};
    if (!enterable(s, s.row + kDeltas[action].first, s.col + kDeltas[action].second)) return m;
    m.next.row += kDeltas[action].first;
    m.next.col += kDeltas[action].second;
    switch (cell(m.next.row, m.next.col)) {
      case 'K':
        m.next.key = true;
        break;
      case 'D':
        m.next.door = true;
        break;
      case 'G':
        m.reward = keydoor::kGoalReward;
        m.terminal = true;
        break;
      default:
        break;
    }
    return m;
  }

 private:
  static char cell(int r, int c) { return keydoor::kLayout[r][static_cast<std::size_t>(c)]; }

  static bool enterable(const EnvState& s, int r, int c) {
    if (r < 0 || r >= 10 || c < 0 || c >= 10) return false;
    const char ch = cell(r, c);
    if (ch == '#') return false;
    if (ch == 'D') return s.key || s.door;
    return true;
  }

  // Breadth-first search over cells, expanding actions in index order, so the
  // route from any cell is fixed.
  std::size_t first_step_towards(const EnvState& s, char target) const {
    std::array<int, 100> first{};
    first.fill(-1);
    std::deque<std::pair<int, int>> frontier;
    const int origin = s.row * 10 + s.col;
    first[origin] = 4;
    frontier.emplace_back(s.row, s.col);
    while (!frontier.empty()) {
      const auto [r, c] = frontier.front();
      frontier.pop_front();
      for (std::size_t a = 0; a < 4; ++a) {
        const int nr = r + kDeltas[a].first;
        const int nc = c + kDeltas[a].second;
        if (!enterable(s, nr, nc) || first[nr * 10 + nc] != -1) continue;
        const int via = (r * 10 + c == origin) ? static_cast<int>(a) : first[r * 10 + c];
        first[nr * 10 + nc] = via;
        if (cell(nr, nc) == target) return static_cast<std::size_t>(via);
        frontier.emplace_back(nr, nc);
      }
    }
    return 0;
  }
};

class Chain final : public Env {
 public:
  explicit Chain(bool detour)
      : Env({detour ? "chain10-detour-expert" : "chain10", chain::kLength, 2, chain::kStepCap, "{-1, 0, +10}"}),
        detour_(detour) {}

  Observation observe(const EnvState& s) const override {
    Observation o(chain::kLength, 0.0);
    o[static_cast<std::size_t>(s.col)] = 1.0;
    return o;
  }

  std::size_t scripted_expert(const EnvState& s) const override {
    if (detour_ && s.steps >= chain::kTurnBack) return 0;
    return 1;
  }

 protected:
  EnvState initial_state(std::uint64_t) const override { return EnvState{}; }

  Move move(const EnvState& s, std::size_t action) const override {
    Move m{s};
    if (action == 0) {
      if (s.col == 0) {
        m.reward = -1.0;
        m.terminal = true;
      } else {
        --m.next.col;
      }
    } else {
      ++m.next.col;
      if (m.next.col == chain::kLength - 1) {
        m.reward = 10.0;
        m.terminal = true;
      }
    }
    return m;
  }

 private:
  bool detour_;
};

class Cliff final : public Env {
 public:
  Cliff() : Env({"cliff", cliff::kRows + cliff::kCols, 4, cliff::kStepCap, "{-100, -1, 0}"}) {}

  Observation observe(const EnvState& s) const override {
    Observation o(cliff::kRows + cliff::kCols, 0.0);
    o[static_cast<std::size_t>(s.row)] = 1.0;
    o[cliff::kRows + static_cast<std::size_t>(s.col)] = 1.0;
    return o;
  }

  // Up from the start, along the row next to the cliff, down into the goal.
  std::size_t scripted_expert(const EnvState& s) const override {
    if (s.col == cliff::kCols - 1) return 1;
    if (s.row == cliff::kRows - 1) return 0;
    if (s.row < cliff::kRows - 2) return 1;
    return 3;
  }

 protected:
  EnvState initial_state(std::uint64_t) const override {
    EnvState s;
    s.row = cliff::kRows - 1;
    return s;
  }

  Move move(const EnvState& s, std::size_t action) const override {
    Move m{s};
    const int nr = s.row + kDeltas[action].first;
    const int nc = s.col + kDeltas[action].second;
    if (nr >= 0 && nr < cliff::kRows && nc >= 0 && nc < cliff::kCols) {
      m.next.row = nr;
      m.next.col = nc;
    }
    const bool bottom = m.next.row == cliff::kRows - 1;
    if (bottom && m.next.col == cliff::kCols - 1) {
      m.terminal = true;
    } else if (bottom && m.next.col > 0) {
      m.reward = -100.0;
      m.terminal = true;
    } else {
      m.reward = -1.0;
    }
    return m;
  }
};

}  // namespace

std::unique_ptr<Env> make_env(std::string_view id) {
  if (id == "keydoor") return std::make_unique<KeyDoor>();
  if (id == "chain10") return std::make_unique<Chain>(false);
  if (id == "chain10-detour-expert") return std::make_unique<Chain>(true);
  if (id == "cliff") return std::make_unique<Cliff>();
  throw ConfigError("unknown env id: " + std::string(id));
}

std::vector<std::string> env_ids() { return {"keydoor", "chain10", "chain10-detour-expert", "cliff"}; }

}  // namespace demoq::env
