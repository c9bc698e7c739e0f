#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace demoq::env {

using Observation = std::vector<double>;

struct EnvSpec {
  std::string id;
  std::size_t obs_dim = 0;
  std::size_t n_actions = 0;
  int step_cap = 0;
  std::string reward_range;
};

// Full dynamic state. Chain uses `col` as its position and keeps row = 0.
struct EnvState {
  int row = 0;
  int col = 0;
  bool key = false;
  bool door = false;
  int steps = 0;
  std::uint64_t seed = 0;

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  EnvState state;
  Observation obs;
  double reward_raw = 0.0;
  bool terminal = false;   // goal or hazard
  bool truncated = false;  // step cap reached without terminating
  bool done() const { return terminal || truncated; }
};

// Deterministic environment. All operations are const transitions over an
// explicit EnvState, so one instance may be shared freely.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }

  std::pair<EnvState, Observation> reset(std::uint64_t seed) const;

  // Throws std::out_of_range for an action outside [0, n_actions).
  StepResult step(const EnvState& state, std::size_t action) const;

  virtual Observation observe(const EnvState& state) const = 0;

  // Action of the hand-authored demonstrator in `state`.
  virtual std::size_t scripted_expert(const EnvState& state) const = 0;

 protected:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}

  struct Move {
    EnvState next;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual EnvState initial_state(std::uint64_t seed) const = 0;
  virtual Move move(const EnvState& state, std::size_t action) const = 0;

 private:
  EnvSpec spec_;
};

// Ids: "keydoor", "chain10", "chain10-detour-expert", "cliff".
// Throws ConfigError for anything else.
std::unique_ptr<Env> make_env(std::string_view id);
std::vector<std::string> env_ids();

namespace keydoor {

// Actions: 0 up, 1 down, 2 left, 3 right.
//
// Observation (D = 22): [0,10) one-hot row, [10,20) one-hot column,
// [20] key held, [21] door opened.
//
// Layout ('#' wall, 'K' key, 'D' door, 'G' goal). The door is a wall until
// entered while holding the key; entering the goal pays +100 and ends the
// episode. Every other step pays 0. The start cell is one of kStarts, picked
// by the reset seed.
inline constexpr std::string_view kLayout[10] = {
    "K...#G....",  //
    "###.#####.",  //
    "....#.....",  //
    "....#.....",  //
    "....D.....",  //
    "....#.....",  //
    "....#.....",  //
    "....#.....",  //
    "....#.....",  //
    "....#.....",  //
};
inline constexpr std::pair<int, int> kStarts[3] = {{9, 0}, {8, 2}, {6, 0}};
inline constexpr int kStepCap = 200;
inline constexpr double kGoalReward = 100.0;

}  // namespace keydoor

namespace chain {

// Actions: 0 left, 1 right. Positions 0..9, start at 0, one-hot observation.
// Right from 8 reaches 9: +10, terminal. Left from 0 falls off: -1, terminal.
// The detour expert walks right to 8, turns back and walks off the left end
// (return -1).
inline constexpr int kLength = 10;
inline constexpr int kStepCap = 50;
inline constexpr int kTurnBack = 8;

}  // namespace chain

namespace cliff {

// 4 x 12 grid, actions as keydoor. Start (3,0), goal (3,11), cliff (3,1..10).
// Each move costs -1, stepping into the cliff costs -100 and ends the episode,
// entering the goal pays 0 and ends it. Observation (D = 16): one-hot row then
// one-hot column.
inline constexpr int kRows = 4;
inline constexpr int kCols = 12;
inline constexpr int kStepCap = 100;

}  // namespace cliff

}  // namespace demoq::env
