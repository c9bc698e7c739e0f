#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "demoq/envs.hpp"

namespace demoq::demo {

enum class Source : std::uint8_t { Demo, Agent };

// sign(r) * ln(1 + |r|)
double transform_reward(double raw);

struct Transition {
  env::Observation obs;
  std::size_t action = 0;
  double reward_raw = 0.0;
  double reward = 0.0;  // transform_reward(reward_raw)
  env::Observation next_obs;
  bool done = false;  // terminal (goal/hazard); false on the last step of a truncated episode
  Source source = Source::Demo;

  bool operator==(const Transition&) const = default;
};

Transition make_transition(env::Observation obs, std::size_t action, double reward_raw, env::Observation next_obs,
                           bool done, Source source);

struct Episode {
  std::string env_id;
  std::uint64_t seed = 0;
  std::string recorded_by = "scripted";  // "human" | "scripted"
  std::vector<Transition> transitions;
  bool truncated = false;

  double total_raw_score() const;
  // Throws ValidationError when the done/truncated bookkeeping is inconsistent.
  void validate() const;
  bool operator==(const Episode&) const = default;
};

// Runs the env's scripted expert from reset(seed) until the episode ends.
Episode record_scripted(const env::Env& env, std::uint64_t seed);

// Accumulates a live episode one step at a time (human recording).
class EpisodeRecorder {
 public:
  EpisodeRecorder(const env::Env& env, std::uint64_t seed, std::string recorded_by);

  const env::EnvState& state() const { return state_; }
  const env::Observation& obs() const { return obs_; }
  double score_raw() const { return score_; }
  bool finished() const { return finished_; }

  // Steps the env; throws std::out_of_range for a bad action.
  env::StepResult act(std::size_t action);
  // Valid once finished().
  const Episode& episode() const { return episode_; }

 private:
  const env::Env& env_;
  env::EnvState state_;
  env::Observation obs_;
  Episode episode_;
  double score_ = 0.0;
  bool finished_ = false;
};

// Serialized form, one JSON object per line:
//   {"type":"header","env":...,"seed":...,"by":...,"version":1}
//   {"type":"t","o":[...],"a":...,"r_raw":...,"d":...}   per transition
//   {"type":"end","o_next":[...]}
// Only the raw reward is stored; the transformed reward is recomputed at load.
std::string serialize_episode(const Episode& episode);

// Appends one episode to `path` in a single write.
void save_episode(const Episode& episode, const std::filesystem::path& path);

// Parses and validates every episode in the file against `spec`.
std::vector<Episode> load_demos(const std::filesystem::path& path, const env::EnvSpec& spec);
std::vector<Episode> parse_demos(const std::string& text, const env::EnvSpec& spec);

}  // namespace demoq::demo
