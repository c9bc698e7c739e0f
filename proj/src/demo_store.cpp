#include "demoq/demo_store.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "demoq/error.hpp"

namespace demoq::demo {

using nlohmann::json;

double transform_reward(double raw) {
  if (raw == 0.0) return 0.0;
  const double mag = std::log1p(std::fabs(raw));
  return raw > 0.0 ? mag : -mag;
}

Transition make_transition(env::Observation obs, std::size_t action, double reward_raw, env::Observation next_obs,
                           bool done, Source source) {
  return Transition{std::move(obs), action, reward_raw, transform_reward(reward_raw), std::move(next_obs), done, source};
}

double Episode::total_raw_score() const {
  double total = 0.0;
  for (const auto& t : transitions) total += t.reward_raw;
  return total;
}

void Episode::validate() const {
  if (transitions.empty()) throw ValidationError(0, "episode has no transitions");
  for (std::size_t i = 0; i + 1 < transitions.size(); ++i) {
    if (transitions[i].done) throw ValidationError(0, "done flag set before the final transition");
  }
  if (transitions.back().done == truncated) {
    throw ValidationError(0, "final transition must be done unless the episode was truncated");
  }
}

Episode record_scripted(const env::Env& env, std::uint64_t seed) {
  EpisodeRecorder rec(env, seed, "scripted");
  while (!rec.finished()) rec.act(env.scripted_expert(rec.state()));
  return rec.episode();
}

EpisodeRecorder::EpisodeRecorder(const env::Env& env, std::uint64_t seed, std::string recorded_by) : env_(env) {
  std::tie(state_, obs_) = env.reset(seed);
  episode_.env_id = env.spec().id;
  episode_.seed = seed;
  episode_.recorded_by = std::move(recorded_by);
}

env::StepResult EpisodeRecorder::act(std::size_t action) {
  if (finished_) throw std::logic_error("episode already finished");
  env::StepResult r = env_.step(state_, action);
  episode_.transitions.push_back(make_transition(obs_, action, r.reward_raw, r.obs, r.terminal, Source::Demo));
  score_ += r.reward_raw;
  state_ = r.state;
  obs_ = r.obs;
  if (r.done()) {
    finished_ = true;
    episode_.truncated = !r.terminal;
  }
  return r;
}

std::string serialize_episode(const Episode& episode) {
  episode.validate();
  std::string out;
  out += json{{"type", "header"}, {"env", episode.env_id}, {"seed", episode.seed}, {"by", episode.recorded_by},
              {"version", 1}}
             .dump();
  out += '\n';
  for (const auto& t : episode.transitions) {
    out += json{{"type", "t"}, {"o", t.obs}, {"a", t.action}, {"r_raw", t.reward_raw}, {"d", t.done}}.dump();
    out += '\n';
  }
  out += json{{"type", "end"}, {"o_next", episode.transitions.back().next_obs}}.dump();
  out += '\n';
  return out;
}

void save_episode(const Episode& episode, const std::filesystem::path& path) {
  const std::string text = serialize_episode(episode);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for append");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

env::Observation read_obs(const json& j, const char* key, const env::EnvSpec& spec, std::size_t line) {
  const auto& arr = j.at(key);
  if (!arr.is_array()) throw ParseError(line, std::string(key) + " must be an array");
  env::Observation o;
  o.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw ParseError(line, std::string(key) + " must contain numbers");
    o.push_back(v.get<double>());
  }
  if (o.size() != spec.obs_dim) {
    throw ValidationError(line, "observation has " + std::to_string(o.size()) + " entries, env " + spec.id +
                                    " expects " + std::to_string(spec.obs_dim));
  }
  return o;
}

struct PendingStep {
  env::Observation obs;
  std::size_t action;
  double reward_raw;
  bool done;
};

}  // namespace

std::vector<Episode> parse_demos(const std::string& text, const env::EnvSpec& spec) {
  std::vector<Episode> episodes;
  std::istringstream in(text);
  std::string raw_line;
  std::size_t line = 0;
  bool open = false;
  std::size_t open_line = 0;
  Episode current;
  std::vector<PendingStep> steps;

  while (std::getline(in, raw_line)) {
    ++line;
    if (raw_line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(raw_line);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    try {
      if (!j.is_object()) throw ParseError(line, "record must be a JSON object");
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (open) throw ParseError(line, "header inside an unterminated episode");
        if (j.at("version").get<int>() != 1) throw ParseError(line, "unsupported version");
        current = Episode{};
        current.env_id = j.at("env").get<std::string>();
        if (current.env_id != spec.id) {
          throw ValidationError(line, "episode env '" + current.env_id + "' does not match configured env '" +
                                          spec.id + "'");
        }
        current.seed = j.at("seed").get<std::uint64_t>();
        current.recorded_by = j.at("by").get<std::string>();
        if (current.recorded_by != "human" && current.recorded_by != "scripted") {
          throw ParseError(line, "by must be \"human\" or \"scripted\"");
        }
        steps.clear();
        open = true;
        open_line = line;
      } else if (type == "t") {
        if (!open) throw ParseError(line, "transition before header");
        PendingStep s;
        s.obs = read_obs(j, "o", spec, line);
        const auto& a = j.at("a");
        if (!a.is_number_integer()) throw ParseError(line, "a must be an integer");
        const auto action = a.get<std::int64_t>();
        if (action < 0 || static_cast<std::size_t>(action) >= spec.n_actions) {
          throw ValidationError(line, "action " + std::to_string(action) + " outside [0, " +
                                          std::to_string(spec.n_actions) + ")");
        }
        s.action = static_cast<std::size_t>(action);
        const auto& r = j.at("r_raw");
        if (!r.is_number()) throw ParseError(line, "r_raw must be a number");
        s.reward_raw = r.get<double>();
        if (!std::isfinite(s.reward_raw)) throw ValidationError(line, "r_raw must be finite");
        const auto& d = j.at("d");
        if (!d.is_boolean()) throw ParseError(line, "d must be a boolean");
        s.done = d.get<bool>();
        if (!steps.empty() && steps.back().done) throw ValidationError(line, "transition after a terminal step");
        steps.push_back(std::move(s));
      } else if (type == "end") {
        if (!open) throw ParseError(line, "end before header");
        if (steps.empty()) throw ValidationError(line, "episode has no transitions");
        auto final_obs = read_obs(j, "o_next", spec, line);
        current.transitions.reserve(steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
          env::Observation next = i + 1 < steps.size() ? steps[i + 1].obs : final_obs;
          current.transitions.push_back(make_transition(std::move(steps[i].obs), steps[i].action,
                                                        steps[i].reward_raw, std::move(next), steps[i].done,
                                                        Source::Demo));
        }
        current.truncated = !current.transitions.back().done;
        episodes.push_back(std::move(current));
        steps.clear();
        open = false;
      } else {
        throw ParseError(line, "unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(line, std::string("schema violation: ") + e.what());
    }
  }
  if (open) throw ParseError(open_line, "episode starting here has no end record");
  return episodes;
}

std::vector<Episode> load_demos(const std::filesystem::path& path, const env::EnvSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read demonstrations from " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_demos(buf.str(), spec);
}

}  // namespace demoq::demo
