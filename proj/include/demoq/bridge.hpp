#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "demoq/demo_store.hpp"
#include "demoq/envs.hpp"
#include "demoq/trainer.hpp"

namespace demoq::bridge {

using nlohmann::json;

// Message kinds carried in the "t" field.
inline constexpr const char* kMessageKinds[] = {"hello",   "start_episode", "state", "act", "episode_end",
                                                "train_start", "metrics",   "error", "bye"};

json error_message(const std::string& code, const std::string& msg);
json bye_message();
json metrics_message(const std::vector<train::MetricsRow>& rows);

// Parses one text frame. Returns nullopt and fills `error` (an error message)
// when the text is not JSON, not an object, or carries an unknown "t".
std::optional<json> parse_message(const std::string& text, json& error);

// Serializes appends per file path across sessions.
void append_episode_locked(const demo::Episode& episode, const std::filesystem::path& path);

// Record mode. hello{mode:"record", env} starts episode 0; each act steps the
// env; a finished episode is appended to <demos_dir>/<env>.jsonl before the
// episode_end reply. start_episode begins the next one. Partial episodes are
// never written.
class RecordSession {
 public:
  explicit RecordSession(std::filesystem::path demos_dir, std::string recorded_by = "human");
  // Writes every episode to `out_file` instead of <demos_dir>/<env>.jsonl.
  RecordSession(std::filesystem::path demos_dir, std::string recorded_by, std::filesystem::path out_file,
                std::uint64_t first_seed);

  std::vector<json> handle(const json& msg);
  // Text entry point: malformed input yields a single error reply.
  std::vector<json> handle_text(const std::string& text);

  bool greeted() const { return env_ != nullptr; }
  bool in_episode() const { return recorder_ && !recorder_->finished(); }
  std::size_t saved_episodes() const { return saved_; }
  std::filesystem::path out_path() const;
  bool closed() const { return closed_; }

 private:
  json start_episode();
  json state_message(double reward_raw, bool done) const;

  std::filesystem::path demos_dir_;
  std::string recorded_by_;
  std::filesystem::path out_file_;
  std::unique_ptr<env::Env> env_;
  std::unique_ptr<demo::EpisodeRecorder> recorder_;
  std::uint64_t next_seed_ = 0;
  std::size_t saved_ = 0;
  bool closed_ = false;
};

// One-way handoff from a trainer thread to a telemetry consumer.
class RowQueue {
 public:
  void push(train::MetricsRow row);
  void close();
  // Waits up to `timeout` for rows, then takes everything queued (possibly
  // nothing). `finished` is set once the queue is closed and drained.
  std::vector<train::MetricsRow> drain(std::chrono::milliseconds timeout, bool& finished);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<train::MetricsRow> rows_;
  bool closed_ = false;
};

// Sink for outgoing telemetry frames; returns false when the peer is gone.
using Send = std::function<bool(const json&)>;

// Streams queued rows as metrics messages until the queue is closed and
// drained; waits at most `period` between checks. Rows arriving while a send
// is in flight are coalesced into the next message in their original order.
// Returns false if the peer went away.
bool stream_rows(RowQueue& queue, const Send& send, std::chrono::milliseconds period = std::chrono::milliseconds(500));

// Watch mode. hello{mode:"watch", run:"<file>"} replays <runs_dir>/<file>;
// hello{mode:"watch"} followed by train_start{variant, config} launches a
// live run whose rows are streamed as they are produced.
class WatchSession {
 public:
  explicit WatchSession(std::filesystem::path runs_dir);
  ~WatchSession();

  // Handles one control message. Replies go to `send`; a started stream is
  // run to completion (bye) before returning.
  void handle_text(const std::string& text, const Send& send);
  bool finished() const { return finished_; }
  // Cancels a live run (peer disconnected).
  void cancel();

 private:
  void replay(const std::filesystem::path& csv, const Send& send);
  void live(const json& msg, const Send& send);

  std::filesystem::path runs_dir_;
  bool greeted_ = false;
  bool finished_ = false;
  std::shared_ptr<std::atomic<bool>> cancel_ = std::make_shared<std::atomic<bool>>(false);
  std::thread worker_;
};

struct ServeOptions {
  unsigned short port = 8787;  // 0 picks a free port
  std::filesystem::path demos_dir = "demos";
  std::filesystem::path runs_dir = "runs";
  std::string address = "127.0.0.1";
  std::filesystem::path record_out;   // non-empty: all record sessions append here
  std::uint64_t record_seed = 0;      // first env seed of each record session
  std::size_t stop_after_episodes = 0;  // > 0: stop once this many episodes are saved
};

// WebSocket server, one thread per connection. The first message decides the
// session kind.
class Server {
 public:
  explicit Server(ServeOptions options);
  ~Server();

  unsigned short port() const;
  void run();   // blocks until stop()
  void stop();  // safe from any thread

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace demoq::bridge
