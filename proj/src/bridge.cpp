#include "demoq/bridge.hpp"

#include <algorithm>
#include <map>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "demoq/error.hpp"

namespace demoq::bridge {

namespace {

bool known_kind(const std::string& t) {
  return std::find(std::begin(kMessageKinds), std::end(kMessageKinds), t) != std::end(kMessageKinds);
}

// Integer field, or nullopt when missing / not an integer.
std::optional<std::int64_t> int_field(const json& msg, const char* key) {
  const auto it = msg.find(key);
  if (it == msg.end() || !it->is_number_integer()) return std::nullopt;
  return it->get<std::int64_t>();
}

}  // namespace

json error_message(const std::string& code, const std::string& msg) {
  return {{"t", "error"}, {"code", code}, {"msg", msg}};
}

json bye_message() { return {{"t", "bye"}}; }

json metrics_message(const std::vector<train::MetricsRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(r.to_json());
  return {{"t", "metrics"}, {"rows", std::move(arr)}};
}

std::optional<json> parse_message(const std::string& text, json& error) {
  json msg = json::parse(text, nullptr, false);
  if (msg.is_discarded()) {
    error = error_message("bad_json", "frame is not valid JSON");
    return std::nullopt;
  }
  if (!msg.is_object() || !msg.contains("t") || !msg["t"].is_string()) {
    error = error_message("bad_message", "expected an object with a string field t");
    return std::nullopt;
  }
  const std::string t = msg["t"].get<std::string>();
  if (!known_kind(t)) {
    error = error_message("unknown_type", "unknown message type: " + t);
    return std::nullopt;
  }
  return msg;
}

void append_episode_locked(const demo::Episode& episode, const std::filesystem::path& path) {
  static std::mutex registry_mu;
  static std::map<std::string, std::unique_ptr<std::mutex>> locks;
  std::mutex* file_mu;
  {
    std::lock_guard<std::mutex> g(registry_mu);
    auto& slot = locks[std::filesystem::absolute(path).lexically_normal().string()];
    if (!slot) slot = std::make_unique<std::mutex>();
    file_mu = slot.get();
  }
  std::lock_guard<std::mutex> g(*file_mu);
  demo::save_episode(episode, path);
}

RecordSession::RecordSession(std::filesystem::path demos_dir, std::string recorded_by)
    : demos_dir_(std::move(demos_dir)), recorded_by_(std::move(recorded_by)) {}

RecordSession::RecordSession(std::filesystem::path demos_dir, std::string recorded_by, std::filesystem::path out_file,
                             std::uint64_t first_seed)
    : demos_dir_(std::move(demos_dir)),
      recorded_by_(std::move(recorded_by)),
      out_file_(std::move(out_file)),
      next_seed_(first_seed) {}

std::filesystem::path RecordSession::out_path() const {
  if (!out_file_.empty()) return out_file_;
  return env_ ? demos_dir_ / (env_->spec().id + ".jsonl") : std::filesystem::path();
}

json RecordSession::state_message(double reward_raw, bool done) const {
  json legal = json::array();
  for (std::size_t a = 0; a < env_->spec().n_actions; ++a) legal.push_back(a);
  return {{"t", "state"},
          {"obs", recorder_->obs()},
          {"step", recorder_->state().steps},
          {"score_raw", recorder_->score_raw()},
          {"legal_actions", std::move(legal)},
          {"reward_raw", reward_raw},
          {"done", done}};
}

json RecordSession::start_episode() {
  recorder_ = std::make_unique<demo::EpisodeRecorder>(*env_, next_seed_++, recorded_by_);
  return state_message(0.0, false);
}

std::vector<json> RecordSession::handle_text(const std::string& text) {
  json err;
  const auto msg = parse_message(text, err);
  if (!msg) return {err};
  return handle(*msg);
}

std::vector<json> RecordSession::handle(const json& msg) {
  if (closed_) return {error_message("closed", "session is closed")};
  const std::string t = msg.value("t", "");
  if (t == "hello") {
    if (greeted()) return {error_message("already_greeted", "hello was already received")};
    if (msg.value("mode", "") != "record") return {error_message("bad_mode", "record session expects mode record")};
    const auto env_it = msg.find("env");
    if (env_it == msg.end() || !env_it->is_string()) return {error_message("bad_env", "hello needs an env id")};
    try {
      env_ = env::make_env(env_it->get<std::string>());
    } catch (const ConfigError& e) {
      return {error_message("bad_env", e.what())};
    }
    if (const auto seed = int_field(msg, "seed")) next_seed_ = static_cast<std::uint64_t>(*seed);
    std::error_code ec;
    const auto dir = out_path().parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir, ec);
    return {start_episode()};
  }
  if (t == "bye") {
    closed_ = true;
    recorder_.reset();
    return {bye_message()};
  }
  if (!greeted()) return {error_message("hello_required", "send hello before " + t)};
  if (t == "start_episode") {
    if (in_episode()) return {error_message("episode_in_progress", "finish the current episode first")};
    if (const auto seed = int_field(msg, "seed")) next_seed_ = static_cast<std::uint64_t>(*seed);
    return {start_episode()};
  }
  if (t == "act") {
    if (!in_episode()) return {error_message("no_episode", "send start_episode first")};
    const auto a = int_field(msg, "a");
    if (!a) return {error_message("bad_message", "act needs an integer a")};
    if (*a < 0 || static_cast<std::size_t>(*a) >= env_->spec().n_actions) {
      return {error_message("bad_action", "action " + std::to_string(*a) + " outside [0, " +
                                              std::to_string(env_->spec().n_actions) + ")")};
    }
    const env::StepResult r = recorder_->act(static_cast<std::size_t>(*a));
    if (!recorder_->finished()) return {state_message(r.reward_raw, false)};
    const demo::Episode& ep = recorder_->episode();
    try {
      append_episode_locked(ep, out_path());
    } catch (const std::exception& e) {
      closed_ = true;
      return {error_message("io", e.what())};
    }
    ++saved_;
    return {json{{"t", "episode_end"},
                 {"score_raw", ep.total_raw_score()},
                 {"steps", ep.transitions.size()},
                 {"reward_raw", r.reward_raw},
                 {"done", true},
                 {"truncated", ep.truncated}}};
  }
  return {error_message("unexpected_message", t + " is not accepted in record mode")};
}

void RowQueue::push(train::MetricsRow row) {
  {
    std::lock_guard<std::mutex> g(mu_);
    rows_.push_back(std::move(row));
  }
  cv_.notify_one();
}

void RowQueue::close() {
  {
    std::lock_guard<std::mutex> g(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::vector<train::MetricsRow> RowQueue::drain(std::chrono::milliseconds timeout, bool& finished) {
  std::unique_lock<std::mutex> lk(mu_);
  cv_.wait_for(lk, timeout, [this] { return !rows_.empty() || closed_; });
  std::vector<train::MetricsRow> out(std::make_move_iterator(rows_.begin()), std::make_move_iterator(rows_.end()));
  rows_.clear();
  finished = closed_;
  return out;
}

bool stream_rows(RowQueue& queue, const Send& send, std::chrono::milliseconds period) {
  constexpr std::size_t kMaxRows = 1000;
  for (;;) {
    bool finished = false;
    const auto rows = queue.drain(period, finished);
    for (std::size_t i = 0; i < rows.size(); i += kMaxRows) {
      const auto end = rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), i + kMaxRows));
      if (!send(metrics_message({rows.begin() + static_cast<std::ptrdiff_t>(i), end}))) return false;
    }
    if (finished) return true;
  }
}

WatchSession::WatchSession(std::filesystem::path runs_dir) : runs_dir_(std::move(runs_dir)) {}

WatchSession::~WatchSession() {
  cancel();
  if (worker_.joinable()) worker_.join();
}

void WatchSession::cancel() { cancel_->store(true); }

void WatchSession::handle_text(const std::string& text, const Send& send) {
  json err;
  const auto msg = parse_message(text, err);
  if (!msg) {
    send(err);
    return;
  }
  const std::string t = (*msg)["t"].get<std::string>();
  if (finished_) {
    send(error_message("closed", "session is closed"));
    return;
  }
  if (t == "hello") {
    if (greeted_) {
      send(error_message("already_greeted", "hello was already received"));
      return;
    }
    if (msg->value("mode", "") != "watch") {
      send(error_message("bad_mode", "watch session expects mode watch"));
      return;
    }
    greeted_ = true;
    const auto run = msg->find("run");
    if (run != msg->end() && run->is_string()) {
      const std::filesystem::path rel(run->get<std::string>());
      const bool escapes = rel.is_absolute() || std::any_of(rel.begin(), rel.end(), [](const auto& p) {
                             return p == "..";
                           });
      if (escapes) {
        send(error_message("bad_run", "run must name a file inside the runs directory"));
        return;
      }
      replay(runs_dir_ / rel, send);
    }
    return;
  }
  if (t == "bye") {
    finished_ = true;
    send(bye_message());
    return;
  }
  if (!greeted_) {
    send(error_message("hello_required", "send hello before " + t));
    return;
  }
  if (t == "train_start") {
    live(*msg, send);
    return;
  }
  send(error_message("unexpected_message", t + " is not accepted in watch mode"));
}

void WatchSession::replay(const std::filesystem::path& csv, const Send& send) {
  std::vector<train::MetricsRow> rows;
  try {
    rows = train::read_metrics_csv(csv);
  } catch (const IoError& e) {
    send(error_message("no_such_run", e.what()));
    return;
  } catch (const ParseError& e) {
    send(error_message("bad_run", e.what()));
    return;
  }
  RowQueue queue;
  for (auto& r : rows) queue.push(std::move(r));
  queue.close();
  finished_ = true;
  if (stream_rows(queue, send)) send(bye_message());
}

void WatchSession::live(const json& msg, const Send& send) {
  train::RunConfig config;
  std::vector<demo::Episode> demos;
  try {
    json cfg = msg.contains("config") && msg["config"].is_object() ? msg["config"] : json::object();
    if (msg.contains("variant") && msg["variant"].is_string()) cfg["variant"] = msg["variant"];
    config = train::RunConfig::from_json(cfg);
    if (train::plan_for(config.variant, config.hp).use_demos) {
      const auto spec = env::make_env(config.env)->spec();
      demos = config.demos.empty() ? train::scripted_demos(config.env, 10) : demo::load_demos(config.demos, spec);
    }
  } catch (const Error& e) {
    send(error_message("bad_config", e.what()));
    return;
  }
  send(json{{"t", "train_start"}, {"variant", config.variant.name()}, {"config", config.to_json()}});
  finished_ = true;

  struct Cancelled {};
  auto queue = std::make_shared<RowQueue>();
  auto failure = std::make_shared<std::string>();
  auto cancel = cancel_;
  worker_ = std::thread([queue, failure, cancel, config, demos = std::move(demos)] {
    train::RunOptions opts;
    opts.on_row = [&](const train::MetricsRow& r) {
      if (cancel->load()) throw Cancelled{};
      queue->push(r);
    };
    try {
      train::run_variant(config, demos, opts);
    } catch (const Cancelled&) {
    } catch (const std::exception& e) {
      *failure = e.what();
    }
    queue->close();
  });
  const bool alive = stream_rows(*queue, send);
  if (!alive) cancel->store(true);
  worker_.join();
  if (!alive) return;
  if (!failure->empty()) send(error_message("run_failed", *failure));
  send(bye_message());
}

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using WsStream = websocket::stream<tcp::socket>;

namespace {

void serve_connection(const std::shared_ptr<WsStream>& ws, const ServeOptions& opt,
                      const std::function<void()>& on_saved) {
  beast::error_code ec;
  ws->accept(ec);
  if (ec) return;
  ws->text(true);
  const Send send = [&ws](const json& m) {
    beast::error_code wec;
    ws->write(asio::buffer(m.dump()), wec);
    return !wec;
  };
  std::unique_ptr<RecordSession> record;
  std::unique_ptr<WatchSession> watch;
  for (;;) {
    beast::flat_buffer buf;
    ws->read(buf, ec);
    if (ec) break;
    const std::string text = beast::buffers_to_string(buf.data());
    if (record) {
      const std::size_t before = record->saved_episodes();
      for (const auto& m : record->handle_text(text)) send(m);
      if (record->saved_episodes() > before) on_saved();
      if (record->closed()) break;
      continue;
    }
    if (watch) {
      watch->handle_text(text, send);
      if (watch->finished()) break;
      continue;
    }
    json err;
    const auto msg = parse_message(text, err);
    if (!msg) {
      send(err);
      continue;
    }
    if ((*msg)["t"] != "hello") {
      send(error_message("hello_required", "send hello before " + (*msg)["t"].get<std::string>()));
      continue;
    }
    const std::string mode = msg->value("mode", "");
    if (mode == "record") {
      record = std::make_unique<RecordSession>(opt.demos_dir, "human", opt.record_out, opt.record_seed);
      for (const auto& m : record->handle(*msg)) send(m);
      if (!record->greeted()) record.reset();
    } else if (mode == "watch") {
      watch = std::make_unique<WatchSession>(opt.runs_dir);
      watch->handle_text(text, send);
      if (watch->finished()) break;
    } else {
      send(error_message("bad_mode", "mode must be record or watch"));
    }
  }
  // A record session that ends here mid-episode simply drops the recorder.
  ws->close(websocket::close_code::normal, ec);
}

}  // namespace

struct Server::Impl {
  ServeOptions options;
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::atomic<bool> stopping{false};
  std::mutex mu;
  std::vector<std::thread> threads;
  std::vector<std::weak_ptr<WsStream>> streams;
  std::atomic<std::size_t> saved{0};
};

Server::Server(ServeOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  try {
    const tcp::endpoint ep(asio::ip::make_address(impl_->options.address), impl_->options.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw IoError("cannot listen on " + impl_->options.address + ":" + std::to_string(impl_->options.port) + ": " +
                  e.what());
  }
}

Server::~Server() {
  stop();
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> g(impl_->mu);
    threads.swap(impl_->threads);
  }
  for (auto& t : threads) t.join();
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() {
  while (!impl_->stopping.load()) {
    tcp::socket sock(impl_->ioc);
    beast::error_code ec;
    impl_->acceptor.accept(sock, ec);
    if (impl_->stopping.load()) break;
    if (ec) continue;
    auto ws = std::make_shared<WsStream>(std::move(sock));
    std::lock_guard<std::mutex> g(impl_->mu);
    impl_->streams.push_back(ws);
    impl_->threads.emplace_back([ws, this] {
      serve_connection(ws, impl_->options, [this] {
        const std::size_t limit = impl_->options.stop_after_episodes;
        if (limit > 0 && impl_->saved.fetch_add(1) + 1 >= limit) stop();
      });
    });
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> g(impl_->mu);
    threads.swap(impl_->threads);
  }
  for (auto& t : threads) t.join();
}

void Server::stop() {
  if (impl_->stopping.exchange(true)) return;
  {
    std::lock_guard<std::mutex> g(impl_->mu);
    for (auto& w : impl_->streams) {
      if (auto s = w.lock()) {
        beast::error_code ec;
        beast::get_lowest_layer(*s).shutdown(tcp::socket::shutdown_both, ec);
      }
    }
  }
  // Wake the blocking accept.
  beast::error_code ec;
  asio::io_context wake_ctx;
  tcp::socket wake(wake_ctx);
  wake.connect(tcp::endpoint(asio::ip::make_address(impl_->options.address), port()), ec);
}

}  // namespace demoq::bridge
