#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "demoq/bridge.hpp"
#include "demoq/demo_store.hpp"
#include "demoq/error.hpp"
#include "demoq/net.hpp"
#include "demoq/trainer.hpp"

namespace fs = std::filesystem;
using namespace demoq;

namespace {

bridge::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve(bridge::ServeOptions opts) {
  bridge::Server server(std::move(opts));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on ws://127.0.0.1:" << server.port() << "\n";
  server.run();
  g_server = nullptr;
  return 0;
}

int run_record(const std::string& env_id, const fs::path& out, const std::string& policy, std::size_t episodes,
               std::uint64_t seed, unsigned short port) {
  if (policy == "ui") {
    bridge::ServeOptions opts;
    opts.port = port;
    opts.record_out = out;
    opts.record_seed = seed;
    opts.stop_after_episodes = episodes;
    std::cerr << "waiting for " << episodes << " " << env_id << " episode(s) from the UI\n";
    return serve(std::move(opts));
  }
  const auto env = env::make_env(env_id);
  for (std::size_t i = 0; i < episodes; ++i) {
    const demo::Episode ep = demo::record_scripted(*env, seed + i);
    demo::save_episode(ep, out);
    std::printf("episode %zu seed %llu steps %zu score %g\n", i, static_cast<unsigned long long>(seed + i),
                ep.transitions.size(), ep.total_raw_score());
  }
  return 0;
}

int run_train(const fs::path& config_path, const std::string& demos_path, std::optional<std::uint64_t> seed,
              const fs::path& out, const std::string& checkpoint, bool wall_clock) {
  train::RunConfig config = train::load_config(config_path);
  if (!demos_path.empty()) config.demos = demos_path;
  if (seed) config.seed = *seed;
  std::vector<demo::Episode> demos;
  if (train::plan_for(config.variant, config.hp).use_demos) {
    if (config.demos.empty()) throw ConfigError(config.variant.name() + " needs --demos");
    demos = demo::load_demos(config.demos, env::make_env(config.env)->spec());
  }
  train::RunOptions opts;
  opts.wall_clock = wall_clock;
  const auto result = train::run_variant(config, demos, opts);
  train::write_metrics_csv(result.rows, out);
  if (!checkpoint.empty()) nn::save_checkpoint(result.params, checkpoint);
  const auto& last = result.rows.back();
  std::printf("%s seed %llu: %lld env steps, %zu episodes, final eval return %g\n", config.variant.name().c_str(),
              static_cast<unsigned long long>(config.seed), static_cast<long long>(result.env_steps),
              result.episode_returns.size(), last.eval_return);
  return 0;
}

int run_eval(const fs::path& checkpoint, const std::string& env_id, std::size_t episodes, double epsilon,
             std::uint64_t seed) {
  const nn::NetParams params = nn::load_checkpoint(checkpoint);
  const auto env = env::make_env(env_id);
  if (params.shape().obs_dim != env->spec().obs_dim || params.shape().n_actions != env->spec().n_actions) {
    throw DimensionError("checkpoint does not fit env " + env_id);
  }
  const auto s = train::evaluate(params, *env, episodes, epsilon, seed);
  std::printf("episodes %zu mean %g std %g min %g max %g\n", episodes, s.mean, s.stddev, s.min, s.max);
  return 0;
}

int run_compare(const std::vector<std::string>& files, const fs::path& out, std::int64_t early_window) {
  std::vector<train::LabeledRun> runs;
  for (const auto& f : files) runs.push_back({train::run_label(f), train::read_metrics_csv(f)});
  const std::string report = train::compare_report(runs, early_window);
  if (out.empty()) {
    std::cout << report;
    return 0;
  }
  std::ofstream o(out, std::ios::binary);
  if (!(o << report)) throw IoError("cannot write " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep Q-learning from demonstrations on small gridworlds"};
  app.require_subcommand(1);

  auto* rec = app.add_subcommand("record", "record demonstration episodes");
  std::string rec_env, rec_policy = "scripted";
  fs::path rec_out;
  std::size_t rec_episodes = 1;
  std::uint64_t rec_seed = 0;
  unsigned short rec_port = 8787;
  rec->add_option("--env", rec_env)->required();
  rec->add_option("--out", rec_out)->required();
  rec->add_option("--policy", rec_policy)->check(CLI::IsMember({"scripted", "ui"}));
  rec->add_option("--episodes", rec_episodes)->check(CLI::PositiveNumber);
  rec->add_option("--seed", rec_seed);
  rec->add_option("--port", rec_port, "bridge port for --policy ui");

  auto* tr = app.add_subcommand("train", "train one variant and write a metrics CSV");
  fs::path tr_config, tr_out;
  std::string tr_demos, tr_ckpt;
  std::optional<std::uint64_t> tr_seed;
  bool tr_clock = false;
  tr->add_option("--config", tr_config)->required()->check(CLI::ExistingFile);
  tr->add_option("--demos", tr_demos);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--checkpoint", tr_ckpt);
  tr->add_flag("--wall-clock", tr_clock, "fill the ms column (output is then not reproducible)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  fs::path ev_ckpt;
  std::string ev_env;
  std::size_t ev_episodes = 10;
  double ev_eps = 0.0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--env", ev_env)->required();
  ev->add_option("--episodes", ev_episodes)->check(CLI::PositiveNumber);
  ev->add_option("--epsilon", ev_eps)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--seed", ev_seed);

  auto* cmp = app.add_subcommand("compare", "aggregate metrics CSVs across seeds");
  std::vector<std::string> cmp_files;
  fs::path cmp_out;
  std::int64_t cmp_window = 20'000;
  cmp->add_option("files", cmp_files)->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", cmp_out);
  cmp->add_option("--early-window", cmp_window);

  auto* srv = app.add_subcommand("serve", "run the WebSocket bridge");
  bridge::ServeOptions srv_opts;
  srv->add_option("--port", srv_opts.port);
  srv->add_option("--demos-dir", srv_opts.demos_dir);
  srv->add_option("--runs-dir", srv_opts.runs_dir);
  srv->add_option("--address", srv_opts.address);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rec) return run_record(rec_env, rec_out, rec_policy, rec_episodes, rec_seed, rec_port);
    if (*tr) return run_train(tr_config, tr_demos, tr_seed, tr_out, tr_ckpt, tr_clock);
    if (*ev) return run_eval(ev_ckpt, ev_env, ev_episodes, ev_eps, ev_seed);
    if (*cmp) return run_compare(cmp_files, cmp_out, cmp_window);
    if (*srv) return serve(srv_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
