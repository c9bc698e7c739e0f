#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "demoq/agent.hpp"
#include "demoq/demo_store.hpp"
#include "demoq/envs.hpp"
#include "demoq/replay.hpp"

namespace demoq::train {

enum class VariantKind { DQfD, PddDqn, Imitation, Rbs, Her, Adet };

struct AlgoVariant {
  VariantKind kind = VariantKind::DQfD;
  bool drop_n_step = false;     // lambda_n := 0
  bool drop_supervised = false; // lambda_e := 0

  // "dqfd", "pdd_dqn", "imitation", "rbs", "her", "adet"; ablations append
  // "-no-nstep" / "-no-supervised".
  std::string name() const;
  static AlgoVariant parse(const std::string& name);
  bool operator==(const AlgoVariant&) const = default;
};

// What a variant does, resolved against the hyperparameters.
struct VariantPlan {
  bool use_demos = true;
  bool demos_permanent = true;
  bool demo_priority_bonus = true;
  bool pretrain = true;
  bool online = true;
  nn::LossSpec loss;
};

VariantPlan plan_for(const AlgoVariant& variant, const agent::HyperParams& hp);

struct RunConfig {
  agent::HyperParams hp;
  AlgoVariant variant;
  std::string env = "keydoor";
  std::string demos;               // JSONL path; may be empty when demos are passed in
  std::uint64_t seed = 0;
  std::int64_t steps = 50'000;     // online environment steps
  std::size_t eval_episodes = 10;
  std::int64_t log_every = 100;

  // Every key is optional; unknown keys throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

RunConfig load_config(const std::filesystem::path& path);

// Undefined numeric fields hold NaN and are written as empty CSV cells.
struct MetricsRow {
  std::string phase;  // "pretrain" | "online"
  std::int64_t step = 0;
  std::int64_t episodes = 0;
  double online_return;
  double eval_return;
  double j_dq;
  double j_n;
  double j_e;
  double j_l2;
  double total;
  double demo_frac;
  double demo_ratio;
  double beta;
  double epsilon;
  double ms;

  MetricsRow();
  nlohmann::json to_json() const;
};

inline constexpr const char* kMetricsHeader =
    "phase,step,episodes,online_return,eval_return,j_dq,j_n,j_e,j_l2,total,demo_frac,demo_ratio,beta,epsilon,ms";

std::string format_metrics_row(const MetricsRow& row);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct EvalStats {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> returns;
};

// Runs `episodes` episodes with an epsilon-greedy policy, reporting raw returns.
// Episode i resets the env with seed + i.
EvalStats evaluate(const nn::NetParams& params, const env::Env& env, std::size_t episodes, double epsilon,
                   std::uint64_t seed);

struct RunOptions {
  bool wall_clock = false;  // fill the ms column; off keeps output byte-reproducible
  std::function<void(const MetricsRow&)> on_row;
};

// One run of one variant. The online loop follows the published algorithm:
// act, store, sample, update, sync every target_period steps.
class Trainer {
 public:
  Trainer(RunConfig config, std::vector<demo::Episode> demos, RunOptions options = {});

  // k prioritized updates on demonstrations only.
  std::vector<MetricsRow> pretrain(std::int64_t k);
  std::vector<MetricsRow> run_online(std::int64_t steps);
  // Full variant: pretrain (if the variant does) then online (if it does).
  std::vector<MetricsRow> run();

  const RunConfig& config() const { return config_; }
  const VariantPlan& plan() const { return plan_; }
  const agent::Learner& learner() const { return learner_; }
  const replay::PrioritizedReplay& buffer() const { return buffer_; }
  const env::Env& env() const { return *env_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t target_syncs() const { return target_syncs_; }
  std::int64_t episodes() const { return episodes_; }
  const std::vector<double>& episode_returns() const { return episode_returns_; }

 private:
  struct Window {
    std::int64_t updates = 0;
    double j_dq = 0, j_n = 0, j_e = 0, j_l2 = 0, total = 0;
    void add(const nn::LossBreakdown& l);
  };

  MetricsRow make_row(const char* phase, std::int64_t step, double beta, Window& window);
  void emit(std::vector<MetricsRow>& rows, MetricsRow row);
  void reset_episode();

  RunConfig config_;
  VariantPlan plan_;
  RunOptions options_;
  std::unique_ptr<env::Env> env_;
  agent::Learner learner_;
  replay::PrioritizedReplay buffer_;
  std::mt19937_64 act_rng_;
  env::EnvState state_;
  env::Observation obs_;
  double episode_return_ = 0.0;
  std::int64_t env_steps_ = 0;
  std::int64_t online_steps_ = 0;
  std::int64_t pretrain_updates_ = 0;
  std::int64_t target_syncs_ = 0;
  std::int64_t episodes_ = 0;
  std::vector<double> episode_returns_;
  std::int64_t start_ms_ = 0;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  nn::NetParams params;
  std::int64_t env_steps = 0;
  std::vector<double> episode_returns;
};

RunResult run_variant(const RunConfig& config, const std::vector<demo::Episode>& demos, RunOptions options = {});

// Scripted-expert demonstrations for `env_id`, seeds first_seed .. first_seed + count - 1.
std::vector<demo::Episode> scripted_demos(const std::string& env_id, std::size_t count, std::uint64_t first_seed = 0);

// Mean of online episode returns over episodes finishing at step <= window_end.
double early_window_mean_return(const std::vector<MetricsRow>& rows, std::int64_t window_end);

struct LabeledRun {
  std::string label;
  std::vector<MetricsRow> rows;
};

// Label from a file name: stem with a trailing "_seed<N>", "-seed<N>", "_s<N>" or "-s<N>" removed.
std::string run_label(const std::filesystem::path& path);

// Long-format table "label,metric,step,median,min,max,runs,delta": per-label
// medians across runs of early_mean_return, final_return, and the per-step
// demo_ratio / total_loss / mean_return_to_date series. delta is the median
// minus the first label's median for the same (metric, step).
std::string compare_report(const std::vector<LabeledRun>& runs, std::int64_t early_window = 20'000);

}  // namespace demoq::train
