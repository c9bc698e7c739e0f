#include "demoq/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "demoq/error.hpp"

namespace demoq::train {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::string AlgoVariant::name() const {
  std::string base;
  switch (kind) {
    case VariantKind::DQfD: base = "dqfd"; break;
    case VariantKind::PddDqn: base = "pdd_dqn"; break;
    case VariantKind::Imitation: base = "imitation"; break;
    case VariantKind::Rbs: base = "rbs"; break;
    case VariantKind::Her: base = "her"; break;
    case VariantKind::Adet: base = "adet"; break;
  }
  if (drop_n_step) base += "-no-nstep";
  if (drop_supervised) base += "-no-supervised";
  return base;
}

AlgoVariant AlgoVariant::parse(const std::string& name) {
  static const std::map<std::string, VariantKind> kinds = {
      {"dqfd", VariantKind::DQfD}, {"pdd_dqn", VariantKind::PddDqn}, {"imitation", VariantKind::Imitation},
      {"rbs", VariantKind::Rbs},   {"her", VariantKind::Her},        {"adet", VariantKind::Adet},
  };
  AlgoVariant v;
  // Upper-case spellings ("DQFD", "PDD_DQN") are accepted too.
  std::string rest = name;
  std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
  auto strip = [&rest](const std::string& suffix) {
    if (rest.size() > suffix.size() && rest.compare(rest.size() - suffix.size(), suffix.size(), suffix) == 0) {
      rest.erase(rest.size() - suffix.size());
      return true;
    }
    return false;
  };
  v.drop_supervised = strip("-no-supervised");
  v.drop_n_step = strip("-no-nstep");
  const auto it = kinds.find(rest);
  if (it == kinds.end()) throw ConfigError("unknown variant: " + name);
  v.kind = it->second;
  return v;
}

VariantPlan plan_for(const AlgoVariant& variant, const agent::HyperParams& hp) {
  VariantPlan p;
  p.loss = hp.loss_spec();
  switch (variant.kind) {
    case VariantKind::DQfD:
      break;
    case VariantKind::PddDqn:
      p.use_demos = false;
      p.pretrain = false;
      p.loss.lambda_e = 0.0;
      p.loss.lambda_l2 = 0.0;
      break;
    case VariantKind::Imitation:
      p.online = false;
      p.loss.td = false;
      p.loss.lambda_n = 0.0;
      p.loss.supervised = nn::SupervisedLoss::CrossEntropy;
      break;
    case VariantKind::Rbs:
      p.pretrain = false;
      p.demos_permanent = false;
      p.demo_priority_bonus = false;
      p.loss.lambda_e = 0.0;
      break;
    case VariantKind::Her:
      p.pretrain = false;
      p.loss.lambda_e = 0.0;
      break;
    case VariantKind::Adet:
      p.loss.supervised = nn::SupervisedLoss::CrossEntropy;
      break;
  }
  if (variant.drop_n_step) p.loss.lambda_n = 0.0;
  if (variant.drop_supervised) p.loss.lambda_e = 0.0;
  return p;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  auto& hp = c.hp;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "gamma") hp.gamma = v.get<double>();
      else if (key == "n") hp.n = v.get<int>();
      else if (key == "margin") hp.margin = v.get<double>();
      else if (key == "lambda_n") hp.lambda_n = v.get<double>();
      else if (key == "lambda_e") hp.lambda_e = v.get<double>();
      else if (key == "lambda_l2") hp.lambda_l2 = v.get<double>();
      else if (key == "epsilon") hp.epsilon = v.get<double>();
      else if (key == "alpha") hp.alpha = v.get<double>();
      else if (key == "beta0") hp.beta0 = v.get<double>();
      else if (key == "eps_agent") hp.eps_agent = v.get<double>();
      else if (key == "eps_demo") hp.eps_demo = v.get<double>();
      else if (key == "target_period") hp.target_period = v.get<std::int64_t>();
      else if (key == "pretrain_steps") hp.pretrain_steps = v.get<std::int64_t>();
      else if (key == "batch_size") hp.batch_size = v.get<std::size_t>();
      else if (key == "lr") hp.lr = v.get<double>();
      else if (key == "capacity") hp.capacity = v.get<std::size_t>();
      else if (key == "beta_anneal_steps") hp.beta_anneal_steps = v.get<std::int64_t>();
      else if (key == "hidden") hp.hidden = v.get<std::size_t>();
      else if (key == "variant") c.variant = AlgoVariant::parse(v.get<std::string>());
      else if (key == "env") c.env = v.get<std::string>();
      else if (key == "demos") c.demos = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "steps") c.steps = v.get<std::int64_t>();
      else if (key == "eval_episodes") c.eval_episodes = v.get<std::size_t>();
      else if (key == "log_every") c.log_every = v.get<std::int64_t>();
      else throw ConfigError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  hp.validate();
  env::make_env(c.env);
  if (c.steps < 0) throw ConfigError("steps must be >= 0");
  if (c.log_every < 1) throw ConfigError("log_every must be >= 1");
  return c;
}

json RunConfig::to_json() const {
  return {{"gamma", hp.gamma},
          {"n", hp.n},
          {"margin", hp.margin},
          {"lambda_n", hp.lambda_n},
          {"lambda_e", hp.lambda_e},
          {"lambda_l2", hp.lambda_l2},
          {"epsilon", hp.epsilon},
          {"alpha", hp.alpha},
          {"beta0", hp.beta0},
          {"eps_agent", hp.eps_agent},
          {"eps_demo", hp.eps_demo},
          {"target_period", hp.target_period},
          {"pretrain_steps", hp.pretrain_steps},
          {"batch_size", hp.batch_size},
          {"lr", hp.lr},
          {"capacity", hp.capacity},
          {"beta_anneal_steps", hp.beta_anneal_steps},
          {"hidden", hp.hidden},
          {"variant", variant.name()},
          {"env", env},
          {"demos", demos},
          {"seed", seed},
          {"steps", steps},
          {"eval_episodes", eval_episodes},
          {"log_every", log_every}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return RunConfig::from_json(j);
}

MetricsRow::MetricsRow()
    : online_return(kNaN),
      eval_return(kNaN),
      j_dq(kNaN),
      j_n(kNaN),
      j_e(kNaN),
      j_l2(kNaN),
      total(kNaN),
      demo_frac(kNaN),
      demo_ratio(kNaN),
      beta(kNaN),
      epsilon(kNaN),
      ms(kNaN) {}

json MetricsRow::to_json() const {
  auto num = [](double v) -> json { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"phase", phase},          {"step", step},           {"episodes", episodes},
          {"online_return", num(online_return)}, {"eval_return", num(eval_return)}, {"j_dq", num(j_dq)},
          {"j_n", num(j_n)},         {"j_e", num(j_e)},        {"j_l2", num(j_l2)},
          {"total", num(total)},     {"demo_frac", num(demo_frac)}, {"demo_ratio", num(demo_ratio)},
          {"beta", num(beta)},       {"epsilon", num(epsilon)}, {"ms", num(ms)}};
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string s = r.phase;
  s += ',' + std::to_string(r.step) + ',' + std::to_string(r.episodes);
  for (double v : {r.online_return, r.eval_return, r.j_dq, r.j_n, r.j_e, r.j_l2, r.total, r.demo_frac, r.demo_ratio,
                   r.beta, r.epsilon, r.ms}) {
    s += ',' + format_double(v);
  }
  return s;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += format_metrics_row(r);
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics " + path.string());
  out << metrics_csv(rows);
  if (!out) throw IoError("failed writing metrics " + path.string());
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "metrics file is empty");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ParseError(1, "unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 15) throw ParseError(lineno, "expected 15 columns, got " + std::to_string(cells.size()));
    MetricsRow r;
    try {
      r.phase = cells[0];
      r.step = std::stoll(cells[1]);
      r.episodes = std::stoll(cells[2]);
      double* dst[] = {&r.online_return, &r.eval_return, &r.j_dq,     &r.j_n,  &r.j_e,    &r.j_l2,
                       &r.total,         &r.demo_frac,   &r.demo_ratio, &r.beta, &r.epsilon, &r.ms};
      for (std::size_t i = 0; i < 12; ++i) *dst[i] = cells[3 + i].empty() ? kNaN : std::stod(cells[3 + i]);
    } catch (const std::exception&) {
      throw ParseError(lineno, "malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read metrics " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_metrics_csv(buf.str());
}

EvalStats evaluate(const nn::NetParams& params, const env::Env& env, std::size_t episodes, double epsilon,
                   std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate needs at least one episode");
  std::mt19937_64 rng(derive_seed(seed, 0xe7a1));
  EvalStats s;
  for (std::size_t i = 0; i < episodes; ++i) {
    auto [state, obs] = env.reset(seed + i);
    double ret = 0.0;
    for (;;) {
      const std::size_t a = agent::select_action(params, obs, epsilon, rng);
      const env::StepResult r = env.step(state, a);
      ret += r.reward_raw;
      state = r.state;
      obs = r.obs;
      if (r.done()) break;
    }
    s.returns.push_back(ret);
  }
  double sum = 0.0;
  for (double r : s.returns) sum += r;
  s.mean = sum / static_cast<double>(episodes);
  double var = 0.0;
  for (double r : s.returns) var += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(episodes));
  s.min = *std::min_element(s.returns.begin(), s.returns.end());
  s.max = *std::max_element(s.returns.begin(), s.returns.end());
  return s;
}

void Trainer::Window::add(const nn::LossBreakdown& l) {
  ++updates;
  j_dq += l.j_dq;
  j_n += l.j_n;
  j_e += l.j_e;
  j_l2 += l.j_l2;
  total += l.total;
}

Trainer::Trainer(RunConfig config, std::vector<demo::Episode> demos, RunOptions options)
    : config_(std::move(config)),
      plan_(plan_for(config_.variant, config_.hp)),
      options_(std::move(options)),
      env_(env::make_env(config_.env)),
      learner_(agent::Learner::create(
          nn::NetShape{env_->spec().obs_dim, env_->spec().n_actions, config_.hp.hidden, config_.hp.hidden},
          config_.hp.lr, derive_seed(config_.seed, 1))),
      buffer_([this] {
        auto rc = config_.hp.replay_config();
        rc.demos_permanent = plan_.demos_permanent;
        rc.demo_priority_bonus = plan_.demo_priority_bonus;
        return rc;
      }()),
      act_rng_(derive_seed(config_.seed, 2)),
      start_ms_(now_ms()) {
  config_.hp.validate();
  if (plan_.use_demos) {
    for (const auto& ep : demos) {
      if (ep.env_id != env_->spec().id) {
        throw ConfigError("demonstration env '" + ep.env_id + "' does not match '" + env_->spec().id + "'");
      }
      for (const auto& t : ep.transitions) {
        if (t.obs.size() != env_->spec().obs_dim || t.next_obs.size() != env_->spec().obs_dim ||
            t.action >= env_->spec().n_actions) {
          throw DimensionError("demonstration transition does not fit env " + env_->spec().id);
        }
      }
    }
    buffer_.seed_demos(demos);
  }
}

MetricsRow Trainer::make_row(const char* phase, std::int64_t step, double beta, Window& w) {
  MetricsRow r;
  r.phase = phase;
  r.step = step;
  r.episodes = episodes_;
  if (w.updates > 0) {
    const double n = static_cast<double>(w.updates);
    r.j_dq = w.j_dq / n;
    r.j_n = w.j_n / n;
    r.j_e = w.j_e / n;
    r.j_l2 = w.j_l2 / n;
    r.total = w.total / n;
  }
  w = Window{};
  const replay::SamplingWindow sw = buffer_.take_window();
  if (sw.drawn > 0) {
    const auto f = replay::demo_fraction_stats(sw);
    r.demo_frac = f.fraction;
    r.demo_ratio = f.ratio;
  }
  r.beta = beta;
  r.epsilon = config_.hp.epsilon;
  if (options_.wall_clock) r.ms = static_cast<double>(now_ms() - start_ms_);
  return r;
}

void Trainer::emit(std::vector<MetricsRow>& rows, MetricsRow row) {
  if (options_.on_row) options_.on_row(row);
  rows.push_back(std::move(row));
}

std::vector<MetricsRow> Trainer::pretrain(std::int64_t k) {
  std::vector<MetricsRow> rows;
  if (buffer_.demo_count() == 0) throw ConfigError("pre-training needs a non-empty demonstration set");
  if (k <= 0) return rows;
  const auto& hp = config_.hp;
  const double beta = hp.beta0;
  const std::size_t batch = std::min(hp.batch_size, buffer_.size());
  Window w;
  for (std::int64_t t = 1; t <= k; ++t) {
    w.add(agent::train_step(learner_, buffer_, plan_.loss, batch, beta, hp.gamma));
    ++pretrain_updates_;
    if (t % hp.target_period == 0) {
      agent::sync_target(learner_.online, learner_.target);
      ++target_syncs_;
    }
    if (t % config_.log_every == 0 || t == k) {
      MetricsRow r = make_row("pretrain", t, beta, w);
      if (t == k && config_.eval_episodes > 0) {
        r.eval_return = evaluate(learner_.online, *env_, config_.eval_episodes, 0.001,
                                 derive_seed(config_.seed, 3))
                            .mean;
      }
      emit(rows, std::move(r));
    }
  }
  return rows;
}

void Trainer::reset_episode() {
  std::tie(state_, obs_) = env_->reset(derive_seed(config_.seed, 1000 + static_cast<std::uint64_t>(episodes_)));
  episode_return_ = 0.0;
}

std::vector<MetricsRow> Trainer::run_online(std::int64_t steps) {
  std::vector<MetricsRow> rows;
  if (steps <= 0) return rows;
  const auto& hp = config_.hp;
  if (learner_.online.shape().obs_dim != env_->spec().obs_dim ||
      learner_.online.shape().n_actions != env_->spec().n_actions) {
    throw DimensionError("network shape does not match env " + env_->spec().id);
  }
  if (env_steps_ == 0 && online_steps_ == 0) reset_episode();
  Window w;
  const std::int64_t last = online_steps_ + steps;
  while (online_steps_ < last) {
    const std::int64_t t = ++online_steps_;
    const std::size_t a = agent::select_action(learner_.online, obs_, hp.epsilon, act_rng_);
    const env::StepResult r = env_->step(state_, a);
    ++env_steps_;
    episode_return_ += r.reward_raw;
    buffer_.add_agent(demo::make_transition(obs_, a, r.reward_raw, r.obs, r.terminal, demo::Source::Agent),
                      r.done());
    state_ = r.state;
    obs_ = r.obs;

    const double beta = buffer_.config().beta_at(t);
    if (buffer_.size() >= hp.batch_size) {
      w.add(agent::train_step(learner_, buffer_, plan_.loss, hp.batch_size, beta, hp.gamma));
    }
    if (t % hp.target_period == 0) {
      agent::sync_target(learner_.online, learner_.target);
      ++target_syncs_;
    }

    double finished_return = std::numeric_limits<double>::quiet_NaN();
    if (r.done()) {
      finished_return = episode_return_;
      episode_returns_.push_back(episode_return_);
      ++episodes_;
      reset_episode();
    }
    if (r.done() || t % config_.log_every == 0 || t == last) {
      MetricsRow row = make_row("online", t, beta, w);
      row.online_return = finished_return;
      if (t == last && config_.eval_episodes > 0) {
        row.eval_return = evaluate(learner_.online, *env_, config_.eval_episodes, 0.001,
                                   derive_seed(config_.seed, 4))
                              .mean;
      }
      emit(rows, std::move(row));
    }
  }
  return rows;
}

std::vector<MetricsRow> Trainer::run() {
  std::vector<MetricsRow> rows;
  if (plan_.pretrain) rows = pretrain(config_.hp.pretrain_steps);
  if (plan_.online) {
    auto online = run_online(config_.steps);
    rows.insert(rows.end(), std::make_move_iterator(online.begin()), std::make_move_iterator(online.end()));
  }
  return rows;
}

RunResult run_variant(const RunConfig& config, const std::vector<demo::Episode>& demos, RunOptions options) {
  Trainer t(config, demos, std::move(options));
  RunResult out;
  out.rows = t.run();
  out.params = t.learner().online;
  out.env_steps = t.env_steps();
  out.episode_returns = t.episode_returns();
  return out;
}

std::vector<demo::Episode> scripted_demos(const std::string& env_id, std::size_t count, std::uint64_t first_seed) {
  const auto e = env::make_env(env_id);
  std::vector<demo::Episode> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(demo::record_scripted(*e, first_seed + i));
  return out;
}

double early_window_mean_return(const std::vector<MetricsRow>& rows, std::int64_t window_end) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.phase != "online" || r.step > window_end || std::isnan(r.online_return)) continue;
    sum += r.online_return;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

std::string run_label(const std::filesystem::path& path) {
  static const std::regex seed_suffix(R"((.*?)[-_](seed|s)\d+$)");
  const std::string stem = path.stem().string();
  std::smatch m;
  if (std::regex_match(stem, m, seed_suffix)) return m[1].str();
  return stem;
}

namespace {

struct Series {
  std::vector<std::int64_t> grid;
  std::map<std::string, std::map<std::int64_t, double>> values;  // metric -> step -> value
  double early = kNaN;
  double final_return = kNaN;
  std::int64_t final_step = 0;
};

Series summarize(const std::vector<MetricsRow>& rows, std::int64_t early_window, std::int64_t grid) {
  Series s;
  s.early = early_window_mean_return(rows, early_window);
  double cum = 0.0;
  std::size_t count = 0;
  std::vector<double> online_returns;
  for (const auto& r : rows) {
    if (r.phase != "online") continue;
    if (!std::isnan(r.online_return)) {
      cum += r.online_return;
      ++count;
      online_returns.push_back(r.online_return);
    }
    if (r.step % grid != 0) continue;
    s.grid.push_back(r.step);
    s.values["demo_ratio"][r.step] = r.demo_ratio;
    s.values["total_loss"][r.step] = r.total;
    s.values["mean_return_to_date"][r.step] = count ? cum / static_cast<double>(count) : kNaN;
  }
  if (!rows.empty()) {
    s.final_step = rows.back().step;
    if (!std::isnan(rows.back().eval_return)) {
      s.final_return = rows.back().eval_return;
    } else if (!online_returns.empty()) {
      const std::size_t k = std::min<std::size_t>(10, online_returns.size());
      double acc = 0.0;
      for (std::size_t i = online_returns.size() - k; i < online_returns.size(); ++i) acc += online_returns[i];
      s.final_return = acc / static_cast<double>(k);
    }
  }
  return s;
}

}  // namespace

std::string compare_report(const std::vector<LabeledRun>& runs, std::int64_t early_window) {
  if (runs.size() < 2) throw ConfigError("compare needs at least two runs");
  constexpr std::int64_t kGrid = 100;
  std::vector<std::string> labels;
  std::map<std::string, std::vector<Series>> groups;
  for (const auto& run : runs) {
    if (!groups.count(run.label)) labels.push_back(run.label);
    groups[run.label].push_back(summarize(run.rows, early_window, kGrid));
  }

  struct Cell {
    double median, min, max;
    std::size_t runs;
  };
  // label -> (metric, step) -> cell, in output order
  std::map<std::string, std::vector<std::pair<std::pair<std::string, std::int64_t>, Cell>>> table;
  auto reduce = [](const std::vector<double>& v) {
    std::vector<double> clean;
    for (double x : v) {
      if (!std::isnan(x)) clean.push_back(x);
    }
    Cell c{median(clean), kNaN, kNaN, clean.size()};
    if (!clean.empty()) {
      c.min = *std::min_element(clean.begin(), clean.end());
      c.max = *std::max_element(clean.begin(), clean.end());
    }
    return c;
  };

  for (const auto& label : labels) {
    const auto& group = groups[label];
    for (std::size_t i = 1; i < group.size(); ++i) {
      if (group[i].grid != group[0].grid) {
        throw AlignmentError("runs labelled '" + label + "' have different step grids");
      }
      if (group[i].final_step != group[0].final_step) {
        throw AlignmentError("runs labelled '" + label + "' end at different steps");
      }
    }
    auto& out = table[label];
    std::vector<double> v;
    for (const auto& s : group) v.push_back(s.early);
    out.push_back({{"early_mean_return", early_window}, reduce(v)});
    v.clear();
    for (const auto& s : group) v.push_back(s.final_return);
    out.push_back({{"final_return", group[0].final_step}, reduce(v)});
    for (const char* metric : {"mean_return_to_date", "demo_ratio", "total_loss"}) {
      for (std::int64_t step : group[0].grid) {
        v.clear();
        for (const auto& s : group) v.push_back(s.values.at(metric).at(step));
        out.push_back({{metric, step}, reduce(v)});
      }
    }
  }

  std::map<std::pair<std::string, std::int64_t>, double> reference;
  for (const auto& [key, cell] : table[labels.front()]) reference[key] = cell.median;

  std::string csv = "label,metric,step,median,min,max,runs,delta\n";
  for (const auto& label : labels) {
    for (const auto& [key, cell] : table[label]) {
      const auto ref = reference.find(key);
      const double delta = ref == reference.end() ? kNaN : cell.median - ref->second;
      csv += label + ',' + key.first + ',' + std::to_string(key.second) + ',' + format_double(cell.median) + ',' +
             format_double(cell.min) + ',' + format_double(cell.max) + ',' + std::to_string(cell.runs) + ',' +
             format_double(delta) + '\n';
    }
  }
  return csv;
}

}  // namespace demoq::train
