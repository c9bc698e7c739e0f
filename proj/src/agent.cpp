#include "demoq/agent.hpp"

#include <cmath>

#include "demoq/error.hpp"

namespace demoq::agent {

void HyperParams::validate() const {
  replay_config().validate();
  loss_spec().validate();
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (target_period < 1) throw ConfigError("target_period must be >= 1");
  if (pretrain_steps < 0) throw ConfigError("pretrain_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
}

replay::ReplayConfig HyperParams::replay_config() const {
  replay::ReplayConfig c;
  c.capacity = capacity;
  c.alpha = alpha;
  c.beta0 = beta0;
  c.beta_anneal_steps = beta_anneal_steps;
  c.eps_agent = eps_agent;
  c.eps_demo = eps_demo;
  c.n = n;
  c.gamma = gamma;
  return c;
}

nn::LossSpec HyperParams::loss_spec() const {
  nn::LossSpec s;
  s.lambda_n = lambda_n;
  s.lambda_e = lambda_e;
  s.lambda_l2 = lambda_l2;
  s.margin = margin;
  s.gamma = gamma;
  s.n = n;
  return s;
}

std::size_t epsilon_greedy(std::span<const double> q_row, double epsilon, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (epsilon > 0.0 && unit(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, q_row.size() - 1);
    return pick(rng);
  }
  return argmax(q_row);
}

std::size_t select_action(const NetParams& params, std::span<const double> obs, double epsilon,
                          std::mt19937_64& rng) {
  nn::Matrix x(1, obs.size());
  std::copy(obs.begin(), obs.end(), x.data.begin());
  const nn::Matrix q = nn::forward(params, x);
  return epsilon_greedy(q.row(0), epsilon, rng);
}

double double_q_target(double reward, bool terminal, double gamma, std::span<const double> q_next_online,
                       std::span<const double> q_next_target) {
  if (terminal) return reward;
  return reward + gamma * q_next_target[argmax(q_next_online)];
}

double n_step_target(double n_step_reward, int n_actual, bool terminal, double gamma,
                     std::span<const double> q_online, std::span<const double> q_target) {
  if (terminal) return n_step_reward;
  return n_step_reward + std::pow(gamma, n_actual) * q_target[argmax(q_online)];
}

namespace {

nn::Matrix single_row(const env::Observation& obs) {
  nn::Matrix x(1, obs.size());
  std::copy(obs.begin(), obs.end(), x.data.begin());
  return x;
}

}  // namespace

double double_q_target(const replay::ReplayEntry& e, const NetParams& online, const NetParams& target,
                       double gamma) {
  const auto& t = e.transition;
  if (t.done) return t.reward;
  const nn::Matrix x = single_row(t.next_obs);
  const nn::Matrix qo = nn::forward(online, x);
  const nn::Matrix qt = nn::forward(target, x);
  return double_q_target(t.reward, false, gamma, qo.row(0), qt.row(0));
}

double n_step_target(const replay::ReplayEntry& e, const NetParams& online, const NetParams& target, double gamma) {
  if (e.n_step_terminal) return e.n_step_reward;
  const nn::Matrix x = single_row(e.n_step_next_obs);
  const nn::Matrix qo = nn::forward(online, x);
  const nn::Matrix qt = nn::forward(target, x);
  return n_step_target(e.n_step_reward, e.n_actual, false, gamma, qo.row(0), qt.row(0));
}

nn::LossInputs build_loss_inputs(const replay::PrioritizedReplay& buffer, const replay::Sample& sample,
                                 const NetParams& online, const NetParams& target, double gamma) {
  const std::size_t b = sample.slots.size();
  const std::size_t d = online.shape().obs_dim;
  nn::LossInputs in;
  in.obs = nn::Matrix(b, d);
  in.actions.resize(b);
  in.target_1.resize(b);
  in.target_n.resize(b);
  in.is_weight = sample.is_weights;
  in.expert.resize(b);

  // Rows [0, b) hold s', rows [b, 2b) hold s_{t+n}; one forward per network.
  nn::Matrix next(2 * b, d);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& e = buffer.entry(sample.slots[i]);
    const auto& t = e.transition;
    if (t.obs.size() != d) throw DimensionError("replay entry observation width mismatch");
    std::copy(t.obs.begin(), t.obs.end(), in.obs.row(i).begin());
    std::copy(t.next_obs.begin(), t.next_obs.end(), next.row(i).begin());
    std::copy(e.n_step_next_obs.begin(), e.n_step_next_obs.end(), next.row(b + i).begin());
    in.actions[i] = t.action;
    in.expert[i] = e.is_demo();
  }
  const nn::Matrix q_online = nn::forward(online, next);
  const nn::Matrix q_target = nn::forward(target, next);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& e = buffer.entry(sample.slots[i]);
    const auto& t = e.transition;
    in.target_1[i] = double_q_target(t.reward, t.done, gamma, q_online.row(i), q_target.row(i));
    in.target_n[i] = n_step_target(e.n_step_reward, e.n_actual, e.n_step_terminal, gamma, q_online.row(b + i),
                                   q_target.row(b + i));
  }
  return in;
}

LossBreakdown compute_loss(const nn::LossInputs& batch, const NetParams& online, const nn::LossSpec& spec) {
  return nn::evaluate_loss(online, spec, batch);
}

void sync_target(const NetParams& online, NetParams& target) { target = online; }

Learner Learner::create(const nn::NetShape& shape, double lr, std::uint64_t seed) {
  std::mt19937_64 seeder(seed);
  const std::uint64_t net_seed = seeder();
  const std::uint64_t rng_seed = seeder();
  Learner l{NetParams::initialize(shape, net_seed), {}, {}, std::mt19937_64(rng_seed)};
  l.target = l.online;
  l.opt = nn::OptState::for_params(l.online, lr);
  return l;
}

LossBreakdown train_step(Learner& learner, replay::PrioritizedReplay& buffer, const nn::LossSpec& spec,
                         std::size_t batch_size, double beta, double gamma) {
  const replay::Sample sample = buffer.sample(batch_size, beta, learner.rng);
  const nn::LossInputs batch = build_loss_inputs(buffer, sample, learner.online, learner.target, gamma);
  nn::Gradient g = nn::backward(learner.online, spec, batch);
  nn::adam_step(learner.online, g.grads, learner.opt);
  buffer.update_priorities(sample.slots, g.loss.td_errors);
  return std::move(g.loss);
}

}  // namespace demoq::agent
