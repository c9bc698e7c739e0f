#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "demoq/losses.hpp"
#include "demoq/net.hpp"
#include "demoq/replay.hpp"

namespace demoq::agent {

using nn::LossBreakdown;
using nn::NetParams;

// Defaults follow the published hyperparameter list except where marked
// desk-scale (pretrain_steps, target_period, capacity, beta_anneal_steps) and
// the optimizer settings, which were never published.
struct HyperParams {
  double gamma = 0.99;
  int n = 10;
  double margin = 0.8;
  double lambda_n = 1.0;    // n-step return weight
  double lambda_e = 1.0;    // supervised loss weight
  double lambda_l2 = 1e-5;  // L2 weight
  double epsilon = 0.01;    // behaviour policy exploration
  double alpha = 0.4;
  double beta0 = 0.6;
  double eps_agent = 0.001;
  double eps_demo = 1.0;
  std::int64_t target_period = 500;         // desk-scale (published: 10,000)
  std::int64_t pretrain_steps = 5'000;      // desk-scale (published: 750,000)
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t capacity = 50'000;            // desk-scale
  std::int64_t beta_anneal_steps = 40'000;  // desk-scale
  std::size_t hidden = 64;

  void validate() const;
  replay::ReplayConfig replay_config() const;
  nn::LossSpec loss_spec() const;
};

// epsilon-greedy over Q(s, . ; params); greedy ties go to the lowest index.
std::size_t select_action(const NetParams& params, std::span<const double> obs, double epsilon,
                          std::mt19937_64& rng);
// Same rule over a precomputed Q row.
std::size_t epsilon_greedy(std::span<const double> q_row, double epsilon, std::mt19937_64& rng);

// r + gamma * Q(s', argmax_a Q(s',a; online); target), or r when terminal.
double double_q_target(double reward, bool terminal, double gamma, std::span<const double> q_next_online,
                       std::span<const double> q_next_target);

// R_n + gamma^n_actual * Q(s_{t+n}, argmax_a Q(s_{t+n},a; online); target); no bootstrap when terminal.
double n_step_target(double n_step_reward, int n_actual, bool terminal, double gamma,
                     std::span<const double> q_online, std::span<const double> q_target);

double double_q_target(const replay::ReplayEntry& e, const NetParams& online, const NetParams& target,
                       double gamma);
double n_step_target(const replay::ReplayEntry& e, const NetParams& online, const NetParams& target, double gamma);

using demoq::margin_loss;

// Builds the loss batch for sampled slots: targets from (online, target) with
// no gradient, expert flag from the entry source.
nn::LossInputs build_loss_inputs(const replay::PrioritizedReplay& buffer, const replay::Sample& sample,
                                 const NetParams& online, const NetParams& target, double gamma);

LossBreakdown compute_loss(const nn::LossInputs& batch, const NetParams& online, const nn::LossSpec& spec);

void sync_target(const NetParams& online, NetParams& target);

// Mutable learner state owned by one training loop.
struct Learner {
  NetParams online;
  NetParams target;
  nn::OptState opt;
  std::mt19937_64 rng;

  static Learner create(const nn::NetShape& shape, double lr, std::uint64_t seed);
};

// One prioritized update: sample, loss, Adam step, priority refresh.
LossBreakdown train_step(Learner& learner, replay::PrioritizedReplay& buffer, const nn::LossSpec& spec,
                         std::size_t batch_size, double beta, double gamma);

}  // namespace demoq::agent
