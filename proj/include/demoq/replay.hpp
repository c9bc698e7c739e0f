#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <vector>

#include "demoq/demo_store.hpp"

namespace demoq::replay {

// Array-backed complete binary tree over `capacity` leaves; every internal
// node holds the exact floating-point sum of its two children.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  void set(std::size_t slot, double mass);
  double get(std::size_t slot) const { return nodes_[leaves_ + slot]; }
  double total() const { return nodes_[1]; }

  // Slot whose cumulative-mass interval contains u, for u in [0, total()).
  // Never returns a zero-mass slot while total() > 0.
  std::size_t find_prefix(double u) const;

  // Largest |node - (left + right)| over internal nodes.
  double max_inconsistency() const;

 private:
  std::size_t capacity_;
  std::size_t leaves_;          // power of two >= capacity
  std::vector<double> nodes_;   // 1-based heap; leaves at [leaves_, 2*leaves_)
};

struct ReplayConfig {
  std::size_t capacity = 50'000;
  double alpha = 0.4;
  double beta0 = 0.6;
  std::int64_t beta_anneal_steps = 40'000;
  double eps_agent = 0.001;
  double eps_demo = 1.0;
  int n = 10;
  double gamma = 0.99;
  // RBS treats demonstrations as ordinary data: evictable, agent priority constant.
  bool demos_permanent = true;
  bool demo_priority_bonus = true;

  void validate() const;
  // Linear from beta0 at step 0 to 1 at beta_anneal_steps, then held.
  double beta_at(std::int64_t step) const;
};

struct ReplayEntry {
  demo::Transition transition;
  double n_step_reward = 0.0;  // sum_{i < n_actual} gamma^i r_{t+i}, transformed rewards
  env::Observation n_step_next_obs;
  int n_actual = 0;
  bool n_step_terminal = false;  // window closed by a terminal: no bootstrap
  std::uint64_t insertion_index = 0;

  bool is_demo() const { return transition.source == demo::Source::Demo; }
};

// Turns a transition stream into entries with forward-view n-step fields.
// An entry is released once n later rewards are known or its episode ends.
class NStepWindow {
 public:
  NStepWindow(int n, double gamma) : n_(n), gamma_(gamma) {}

  // `episode_end` marks the last transition of an episode (terminal or truncated).
  std::vector<ReplayEntry> push(demo::Transition t, bool episode_end);
  std::size_t pending() const { return pending_.size(); }

 private:
  ReplayEntry make_entry(std::size_t count) const;

  int n_;
  double gamma_;
  std::deque<demo::Transition> pending_;
};

struct Sample {
  std::vector<std::size_t> slots;
  std::vector<double> probabilities;
  std::vector<double> is_weights;  // normalized so the batch max is 1
};

// Counters for the demonstration share of sampled entries.
struct SamplingWindow {
  std::uint64_t drawn = 0;
  std::uint64_t demo_drawn = 0;
  double uniform_demo_expectation = 0.0;  // sum over draws of n_demo / N at draw time
};

struct DemoFraction {
  double fraction = 0.0;  // demo share of draws
  double ratio = 0.0;     // fraction / (n_demo / N)
};

DemoFraction demo_fraction_stats(const SamplingWindow& window);

// Proportional prioritized replay with a demonstration segment.
class PrioritizedReplay {
 public:
  explicit PrioritizedReplay(ReplayConfig config);

  const ReplayConfig& config() const { return config_; }
  std::size_t size() const { return size_; }
  std::size_t demo_count() const { return demo_count_; }
  std::size_t agent_count() const { return size_ - demo_count_; }
  const ReplayEntry& entry(std::size_t slot) const { return entries_[slot]; }
  double priority(std::size_t slot) const { return priorities_[slot]; }
  const SumTree& tree() const { return tree_; }
  // Slots currently holding demonstration entries, ascending.
  std::vector<std::size_t> demo_slots() const;

  // Inserts every demo transition with n-step fields computed within its episode.
  std::size_t seed_demos(const std::vector<demo::Episode>& episodes);

  // Queues an agent transition; entries enter the buffer when their n-step window resolves.
  void add_agent(const demo::Transition& t, bool episode_end);

  Sample sample(std::size_t batch, double beta, std::mt19937_64& rng);

  // p = |delta| + eps_source, stored as p^alpha in the tree.
  void update_priorities(std::span<const std::size_t> slots, std::span<const double> td_errors);

  // Returns and resets the sampling counters.
  SamplingWindow take_window();
  const SamplingWindow& window() const { return window_; }

 private:
  void insert(ReplayEntry entry);
  void set_priority(std::size_t slot, double p);
  double max_priority() const;
  double eps_for(const ReplayEntry& e) const;

  ReplayConfig config_;
  std::vector<ReplayEntry> entries_;
  std::vector<bool> occupied_;
  std::vector<double> priorities_;
  std::vector<double> max_nodes_;  // max-tree over priorities_
  std::size_t max_leaves_;
  SumTree tree_;
  NStepWindow window_builder_;
  std::size_t size_ = 0;
  std::size_t demo_count_ = 0;
  std::size_t ring_begin_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t inserted_ = 0;
  SamplingWindow window_;
};

}  // namespace demoq::replay
