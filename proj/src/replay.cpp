#include "demoq/replay.hpp"

#include <algorithm>
#include <cmath>

#include "demoq/error.hpp"

namespace demoq::replay {

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

SumTree::SumTree(std::size_t capacity)
    : capacity_(capacity), leaves_(next_pow2(std::max<std::size_t>(capacity, 1))), nodes_(2 * leaves_, 0.0) {}

void SumTree::set(std::size_t slot, double mass) {
  if (slot >= capacity_) throw SizeError("sum tree slot out of range");
  std::size_t i = leaves_ + slot;
  nodes_[i] = mass;
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find_prefix(double u) const {
  std::size_t i = 1;
  while (i < leaves_) {
    const double left = nodes_[2 * i];
    const double right = nodes_[2 * i + 1];
    if ((u < left && left > 0.0) || right <= 0.0) {
      i = 2 * i;
    } else {
      u -= left;
      i = 2 * i + 1;
    }
  }
  return i - leaves_;
}

double SumTree::max_inconsistency() const {
  double worst = 0.0;
  for (std::size_t i = 1; i < leaves_; ++i) {
    worst = std::max(worst, std::fabs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])));
  }
  return worst;
}

void ReplayConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta0 > 0.0 && beta0 <= 1.0)) throw ConfigError("beta0 must lie in (0, 1]");
  if (!(eps_agent > 0.0) || !(eps_demo > 0.0)) throw ConfigError("priority constants must be > 0");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
  if (beta_anneal_steps < 0) throw ConfigError("beta_anneal_steps must be >= 0");
}

double ReplayConfig::beta_at(std::int64_t step) const {
  if (step <= 0) return beta0;
  if (step >= beta_anneal_steps) return 1.0;
  return beta0 + (1.0 - beta0) * static_cast<double>(step) / static_cast<double>(beta_anneal_steps);
}

ReplayEntry NStepWindow::make_entry(std::size_t count) const {
  ReplayEntry e;
  e.transition = pending_.front();
  double discount = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    e.n_step_reward += discount * pending_[i].reward;
    discount *= gamma_;
  }
  e.n_actual = static_cast<int>(count);
  e.n_step_next_obs = pending_[count - 1].next_obs;
  e.n_step_terminal = pending_[count - 1].done;
  return e;
}

std::vector<ReplayEntry> NStepWindow::push(demo::Transition t, bool episode_end) {
  std::vector<ReplayEntry> out;
  const bool closes = episode_end || t.done;
  pending_.push_back(std::move(t));
  if (closes) {
    while (!pending_.empty()) {
      out.push_back(make_entry(pending_.size()));
      pending_.pop_front();
    }
  } else if (pending_.size() == static_cast<std::size_t>(n_)) {
    out.push_back(make_entry(pending_.size()));
    pending_.pop_front();
  }
  return out;
}

DemoFraction demo_fraction_stats(const SamplingWindow& w) {
  if (w.drawn == 0) throw SizeError("no samples drawn in window");
  DemoFraction f;
  f.fraction = static_cast<double>(w.demo_drawn) / static_cast<double>(w.drawn);
  f.ratio = w.uniform_demo_expectation > 0.0 ? static_cast<double>(w.demo_drawn) / w.uniform_demo_expectation : 0.0;
  return f;
}

PrioritizedReplay::PrioritizedReplay(ReplayConfig config)
    : config_(config),
      entries_(config.capacity),
      occupied_(config.capacity, false),
      priorities_(config.capacity, 0.0),
      max_leaves_(next_pow2(std::max<std::size_t>(config.capacity, 1))),
      tree_(config.capacity),
      window_builder_(config.n, config.gamma) {
  config_.validate();
  max_nodes_.assign(2 * max_leaves_, 0.0);
}

std::vector<std::size_t> PrioritizedReplay::demo_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (occupied_[i] && entries_[i].is_demo()) out.push_back(i);
  }
  return out;
}

double PrioritizedReplay::eps_for(const ReplayEntry& e) const {
  return e.is_demo() && config_.demo_priority_bonus ? config_.eps_demo : config_.eps_agent;
}

double PrioritizedReplay::max_priority() const { return size_ == 0 ? 1.0 : max_nodes_[1]; }

void PrioritizedReplay::set_priority(std::size_t slot, double p) {
  priorities_[slot] = p;
  tree_.set(slot, p > 0.0 ? std::pow(p, config_.alpha) : 0.0);
  std::size_t i = max_leaves_ + slot;
  max_nodes_[i] = p;
  for (i >>= 1; i >= 1; i >>= 1) max_nodes_[i] = std::max(max_nodes_[2 * i], max_nodes_[2 * i + 1]);
}

std::size_t PrioritizedReplay::seed_demos(const std::vector<demo::Episode>& episodes) {
  if (size_ != 0) throw ConfigError("demonstrations must be seeded into an empty buffer");
  std::size_t total = 0;
  for (const auto& ep : episodes) total += ep.transitions.size();
  if (total >= config_.capacity) {
    throw ConfigError("capacity " + std::to_string(config_.capacity) + " must exceed demonstration count " +
                      std::to_string(total));
  }
  for (const auto& ep : episodes) {
    NStepWindow builder(config_.n, config_.gamma);
    for (std::size_t i = 0; i < ep.transitions.size(); ++i) {
      demo::Transition t = ep.transitions[i];
      t.source = demo::Source::Demo;
      for (auto& e : builder.push(std::move(t), i + 1 == ep.transitions.size())) {
        const double p = max_priority();
        const std::size_t slot = size_;
        e.insertion_index = inserted_++;
        entries_[slot] = std::move(e);
        occupied_[slot] = true;
        ++size_;
        ++demo_count_;
        set_priority(slot, p);
      }
    }
  }
  ring_begin_ = config_.demos_permanent ? demo_count_ : 0;
  cursor_ = demo_count_;
  return total;
}

void PrioritizedReplay::insert(ReplayEntry entry) {
  if (config_.demos_permanent && demo_count_ >= config_.capacity) {
    throw ConfigError("buffer holds only demonstrations; capacity must exceed demo count");
  }
  const double p = max_priority();
  const std::size_t slot = cursor_;
  if (occupied_[slot]) {
    if (entries_[slot].is_demo()) --demo_count_;
    --size_;
  }
  entry.insertion_index = inserted_++;
  entries_[slot] = std::move(entry);
  occupied_[slot] = true;
  ++size_;
  set_priority(slot, p);
  cursor_ = cursor_ + 1 == config_.capacity ? ring_begin_ : cursor_ + 1;
}

void PrioritizedReplay::add_agent(const demo::Transition& t, bool episode_end) {
  demo::Transition copy = t;
  copy.source = demo::Source::Agent;
  for (auto& e : window_builder_.push(std::move(copy), episode_end)) insert(std::move(e));
}

Sample PrioritizedReplay::sample(std::size_t batch, double beta, std::mt19937_64& rng) {
  if (batch == 0) throw SizeError("batch size must be >= 1");
  if (batch > size_) {
    throw SizeError("batch " + std::to_string(batch) + " exceeds entry count " + std::to_string(size_));
  }
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double n = static_cast<double>(size_);

  Sample s;
  s.slots.reserve(batch);
  s.probabilities.reserve(batch);
  s.is_weights.reserve(batch);
  double max_w = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double u = (static_cast<double>(i) + unit(rng)) * segment;
    if (u >= total) u = std::nextafter(total, 0.0);
    const std::size_t slot = tree_.find_prefix(u);
    const double prob = tree_.get(slot) / total;
    const double w = std::pow(n * prob, -beta);
    s.slots.push_back(slot);
    s.probabilities.push_back(prob);
    s.is_weights.push_back(w);
    max_w = std::max(max_w, w);
    if (entries_[slot].is_demo()) ++window_.demo_drawn;
  }
  for (double& w : s.is_weights) w /= max_w;
  window_.drawn += batch;
  window_.uniform_demo_expectation += static_cast<double>(batch) * static_cast<double>(demo_count_) / n;
  return s;
}

void PrioritizedReplay::update_priorities(std::span<const std::size_t> slots, std::span<const double> td_errors) {
  if (slots.size() != td_errors.size()) throw SizeError("slots and td_errors differ in length");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::size_t slot = slots[i];
    if (slot >= config_.capacity || !occupied_[slot]) throw SizeError("priority update for an empty slot");
    set_priority(slot, std::fabs(td_errors[i]) + eps_for(entries_[slot]));
  }
}

SamplingWindow PrioritizedReplay::take_window() {
  SamplingWindow w = window_;
  window_ = {};
  return w;
}

}  // namespace demoq::replay
