#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the network or loss code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <queue>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "demoq/envs.hpp"
#include "demoq/net.hpp"

namespace oracle {

using demoq::nn::LossInputs;
using demoq::nn::LossSpec;
using demoq::nn::NetParams;
using demoq::nn::Tensor;

// Q rows by plain loops over the flat parameter vector.
inline std::vector<std::vector<double>> naive_q(const NetParams& p, const demoq::nn::Matrix& obs) {
  const auto& s = p.shape();
  auto layer = [&](Tensor wt, Tensor bt, const std::vector<double>& x, std::size_t in, std::size_t out, bool relu) {
    const auto w = p.tensor(wt);
    const auto b = p.tensor(bt);
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
      y[o] = relu ? std::max(acc, 0.0) : acc;
    }
    return y;
  };
  std::vector<std::vector<double>> q;
  for (std::size_t r = 0; r < obs.rows; ++r) {
    std::vector<double> x(obs.row(r).begin(), obs.row(r).end());
    const auto h1 = layer(Tensor::Fc1Weight, Tensor::Fc1Bias, x, s.obs_dim, s.hidden1, true);
    const auto h2 = layer(Tensor::Fc2Weight, Tensor::Fc2Bias, h1, s.hidden1, s.hidden2, true);
    const double v = layer(Tensor::ValueWeight, Tensor::ValueBias, h2, s.hidden2, 1, false)[0];
    const auto adv = layer(Tensor::AdvWeight, Tensor::AdvBias, h2, s.hidden2, s.n_actions, false);
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    std::vector<double> row;
    for (double a : adv) row.push_back(v + a - mean);
    q.push_back(row);
  }
  return q;
}

// The full objective, written out term by term.
inline double naive_objective(const NetParams& p, const LossSpec& spec, const LossInputs& in) {
  const auto q = naive_q(p, in.obs);
  const double b = static_cast<double>(in.actions.size());
  double j_dq = 0.0, j_n = 0.0, j_e = 0.0, j_l2 = 0.0;
  for (std::size_t i = 0; i < in.actions.size(); ++i) {
    const std::size_t a = in.actions[i];
    const double qa = q[i][a];
    j_dq += in.is_weight[i] * (in.target_1[i] - qa) * (in.target_1[i] - qa) / b;
    j_n += in.is_weight[i] * (in.target_n[i] - qa) * (in.target_n[i] - qa) / b;
    if (!in.expert[i]) continue;
    if (spec.supervised == demoq::nn::SupervisedLoss::LargeMargin) {
      double best = -1e300;
      for (std::size_t c = 0; c < q[i].size(); ++c) best = std::max(best, q[i][c] + (c == a ? 0.0 : spec.margin));
      j_e += (best - qa) / b;
    } else {
      double z = 0.0;
      for (double v : q[i]) z += std::exp(v);
      j_e += (std::log(z) - qa) / b;
    }
  }
  for (double v : p.values()) j_l2 += v * v;
  return (spec.td ? j_dq : 0.0) + spec.lambda_n * j_n + spec.lambda_e * j_e + spec.lambda_l2 * j_l2;
}

struct Draw {
  NetParams params;
  LossInputs batch;
};

// Random small net and batch with every flag exercised.
inline Draw random_draw(std::uint64_t seed, std::size_t obs_dim = 4, std::size_t n_actions = 3, std::size_t batch = 5,
                        std::size_t hidden = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Draw d{NetParams::initialize({obs_dim, n_actions, hidden, hidden}, seed ^ 0x5eed), {}};
  for (double& v : d.params.values()) v += 0.3 * u(rng);  // push biases off zero
  auto& in = d.batch;
  in.obs = demoq::nn::Matrix(batch, obs_dim);
  for (double& v : in.obs.data) v = u(rng);
  std::uniform_int_distribution<std::size_t> act(0, n_actions - 1);
  for (std::size_t i = 0; i < batch; ++i) {
    in.actions.push_back(act(rng));
    in.target_1.push_back(2.0 * u(rng));
    in.target_n.push_back(2.0 * u(rng));
    in.is_weight.push_back(0.5 + 0.5 * std::fabs(u(rng)));
    in.expert.push_back(i % 2 == 0);
  }
  return d;
}

// Central differences of naive_objective for every parameter.
inline std::vector<double> fd_gradient(const NetParams& p, const LossSpec& spec, const LossInputs& in, double h) {
  NetParams probe = p;
  std::vector<double> g(p.values().size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = probe.values()[i];
    probe.values()[i] = keep + h;
    const double up = naive_objective(probe, spec, in);
    probe.values()[i] = keep - h;
    const double down = naive_objective(probe, spec, in);
    probe.values()[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Tabular value iteration over the states reachable from every start cell,
// ignoring the step counter. Returns the raw return of the resulting greedy
// policy rolled out from reset(seed).
class ValueIteration {
 public:
  ValueIteration(const demoq::env::Env& env, double gamma, int sweeps = 2000) : env_(env) {
    std::queue<demoq::env::EnvState> frontier;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      auto s = env.reset(seed).first;
      s.steps = 0;
      s.seed = 0;
      if (index_.emplace(key(s), states_.size()).second) {
        states_.push_back(s);
        frontier.push(s);
      }
    }
    const std::size_t na = env.spec().n_actions;
    while (!frontier.empty()) {
      const auto s = frontier.front();
      frontier.pop();
      for (std::size_t a = 0; a < na; ++a) {
        const auto r = env.step(s, a);
        if (r.terminal) continue;
        auto next = r.state;
        next.steps = 0;
        next.seed = 0;
        if (index_.emplace(key(next), states_.size()).second) {
          states_.push_back(next);
          frontier.push(next);
        }
      }
    }
    values_.assign(states_.size(), 0.0);
    for (int it = 0; it < sweeps; ++it) {
      double delta = 0.0;
      for (std::size_t i = 0; i < states_.size(); ++i) {
        double best = -1e300;
        for (std::size_t a = 0; a < na; ++a) best = std::max(best, backup(states_[i], a, gamma));
        delta = std::max(delta, std::fabs(best - values_[i]));
        values_[i] = best;
      }
      if (delta < 1e-12) break;
    }
    gamma_ = gamma;
  }

  std::size_t greedy(const demoq::env::EnvState& s) const {
    std::size_t best_a = 0;
    double best = -1e300;
    for (std::size_t a = 0; a < env_.spec().n_actions; ++a) {
      const double v = backup(s, a, gamma_);
      if (v > best + 1e-12) {
        best = v;
        best_a = a;
      }
    }
    return best_a;
  }

  double optimal_return(std::uint64_t seed) const {
    auto [s, obs] = env_.reset(seed);
    double ret = 0.0;
    for (;;) {
      const auto r = env_.step(s, greedy(s));
      ret += r.reward_raw;
      s = r.state;
      if (r.done()) return ret;
    }
  }

  std::size_t state_count() const { return states_.size(); }

 private:
  using Key = std::tuple<int, int, bool, bool>;
  static Key key(const demoq::env::EnvState& s) { return {s.row, s.col, s.key, s.door}; }

  double backup(demoq::env::EnvState s, std::size_t a, double gamma) const {
    s.steps = 0;
    const auto r = env_.step(s, a);
    if (r.terminal) return r.reward_raw;
    auto next = r.state;
    next.steps = 0;
    next.seed = 0;
    return r.reward_raw + gamma * values_[index_.at(key(next))];
  }

  const demoq::env::Env& env_;
  std::vector<demoq::env::EnvState> states_;
  std::map<Key, std::size_t> index_;
  std::vector<double> values_;
  double gamma_ = 0.99;
};

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "demoq-tests";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace oracle
