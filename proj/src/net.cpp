#include "demoq/net.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "demoq/error.hpp"
#include "demoq/kernels.hpp"
#include "demoq/losses.hpp"

namespace demoq::nn {

namespace k = kernels::parallel;

void NetShape::validate() const {
  if (obs_dim < 1) throw DimensionError("obs_dim must be >= 1");
  if (n_actions < 2) throw DimensionError("n_actions must be >= 2");
  if (hidden1 < 1 || hidden2 < 1) throw DimensionError("hidden widths must be >= 1");
}

std::vector<TensorSlot> tensor_slots(const NetShape& s) {
  std::vector<TensorSlot> slots = {
      {Tensor::Fc1Weight, "fc1.weight", s.hidden1, s.obs_dim, 0},
      {Tensor::Fc1Bias, "fc1.bias", s.hidden1, 1, 0},
      {Tensor::Fc2Weight, "fc2.weight", s.hidden2, s.hidden1, 0},
      {Tensor::Fc2Bias, "fc2.bias", s.hidden2, 1, 0},
      {Tensor::ValueWeight, "value.weight", 1, s.hidden2, 0},
      {Tensor::ValueBias, "value.bias", 1, 1, 0},
      {Tensor::AdvWeight, "advantage.weight", s.n_actions, s.hidden2, 0},
      {Tensor::AdvBias, "advantage.bias", s.n_actions, 1, 0},
  };
  std::size_t offset = 0;
  for (auto& slot : slots) {
    slot.offset = offset;
    offset += slot.size();
  }
  return slots;
}

std::size_t NetShape::param_count() const {
  const auto slots = tensor_slots(*this);
  return slots.back().offset + slots.back().size();
}

NetParams::NetParams(NetShape shape) : shape_(shape) {
  shape_.validate();
  for (const auto& slot : tensor_slots(shape_)) offsets_.push_back(slot.offset);
  values_.assign(shape_.param_count(), 0.0);
}

NetParams NetParams::initialize(NetShape shape, std::uint64_t seed) {
  NetParams p(shape);
  std::mt19937_64 rng(seed);
  for (const auto& slot : tensor_slots(p.shape_)) {
    const std::size_t fan_in = (slot.id == Tensor::Fc1Weight || slot.id == Tensor::Fc1Bias) ? shape.obs_dim
                               : (slot.id == Tensor::Fc2Weight || slot.id == Tensor::Fc2Bias)
                                   ? shape.hidden1
                                   : shape.hidden2;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto t = p.tensor(slot.id);
    for (double& w : t) w = dist(rng);
  }
  return p;
}

std::span<double> NetParams::tensor(Tensor t) {
  const auto i = static_cast<std::size_t>(t);
  const std::size_t end = i + 1 < offsets_.size() ? offsets_[i + 1] : values_.size();
  return std::span<double>(values_).subspan(offsets_[i], end - offsets_[i]);
}

std::span<const double> NetParams::tensor(Tensor t) const {
  const auto i = static_cast<std::size_t>(t);
  const std::size_t end = i + 1 < offsets_.size() ? offsets_[i + 1] : values_.size();
  return std::span<const double>(values_).subspan(offsets_[i], end - offsets_[i]);
}

bool NetParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> dueling_aggregate(double value, std::span<const double> advantages) {
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(advantages.size());
  std::vector<double> q(advantages.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = value + (advantages[i] - mean);
  return q;
}

ForwardTrace forward_trace(const NetParams& params, const Matrix& obs) {
  const NetShape& s = params.shape();
  if (obs.cols != s.obs_dim) {
    throw DimensionError("observation width " + std::to_string(obs.cols) + " != obs_dim " +
                         std::to_string(s.obs_dim));
  }
  if (obs.rows < 1) throw DimensionError("empty observation batch");
  const std::size_t b = obs.rows;

  ForwardTrace t;
  t.hidden1 = Matrix(b, s.hidden1);
  k::dense_forward({b, s.obs_dim, s.hidden1}, obs.data, params.tensor(Tensor::Fc1Weight),
                   params.tensor(Tensor::Fc1Bias), t.hidden1.data);
  k::relu_inplace(t.hidden1.data);

  t.hidden2 = Matrix(b, s.hidden2);
  k::dense_forward({b, s.hidden1, s.hidden2}, t.hidden1.data, params.tensor(Tensor::Fc2Weight),
                   params.tensor(Tensor::Fc2Bias), t.hidden2.data);
  k::relu_inplace(t.hidden2.data);

  t.value.assign(b, 0.0);
  k::dense_forward({b, s.hidden2, 1}, t.hidden2.data, params.tensor(Tensor::ValueWeight),
                   params.tensor(Tensor::ValueBias), t.value);

  t.advantage = Matrix(b, s.n_actions);
  k::dense_forward({b, s.hidden2, s.n_actions}, t.hidden2.data, params.tensor(Tensor::AdvWeight),
                   params.tensor(Tensor::AdvBias), t.advantage.data);

  t.q = Matrix(b, s.n_actions);
  for (std::size_t r = 0; r < b; ++r) {
    const auto q = dueling_aggregate(t.value[r], t.advantage.row(r));
    std::copy(q.begin(), q.end(), t.q.row(r).begin());
  }
  return t;
}

Matrix forward(const NetParams& params, const Matrix& obs) { return forward_trace(params, obs).q; }

void LossSpec::validate() const {
  if (lambda_n < 0 || lambda_e < 0 || lambda_l2 < 0) throw ConfigError("loss weights must be >= 0");
  if (margin < 0) throw ConfigError("margin must be >= 0");
  if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must lie in (0, 1]");
  if (n < 1) throw ConfigError("n must be >= 1");
}

void LossInputs::validate(const NetShape& shape) const {
  const std::size_t b = actions.size();
  if (b == 0) throw DimensionError("empty loss batch");
  if (obs.rows != b || target_1.size() != b || target_n.size() != b || is_weight.size() != b ||
      expert.size() != b) {
    throw DimensionError("loss batch fields have inconsistent lengths");
  }
  if (obs.cols != shape.obs_dim) throw DimensionError("loss batch observation width mismatch");
  for (std::size_t a : actions) {
    if (a >= shape.n_actions) throw DimensionError("action index out of range");
  }
}

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericalError(term, std::string("non-finite loss term ") + term);
}

// Computes the breakdown and, when `dq` is non-null, dJ/dQ (excluding L2).
LossBreakdown loss_and_dq(const NetParams& params, const LossSpec& spec, const LossInputs& batch,
                          const Matrix& q, Matrix* dq) {
  const std::size_t b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  LossBreakdown out;
  out.td_errors.resize(b);
  out.supervised_applied.resize(b);

  for (std::size_t i = 0; i < b; ++i) {
    const auto row = q.row(i);
    const std::size_t a = batch.actions[i];
    const double w = batch.is_weight[i];
    const double d1 = batch.target_1[i] - row[a];
    const double dn = batch.target_n[i] - row[a];
    out.td_errors[i] = d1;

    if (spec.td) out.j_dq += w * d1 * d1 * inv_b;
    if (spec.lambda_n > 0) out.j_n += w * dn * dn * inv_b;

    const bool supervised = batch.expert[i] && spec.lambda_e > 0;
    out.supervised_applied[i] = supervised;
    double sup = 0.0;
    if (supervised) {
      sup = spec.supervised == SupervisedLoss::LargeMargin ? margin_loss(row, a, spec.margin)
                                                           : softmax_cross_entropy(row, a);
      out.j_e += sup * inv_b;
    }

    if (dq) {
      auto g = dq->row(i);
      double ga = 0.0;
      if (spec.td) ga += -2.0 * w * d1 * inv_b;
      if (spec.lambda_n > 0) ga += spec.lambda_n * -2.0 * w * dn * inv_b;
      g[a] += ga;
      if (supervised) {
        const double scale = spec.lambda_e * inv_b;
        if (spec.supervised == SupervisedLoss::LargeMargin) {
          g[margin_argmax(row, a, spec.margin)] += scale;
          g[a] -= scale;
        } else {
          const double peak = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (double v : row) z += std::exp(v - peak);
          for (std::size_t c = 0; c < row.size(); ++c) g[c] += scale * std::exp(row[c] - peak) / z;
          g[a] -= scale;
        }
      }
    }
  }

  out.j_l2 = spec.lambda_l2 > 0 ? l2_penalty(params) : 0.0;
  require_finite(out.j_dq, "j_dq");
  require_finite(out.j_n, "j_n");
  require_finite(out.j_e, "j_e");
  require_finite(out.j_l2, "j_l2");
  out.total = out.j_dq + spec.lambda_n * out.j_n + spec.lambda_e * out.j_e + spec.lambda_l2 * out.j_l2;
  require_finite(out.total, "total");
  return out;
}

}  // namespace

LossBreakdown evaluate_loss(const NetParams& params, const LossSpec& spec, const LossInputs& batch) {
  spec.validate();
  batch.validate(params.shape());
  const Matrix q = forward(params, batch.obs);
  return loss_and_dq(params, spec, batch, q, nullptr);
}

Gradient backward(const NetParams& params, const LossSpec& spec, const LossInputs& batch) {
  spec.validate();
  const NetShape& s = params.shape();
  batch.validate(s);
  const std::size_t b = batch.size();
  const std::size_t na = s.n_actions;

  const ForwardTrace t = forward_trace(params, batch.obs);
  Matrix dq(b, na);
  Gradient out{loss_and_dq(params, spec, batch, t.q, &dq), NetParams(s)};
  NetParams& g = out.grads;

  // Dueling head: dV = sum_a dQ_a, dA_a = dQ_a - mean(dQ).
  std::vector<double> dv(b, 0.0);
  Matrix dadv(b, na);
  for (std::size_t r = 0; r < b; ++r) {
    double sum = 0.0;
    for (double v : dq.row(r)) sum += v;
    dv[r] = sum;
    const double mean = sum / static_cast<double>(na);
    for (std::size_t a = 0; a < na; ++a) dadv(r, a) = dq(r, a) - mean;
  }

  k::dense_backward_params({b, s.hidden2, 1}, t.hidden2.data, dv, g.tensor(Tensor::ValueWeight),
                           g.tensor(Tensor::ValueBias));
  k::dense_backward_params({b, s.hidden2, na}, t.hidden2.data, dadv.data, g.tensor(Tensor::AdvWeight),
                           g.tensor(Tensor::AdvBias));

  Matrix dh2(b, s.hidden2);
  Matrix tmp(b, s.hidden2);
  k::dense_backward_input({b, s.hidden2, 1}, params.tensor(Tensor::ValueWeight), dv, dh2.data);
  k::dense_backward_input({b, s.hidden2, na}, params.tensor(Tensor::AdvWeight), dadv.data, tmp.data);
  for (std::size_t i = 0; i < dh2.data.size(); ++i) {
    dh2.data[i] = t.hidden2.data[i] > 0.0 ? dh2.data[i] + tmp.data[i] : 0.0;
  }

  k::dense_backward_params({b, s.hidden1, s.hidden2}, t.hidden1.data, dh2.data, g.tensor(Tensor::Fc2Weight),
                           g.tensor(Tensor::Fc2Bias));
  Matrix dh1(b, s.hidden1);
  k::dense_backward_input({b, s.hidden1, s.hidden2}, params.tensor(Tensor::Fc2Weight), dh2.data, dh1.data);
  for (std::size_t i = 0; i < dh1.data.size(); ++i) {
    if (!(t.hidden1.data[i] > 0.0)) dh1.data[i] = 0.0;
  }
  k::dense_backward_params({b, s.obs_dim, s.hidden1}, batch.obs.data, dh1.data, g.tensor(Tensor::Fc1Weight),
                           g.tensor(Tensor::Fc1Bias));

  if (spec.lambda_l2 > 0) {
    const auto theta = params.values();
    auto grad = g.values();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += 2.0 * spec.lambda_l2 * theta[i];
  }
  if (!g.all_finite()) throw NumericalError("gradient", "non-finite gradient");
  return out;
}

double l2_penalty(const NetParams& params) {
  double acc = 0.0;
  for (double v : params.values()) acc += v * v;
  return acc;
}

OptState OptState::for_params(const NetParams& params, double lr) {
  OptState s;
  s.m.assign(params.values().size(), 0.0);
  s.v.assign(params.values().size(), 0.0);
  s.lr = lr;
  return s;
}

void adam_step(NetParams& params, const NetParams& grads, OptState& opt) {
  auto theta = params.values();
  const auto g = grads.values();
  if (g.size() != theta.size() || opt.m.size() != theta.size() || opt.v.size() != theta.size()) {
    throw DimensionError("adam_step: shape mismatch");
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    const double m_hat = opt.m[i] / c1;
    const double v_hat = opt.v[i] / c2;
    theta[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
  if (!params.all_finite()) throw NumericalError("params", "non-finite parameter after optimizer step");
}

nlohmann::json to_json(const NetParams& params) {
  const NetShape& s = params.shape();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& slot : tensor_slots(s)) {
    const auto t = params.tensor(slot.id);
    layers.push_back({{"name", slot.name},
                      {"rows", slot.rows},
                      {"cols", slot.cols},
                      {"data", std::vector<double>(t.begin(), t.end())}});
  }
  return {{"version", 1},
          {"obs_dim", s.obs_dim},
          {"n_actions", s.n_actions},
          {"hidden", {s.hidden1, s.hidden2}},
          {"layers", layers}};
}

NetParams params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ParseError(0, "unsupported checkpoint version");
    NetShape s;
    s.obs_dim = j.at("obs_dim").get<std::size_t>();
    s.n_actions = j.at("n_actions").get<std::size_t>();
    const auto hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (hidden.size() != 2) throw ParseError(0, "checkpoint hidden must list two widths");
    s.hidden1 = hidden[0];
    s.hidden2 = hidden[1];
    NetParams p(s);
    const auto slots = tensor_slots(s);
    const auto& layers = j.at("layers");
    if (layers.size() != slots.size()) throw ParseError(0, "checkpoint has wrong number of layers");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& l = layers[i];
      if (l.at("name").get<std::string>() != slots[i].name || l.at("rows").get<std::size_t>() != slots[i].rows ||
          l.at("cols").get<std::size_t>() != slots[i].cols) {
        throw DimensionError("checkpoint layer " + slots[i].name + " has inconsistent shape");
      }
      const auto data = l.at("data").get<std::vector<double>>();
      if (data.size() != slots[i].size()) throw DimensionError("checkpoint layer " + slots[i].name + " size");
      std::copy(data.begin(), data.end(), p.tensor(slots[i].id).begin());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const NetParams& params, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << to_json(params).dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

NetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("checkpoint: ") + e.what());
  }
  return params_from_json(j);
}

}  // namespace demoq::nn
