#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace demoq::nn {

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

struct NetShape {
  std::size_t obs_dim = 0;
  std::size_t n_actions = 0;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 64;

  void validate() const;
  std::size_t param_count() const;
  bool operator==(const NetShape&) const = default;
};

enum class Tensor { Fc1Weight, Fc1Bias, Fc2Weight, Fc2Bias, ValueWeight, ValueBias, AdvWeight, AdvBias };

struct TensorSlot {
  Tensor id;
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::size_t offset;
  std::size_t size() const { return rows * cols; }
};

// Tensor table in storage order; offsets index into NetParams::values().
std::vector<TensorSlot> tensor_slots(const NetShape& shape);

// Weights and biases of the dueling MLP, stored as one flat vector so that
// optimizer, penalty and gradient code can treat them uniformly.
class NetParams {
 public:
  NetParams() = default;
  explicit NetParams(NetShape shape);

  // Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static NetParams initialize(NetShape shape, std::uint64_t seed);

  const NetShape& shape() const { return shape_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> tensor(Tensor t);
  std::span<const double> tensor(Tensor t) const;

  bool all_finite() const;
  bool operator==(const NetParams&) const = default;

 private:
  NetShape shape_;
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;
};

// Q = V + (A - mean A).
std::vector<double> dueling_aggregate(double value, std::span<const double> advantages);

// Intermediate activations kept for the backward pass.
struct ForwardTrace {
  Matrix hidden1;  // post-ReLU
  Matrix hidden2;  // post-ReLU
  std::vector<double> value;
  Matrix advantage;
  Matrix q;
};

ForwardTrace forward_trace(const NetParams& params, const Matrix& obs);

// Q(s, . ; params) for each row of `obs`.
Matrix forward(const NetParams& params, const Matrix& obs);

enum class SupervisedLoss { LargeMargin, CrossEntropy };

// Which terms of J = J_DQ + l1*J_n + l2*J_E + l3*J_L2 are active and how they are weighted.
struct LossSpec {
  bool td = true;  // 1-step double-Q term
  double lambda_n = 1.0;
  double lambda_e = 1.0;
  double lambda_l2 = 1e-5;
  double margin = 0.8;
  double gamma = 0.99;
  int n = 10;
  SupervisedLoss supervised = SupervisedLoss::LargeMargin;

  void validate() const;
};

// One mini-batch with precomputed (stop-gradient) targets. For an expert
// sample the demonstrator's action is `actions[i]`.
struct LossInputs {
  Matrix obs;
  std::vector<std::size_t> actions;
  std::vector<double> target_1;
  std::vector<double> target_n;
  std::vector<double> is_weight;
  std::vector<bool> expert;

  std::size_t size() const { return actions.size(); }
  void validate(const NetShape& shape) const;
};

// J_DQ and J_n are IS-weighted means of squared residuals; J_E sums the
// supervised loss over expert samples and divides by the batch size (per-sample
// gating); J_L2 is the sum of squares of every weight and bias.
struct LossBreakdown {
  double j_dq = 0.0;
  double j_n = 0.0;
  double j_e = 0.0;
  double j_l2 = 0.0;
  double total = 0.0;
  std::vector<double> td_errors;         // target_1 - Q(s,a), per sample
  std::vector<bool> supervised_applied;  // per sample
};

struct Gradient {
  LossBreakdown loss;
  NetParams grads;
};

LossBreakdown evaluate_loss(const NetParams& params, const LossSpec& spec, const LossInputs& batch);
Gradient backward(const NetParams& params, const LossSpec& spec, const LossInputs& batch);

double l2_penalty(const NetParams& params);

struct OptState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptState for_params(const NetParams& params, double lr = 1e-4);
};

// Bias-corrected Adam update, in place.
void adam_step(NetParams& params, const NetParams& grads, OptState& opt);

nlohmann::json to_json(const NetParams& params);
NetParams params_from_json(const nlohmann::json& j);
void save_checkpoint(const NetParams& params, const std::filesystem::path& path);
NetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace demoq::nn
