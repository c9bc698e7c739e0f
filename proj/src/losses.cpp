#include "demoq/losses.hpp"

#include <algorithm>
#include <cmath>

namespace demoq {

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < values.size(); ++a) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

std::size_t margin_argmax(std::span<const double> q_row, std::size_t expert_action, double margin) {
  std::size_t best = 0;
  double best_value = q_row[0] + (expert_action == 0 ? 0.0 : margin);
  for (std::size_t a = 1; a < q_row.size(); ++a) {
    const double v = q_row[a] + (a == expert_action ? 0.0 : margin);
    if (v > best_value) {
      best_value = v;
      best = a;
    }
  }
  return best;
}

double margin_loss(std::span<const double> q_row, std::size_t expert_action, double margin) {
  const std::size_t a = margin_argmax(q_row, expert_action, margin);
  const double augmented = q_row[a] + (a == expert_action ? 0.0 : margin);
  return augmented - q_row[expert_action];
}

double softmax_cross_entropy(std::span<const double> q_row, std::size_t target) {
  const double peak = *std::max_element(q_row.begin(), q_row.end());
  double z = 0.0;
  for (double q : q_row) z += std::exp(q - peak);
  return std::log(z) + peak - q_row[target];
}

}  // namespace demoq
