#pragma once

#include <cstddef>
#include <span>

namespace demoq {

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Large-margin classification loss:
//   max_a [ Q(s,a) + l(a_E,a) ] - Q(s,a_E),  l = 0 if a == a_E else margin.
// Always >= 0.
double margin_loss(std::span<const double> q_row, std::size_t expert_action, double margin);

// The action attaining the max inside margin_loss (lowest index on ties).
std::size_t margin_argmax(std::span<const double> q_row, std::size_t expert_action, double margin);

// -log softmax(q)[target], temperature 1.
double softmax_cross_entropy(std::span<const double> q_row, std::size_t target);

}  // namespace demoq
