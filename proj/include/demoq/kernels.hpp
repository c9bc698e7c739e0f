#pragma once

#include <cstddef>
#include <span>

// Dense-layer kernels used by the Q-network.
//
// Layout: activations are row-major [batch x features], weights are row-major
// [out x in]. Both implementations accumulate every output element in the
// same order, so `parallel::` results are bit-identical to `serial::`.
// The serial versions are the reference the tests and benchmarks compare
// against.
namespace demoq::kernels {

struct DenseDims {
  std::size_t batch;
  std::size_t in;
  std::size_t out;
};

namespace serial {

// y = x W^T + b
void dense_forward(DenseDims d, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y);

// dW += dy^T x, db += colsum(dy)
void dense_backward_params(DenseDims d, std::span<const double> x, std::span<const double> dy,
                           std::span<double> dw, std::span<double> db);

// dx = dy W   (overwrites dx)
void dense_backward_input(DenseDims d, std::span<const double> w, std::span<const double> dy,
                          std::span<double> dx);

// x = max(x, 0) in place
void relu_inplace(std::span<double> x);

}  // namespace serial

namespace parallel {

void dense_forward(DenseDims d, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y);
void dense_backward_params(DenseDims d, std::span<const double> x, std::span<const double> dy,
                           std::span<double> dw, std::span<double> db);
void dense_backward_input(DenseDims d, std::span<const double> w, std::span<const double> dy,
                          std::span<double> dx);
void relu_inplace(std::span<double> x);

}  // namespace parallel

}  // namespace demoq::kernels
