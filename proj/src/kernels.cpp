#include "demoq/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace demoq::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 14;

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

namespace serial {

void dense_forward(DenseDims d, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y) {
  for (std::size_t r = 0; r < d.batch; ++r) {
    for (std::size_t o = 0; o < d.out; ++o) {
      y[r * d.out + o] = dot(&x[r * d.in], &w[o * d.in], d.in) + b[o];
    }
  }
}

void dense_backward_params(DenseDims d, std::span<const double> x, std::span<const double> dy,
                           std::span<double> dw, std::span<double> db) {
  for (std::size_t o = 0; o < d.out; ++o) {
    double* row = &dw[o * d.in];
    double bias_acc = db[o];
    for (std::size_t r = 0; r < d.batch; ++r) {
      const double g = dy[r * d.out + o];
      bias_acc += g;
      if (g == 0.0) continue;
      const double* xr = &x[r * d.in];
      for (std::size_t i = 0; i < d.in; ++i) row[i] += g * xr[i];
    }
    db[o] = bias_acc;
  }
}

void dense_backward_input(DenseDims d, std::span<const double> w, std::span<const double> dy,
                          std::span<double> dx) {
  for (std::size_t r = 0; r < d.batch; ++r) {
    double* out = &dx[r * d.in];
    std::fill(out, out + d.in, 0.0);
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = dy[r * d.out + o];
      if (g == 0.0) continue;
      const double* wr = &w[o * d.in];
      for (std::size_t i = 0; i < d.in; ++i) out[i] += g * wr[i];
    }
  }
}

void relu_inplace(std::span<double> x) {
  for (double& v : x) v = v > 0.0 ? v : 0.0;
}

}  // namespace serial

namespace parallel {

void dense_forward(DenseDims d, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y) {
  const auto cells = static_cast<std::int64_t>(d.batch * d.out);
  const bool big = d.batch * d.out * d.in >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t c = 0; c < cells; ++c) {
    const std::size_t r = static_cast<std::size_t>(c) / d.out;
    const std::size_t o = static_cast<std::size_t>(c) % d.out;
    y[r * d.out + o] = dot(&x[r * d.in], &w[o * d.in], d.in) + b[o];
  }
}

void dense_backward_params(DenseDims d, std::span<const double> x, std::span<const double> dy,
                           std::span<double> dw, std::span<double> db) {
  const auto outs = static_cast<std::int64_t>(d.out);
  const bool big = d.batch * d.out * d.in >= kParallelThreshold;
  // Each output row is owned by one thread and summed over the batch in order.
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t oi = 0; oi < outs; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    double* row = &dw[o * d.in];
    double bias_acc = db[o];
    for (std::size_t r = 0; r < d.batch; ++r) {
      const double g = dy[r * d.out + o];
      bias_acc += g;
      if (g == 0.0) continue;
      const double* xr = &x[r * d.in];
      for (std::size_t i = 0; i < d.in; ++i) row[i] += g * xr[i];
    }
    db[o] = bias_acc;
  }
}

void dense_backward_input(DenseDims d, std::span<const double> w, std::span<const double> dy,
                          std::span<double> dx) {
  const auto rows = static_cast<std::int64_t>(d.batch);
  const bool big = d.batch * d.out * d.in >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t ri = 0; ri < rows; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    double* out = &dx[r * d.in];
    std::fill(out, out + d.in, 0.0);
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = dy[r * d.out + o];
      if (g == 0.0) continue;
      const double* wr = &w[o * d.in];
      for (std::size_t i = 0; i < d.in; ++i) out[i] += g * wr[i];
    }
  }
}

void relu_inplace(std::span<double> x) {
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

}  // namespace parallel

}  // namespace demoq::kernels
