#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "demoq/kernels.hpp"
#include "demoq/net.hpp"

namespace k = demoq::kernels;

namespace {

struct Buffers {
  k::DenseDims d;
  std::vector<double> x, w, b, y, dy, dw, db, dx;

  explicit Buffers(k::DenseDims dims)
      : d(dims),
        x(d.batch * d.in),
        w(d.out * d.in),
        b(d.out),
        y(d.batch * d.out),
        dy(d.batch * d.out),
        dw(d.out * d.in),
        db(d.out),
        dx(d.batch * d.in) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (auto* v : {&x, &w, &b, &dy}) {
      for (double& e : *v) e = n(rng);
    }
  }
};

k::DenseDims dims(const benchmark::State& s) {
  return {static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(1)),
          static_cast<std::size_t>(s.range(2))};
}

template <auto Fn>
void forward(benchmark::State& s) {
  Buffers buf(dims(s));
  for (auto _ : s) {
    Fn(buf.d, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(buf.d.batch * buf.d.in * buf.d.out));
}

template <auto Fn>
void backward_params(benchmark::State& s) {
  Buffers buf(dims(s));
  for (auto _ : s) {
    Fn(buf.d, buf.x, buf.dy, buf.dw, buf.db);
    benchmark::DoNotOptimize(buf.dw.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(buf.d.batch * buf.d.in * buf.d.out));
}

template <auto Fn>
void backward_input(benchmark::State& s) {
  Buffers buf(dims(s));
  for (auto _ : s) {
    Fn(buf.d, buf.w, buf.dy, buf.dx);
    benchmark::DoNotOptimize(buf.dx.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(buf.d.batch * buf.d.in * buf.d.out));
}

// batch x in x out: the training shapes (32 x 22 x 64, 32 x 64 x 64) and two larger ones.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 22, 64})->Args({32, 64, 64})->Args({256, 256, 256})->Args({1024, 512, 512});
}

void full_step(benchmark::State& s) {
  const auto p = demoq::nn::NetParams::initialize({22, 4, 64, 64}, 1);
  demoq::nn::Matrix obs(32, 22);
  std::mt19937_64 rng(2);
  std::bernoulli_distribution bit(0.1);
  for (double& v : obs.data) v = bit(rng);
  for (auto _ : s) benchmark::DoNotOptimize(demoq::nn::forward(p, obs).data.data());
}

}  // namespace

BENCHMARK(forward<k::serial::dense_forward>)->Name("dense_forward/serial")->Apply(shapes);
BENCHMARK(forward<k::parallel::dense_forward>)->Name("dense_forward/parallel")->Apply(shapes);
BENCHMARK(backward_params<k::serial::dense_backward_params>)->Name("dense_backward_params/serial")->Apply(shapes);
BENCHMARK(backward_params<k::parallel::dense_backward_params>)->Name("dense_backward_params/parallel")->Apply(shapes);
BENCHMARK(backward_input<k::serial::dense_backward_input>)->Name("dense_backward_input/serial")->Apply(shapes);
BENCHMARK(backward_input<k::parallel::dense_backward_input>)->Name("dense_backward_input/parallel")->Apply(shapes);
BENCHMARK(full_step)->Name("qnet_forward/batch32");

BENCHMARK_MAIN();
