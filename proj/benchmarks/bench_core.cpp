// Microbenchmarks for the inference-path hot spots and the analytic cost
// model. Run with --benchmark_min_time=... to tighten noise.

#include <benchmark/benchmark.h>

#include "apnea/costmodel.hpp"
#include "apnea/model.hpp"
#include "apnea/nn.hpp"
#include "apnea/rng.hpp"
#include "apnea/sparsify.hpp"

using namespace apnea;

namespace {

Tensor random_window(std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({len});
  for (double& v : x.data) v = rng.normal();
  return x;
}

nn::Conv1d first_stage_conv(Rng& rng) {
  nn::Conv1d layer;
  layer.stride = 2;
  layer.padding = Padding::valid;
  layer.kernels = Tensor({3, 1, 100});
  for (double& v : layer.kernels.data) v = rng.normal(0.0, 0.1);
  layer.bias = Tensor({3});
  return layer;
}

void bm_conv1d_forward(benchmark::State& state) {
  Rng rng(1);
  const nn::Conv1d layer = first_stage_conv(rng);
  Tensor x({1, 1408});
  for (double& v : x.data) v = rng.normal();
  for (auto _ : state) {
    Tensor y = nn::conv1d_forward(x, layer);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(bm_conv1d_forward);

void bm_conv1d_backward(benchmark::State& state) {
  Rng rng(2);
  const nn::Conv1d layer = first_stage_conv(rng);
  Tensor x({1, 1408});
  for (double& v : x.data) v = rng.normal();
  const Tensor y = nn::conv1d_forward(x, layer);
  Tensor up(y.shape);
  for (double& v : up.data) v = rng.normal();
  for (auto _ : state) {
    nn::Conv1dGrads g = nn::conv1d_backward(up, x, layer);
    benchmark::DoNotOptimize(g.input_grad.data.data());
  }
}
BENCHMARK(bm_conv1d_backward);

void bm_forward_full(benchmark::State& state) {
  Rng rng(3);
  const Model model = build_model(m1_profile(), rng);
  const Tensor x = random_window(1408, 4);
  for (auto _ : state) {
    ForwardResult r = forward(model, x, Mode::infer);
    benchmark::DoNotOptimize(r.probabilities.data.data());
  }
}
BENCHMARK(bm_forward_full);

void bm_forward_reduced(benchmark::State& state) {
  Rng rng(5);
  const Model model = build_model(m4_profile(), rng);
  const Tensor x = random_window(1408, 6);
  for (auto _ : state) {
    ForwardResult r = forward(model, x, Mode::infer);
    benchmark::DoNotOptimize(r.probabilities.data.data());
  }
}
BENCHMARK(bm_forward_reduced);

void bm_count_ops(benchmark::State& state) {
  Rng rng(7);
  const Model model = build_model(m1_profile(), rng);
  for (auto _ : state) {
    nn::OpCounts c = count_ops(model);
    benchmark::DoNotOptimize(c.multiplications);
  }
}
BENCHMARK(bm_count_ops);

void bm_magnitude_mask(benchmark::State& state) {
  Rng rng(8);
  for (auto _ : state) {
    state.PauseTiming();
    Model model = build_model(m1_profile(), rng);
    attach_masks(model);
    state.ResumeTiming();
    apply_magnitude_mask(model, 0.8);
    benchmark::DoNotOptimize(model.conv_layers[0].mask->data.data());
  }
}
BENCHMARK(bm_magnitude_mask);

}  // namespace

BENCHMARK_MAIN();
