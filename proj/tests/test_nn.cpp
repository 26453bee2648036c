#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "apnea/errors.hpp"
#include "apnea/nn.hpp"
#include "apnea/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace apnea;
namespace t = apnea::testing;

TEST_CASE("conv1d geometry") {
  using nn::conv1d_output_length;
  using nn::conv1d_pad_left;
  CHECK(conv1d_output_length(1408, 100, 2, Padding::valid) == 655);
  CHECK(conv1d_output_length(327, 10, 1, Padding::valid) == 318);
  CHECK(conv1d_output_length(159, 30, 1, Padding::valid) == 130);
  CHECK(conv1d_output_length(10, 3, 1, Padding::same) == 10);
  CHECK(conv1d_output_length(10, 3, 2, Padding::same) == 5);
  CHECK(conv1d_output_length(11, 4, 3, Padding::same) == 4);
  CHECK(conv1d_pad_left(10, 3, 1, Padding::same) == 1);
  CHECK(conv1d_pad_left(1408, 100, 2, Padding::valid) == 0);
  CHECK_THROWS_AS(conv1d_output_length(5, 6, 1, Padding::valid), ShapeError);
}

TEST_CASE("conv1d forward matches the zero-padded reference") {
  Rng rng(0xC0FFEE);
  for (int n = 0; n < 200; ++n) {
    nn::Conv1d layer;
    const std::size_t in_ch = 1 + rng.below(3);
    const std::size_t out_ch = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(7);
    layer.stride = 1 + rng.below(3);
    layer.padding = rng.below(2) ? Padding::same : Padding::valid;
    layer.kernels = t::random_tensor(rng, {out_ch, in_ch, k});
    if (rng.below(2)) layer.bias = t::random_tensor(rng, {out_ch});
    const std::size_t len = k + rng.below(16);
    Tensor input = t::random_tensor(rng, {in_ch, len});

    const Tensor got = nn::conv1d_forward(input, layer);
    const Tensor want = t::naive_conv1d(input, layer);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.numel(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv1d gradients agree with central differences") {
  const auto s = t::check_conv1d_grads(120, 0xC04711);
  CHECK(s.cases >= 100);
  CHECK(s.checks > 1000);
  CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("dense forward and gradients") {
  Tensor w({2, 2});
  w.data = {1.0, 2.0, 3.0, 4.0};  // row f, col u
  Tensor x({2});
  x.data = {10.0, 100.0};
  Tensor b({2});
  b.data = {0.5, -0.5};
  const Tensor y = nn::dense_forward(x, w, b);
  CHECK(y.data[0] == 10.0 * 1.0 + 100.0 * 3.0 + 0.5);
  CHECK(y.data[1] == 10.0 * 2.0 + 100.0 * 4.0 - 0.5);

  const auto s = t::check_dense_grads(120, 0xD3A5E);
  CHECK(s.cases >= 100);
  CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("maxpool forward: windows, remainder, ties") {
  Tensor input({1, 5});
  input.data = {1.0, 3.0, 2.0, 5.0, 4.0};
  nn::MaxPool1dResult r = nn::maxpool1d_forward(input, 2);
  REQUIRE(r.output.shape == std::vector<std::size_t>{1, 2});
  CHECK(r.output.data[0] == 3.0);  // trailing 4.0 is dropped
  CHECK(r.output.data[1] == 5.0);
  CHECK(r.argmax[0] == 1);
  CHECK(r.argmax[1] == 3);

  Tensor tie({1, 4});
  tie.data = {7.0, 7.0, 2.0, 2.0};
  r = nn::maxpool1d_forward(tie, 2);
  CHECK(r.argmax[0] == 0);  // ties go to the lowest index
  CHECK(r.argmax[1] == 2);

  Rng rng(0x9001);
  for (int n = 0; n < 100; ++n) {
    const std::size_t ch = 1 + rng.below(4);
    const std::size_t pool = 1 + rng.below(4);
    const std::size_t len = pool + rng.below(20);
    Tensor x = t::random_tensor(rng, {ch, len});
    const Tensor got = nn::maxpool1d_forward(x, pool).output;
    const Tensor want = t::naive_maxpool1d(x, pool);
    REQUIRE(got.shape == want.shape);
    CHECK(got.data == want.data);
  }
}

TEST_CASE("maxpool gradients route to the argmax") {
  const auto s = t::check_maxpool_grads(110, 0x3001);
  CHECK(s.cases >= 100);
  CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("batchnorm forward: hand statistics and running update") {
  nn::BatchNorm state = nn::make_batchnorm(2);
  state.gamma.data = {2.0, 1.0};
  state.beta.data = {1.0, -1.0};

  Tensor a({2});
  a.data = {1.0, 3.0};
  Tensor b({2});
  b.data = {3.0, 7.0};
  // Feature 0: mean 2, population var 1. Feature 1: mean 5, var 4.
  std::vector<Tensor> out =
      nn::batchnorm_forward({a, b}, state, Mode::train);
  const double i0 = 1.0 / std::sqrt(1.0 + 1e-3);
  const double i1 = 1.0 / std::sqrt(4.0 + 1e-3);
  CHECK(out[0].data[0] == doctest::Approx(1.0 + 2.0 * (1.0 - 2.0) * i0));
  CHECK(out[1].data[0] == doctest::Approx(1.0 + 2.0 * (3.0 - 2.0) * i0));
  CHECK(out[0].data[1] == doctest::Approx(-1.0 + (3.0 - 5.0) * i1));
  CHECK(out[1].data[1] == doctest::Approx(-1.0 + (7.0 - 5.0) * i1));
  // running = 0.99 * running + 0.01 * batch_stat, from identity init
  CHECK(state.running_mean.data[0] == doctest::Approx(0.01 * 2.0));
  CHECK(state.running_var.data[0] == doctest::Approx(0.99 + 0.01 * 1.0));
  CHECK(state.running_mean.data[1] == doctest::Approx(0.01 * 5.0));
  CHECK(state.running_var.data[1] == doctest::Approx(0.99 + 0.01 * 4.0));

  SUBCASE("per-channel statistics pool positions") {
    nn::BatchNorm st = nn::make_batchnorm(1);
    Tensor u({1, 3});
    u.data = {0.0, 1.0, 2.0};
    Tensor v({1, 3});
    v.data = {4.0, 5.0, 6.0};
    // mean 3, population var over 6 values: 14/3
    std::vector<Tensor> o = nn::batchnorm_forward({u, v}, st, Mode::train);
    const double inv = 1.0 / std::sqrt(14.0 / 3.0 + 1e-3);
    CHECK(o[0].data[0] == doctest::Approx((0.0 - 3.0) * inv));
    CHECK(o[1].data[2] == doctest::Approx((6.0 - 3.0) * inv));
  }

  SUBCASE("infer mode uses running statistics, allows a single sample") {
    nn::BatchNorm st = nn::make_batchnorm(1);
    st.running_mean.data = {10.0};
    st.running_var.data = {4.0};
    st.gamma.data = {3.0};
    st.beta.data = {0.5};
    Tensor x({1});
    x.data = {12.0};
    std::vector<Tensor> o = nn::batchnorm_forward({x}, st, Mode::infer);
    CHECK(o[0].data[0] ==
          doctest::Approx(0.5 + 3.0 * 2.0 / std::sqrt(4.0 + 1e-3)));
    CHECK(st.running_mean.data[0] == 10.0);  // infer never mutates
  }

  SUBCASE("train mode rejects batches smaller than two") {
    nn::BatchNorm st = nn::make_batchnorm(1);
    Tensor x({1});
    x.data = {1.0};
    CHECK_THROWS_AS(nn::batchnorm_forward({x}, st, Mode::train), ShapeError);
  }
}

TEST_CASE("batchnorm gradients agree with central differences") {
  const auto s = t::check_batchnorm_grads(110, 0xB8A7C4);
  CHECK(s.cases >= 100);
  CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("relu and its subgradient") {
  Tensor x({4});
  x.data = {-1.5, 0.0, 2.5, -0.1};
  const Tensor y = nn::relu(x);
  CHECK(y.data == std::vector<double>{0.0, 0.0, 2.5, 0.0});

  Tensor up({4});
  up.data = {1.0, 1.0, 1.0, 1.0};
  const Tensor g = nn::relu_backward(up, x);
  // pinned: the subgradient at exactly 0 is 0
  CHECK(g.data == std::vector<double>{0.0, 0.0, 1.0, 0.0});

  const auto s = t::check_relu_grads(110, 0x8E1);
  CHECK(s.cases >= 100);
  CHECK(s.max_rel_err < 1e-4);
}

TEST_CASE("dropout: inverted scaling, determinism, backward") {
  Rng rng(42);
  Tensor x({20000});
  for (double& v : x.data) v = 1.0;

  nn::DropoutResult r = nn::dropout_forward(x, 0.25, Mode::train, rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double m = r.mask.data[i];
    CHECK((m == 0.0 || m == doctest::Approx(1.0 / 0.75)));
    CHECK(r.output.data[i] == m * x.data[i]);
    if (m != 0.0) ++kept;
  }
  const double keep_frac = static_cast<double>(kept) / 20000.0;
  CHECK(keep_frac > 0.72);
  CHECK(keep_frac < 0.78);

  Rng rng2(42);
  nn::DropoutResult r2 = nn::dropout_forward(x, 0.25, Mode::train, rng2);
  CHECK(r2.mask.data == r.mask.data);  // same seed, same mask

  Rng rng3(7);
  nn::DropoutResult inf = nn::dropout_forward(x, 0.25, Mode::infer, rng3);
  CHECK(inf.output.data == x.data);

  Tensor up({20000});
  for (double& v : up.data) v = 2.0;
  const Tensor g = nn::dropout_backward(up, r.mask);
  for (std::size_t i = 0; i < g.numel(); ++i)
    CHECK(g.data[i] == 2.0 * r.mask.data[i]);

  Rng rng4(1);
  CHECK_THROWS_AS(nn::dropout_forward(x, 1.0, Mode::train, rng4), ConfigError);
  CHECK_THROWS_AS(nn::dropout_forward(x, -0.1, Mode::train, rng4), ConfigError);
}

TEST_CASE("softmax cross entropy: values, stability, gradient identity") {
  Tensor logits({2});
  logits.data = {0.3, 0.3};
  nn::SoftmaxLoss eq = nn::softmax_cross_entropy(logits, 0);
  CHECK(eq.loss == doctest::Approx(std::log(2.0)));
  CHECK(eq.probabilities.data[0] == doctest::Approx(0.5));
  CHECK(eq.logit_grad.data[0] == doctest::Approx(-0.5));
  CHECK(eq.logit_grad.data[1] == doctest::Approx(0.5));

  Tensor huge({2});
  huge.data = {1000.0, -1000.0};
  nn::SoftmaxLoss s0 = nn::softmax_cross_entropy(huge, 0);
  CHECK(std::isfinite(s0.loss));
  CHECK(s0.loss == doctest::Approx(0.0));
  nn::SoftmaxLoss s1 = nn::softmax_cross_entropy(huge, 1);
  CHECK(std::isfinite(s1.loss));
  CHECK(s1.loss == doctest::Approx(2000.0));
  CHECK(s1.logit_grad.data[0] == doctest::Approx(1.0));

  Rng rng(0x50F7);
  for (int n = 0; n < 50; ++n) {
    Tensor l = t::random_tensor(rng, {2}, -3.0, 3.0);
    const std::size_t target = rng.below(2);
    nn::SoftmaxLoss out = nn::softmax_cross_entropy(l, target);
    CHECK(out.probabilities.data[0] + out.probabilities.data[1] ==
          doctest::Approx(1.0));
    CHECK(out.logit_grad.data[0] ==
          doctest::Approx(out.probabilities.data[0] - (target == 0 ? 1 : 0)));
    CHECK(out.logit_grad.data[1] ==
          doctest::Approx(out.probabilities.data[1] - (target == 1 ? 1 : 0)));
  }

  const auto s = t::check_softmax_grads(120, 0x50F72);
  CHECK(s.cases >= 100);
  CHECK(s.max_rel_err < 1e-4);
}

namespace {

// Textbook ADAM reference, written independently of the library version.
struct RefAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  void init(const std::vector<Tensor>& params, double rate) {
    lr = rate;
    for (const Tensor& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
  }
  void update(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].numel(); ++i) {
        const double g = grads[t].data[i];
        m[t][i] = b1 * m[t][i] + (1.0 - b1) * g;
        v[t][i] = b2 * v[t][i] + (1.0 - b2) * g * g;
        const double mhat = m[t][i] / c1;
        const double vhat = v[t][i] / c2;
        params[t].data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace

TEST_CASE("adam matches a hand reference over multiple steps") {
  Rng rng(0xADA3);
  for (int n = 0; n < 100; ++n) {
    const std::size_t tensors = 1 + rng.below(3);
    std::vector<Tensor> params, ref_params;
    for (std::size_t i = 0; i < tensors; ++i) {
      params.push_back(t::random_tensor(rng, {1 + rng.below(6)}));
      ref_params.push_back(params.back());
    }
    std::vector<const Tensor*> views;
    for (const Tensor& p : params) views.push_back(&p);
    const double lr = rng.uniform(1e-4, 1e-2);
    nn::AdamState state = nn::adam_init(views, lr);
    RefAdam ref;
    ref.init(ref_params, lr);

    for (int s = 0; s < 3; ++s) {
      std::vector<Tensor> grads;
      for (const Tensor& p : params)
        grads.push_back(t::random_tensor(rng, p.shape));
      std::vector<Tensor*> mut;
      std::vector<const Tensor*> gviews;
      for (Tensor& p : params) mut.push_back(&p);
      for (const Tensor& g : grads) gviews.push_back(&g);
      nn::adam_step(mut, gviews, state);
      ref.update(ref_params, grads);
      for (std::size_t t0 = 0; t0 < tensors; ++t0)
        for (std::size_t i = 0; i < params[t0].numel(); ++i)
          CHECK(params[t0].data[i] ==
                doctest::Approx(ref_params[t0].data[i]).epsilon(1e-12));
    }
    CHECK(state.step == 3);
  }

  SUBCASE("first step moves by ~lr against the gradient sign") {
    Tensor p({1});
    p.data = {0.0};
    Tensor g({1});
    g.data = {0.5};
    nn::AdamState st = nn::adam_init({&p}, 1e-3);
    nn::adam_step({&p}, {&g}, st);
    // mhat = g, vhat = g^2 => step = lr * g / (|g| + eps)
    CHECK(p.data[0] == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)));
  }
}

TEST_CASE("op counts on hand-sized layers") {
  nn::Conv1d layer;
  layer.kernels = Tensor({1, 1, 3});
  layer.kernels.fill(1.0);
  layer.bias = Tensor({1});
  layer.stride = 1;
  layer.padding = Padding::valid;

  // L=5, K=3, valid -> 3 cells; 3 products, 2 accumulations, 1 bias each
  nn::OpCounts c = nn::conv1d_op_counts(layer, 5, nn::CountMode::dense);
  CHECK(c.multiplications == 9);
  CHECK(c.additions == 9);

  layer.bias.reset();
  c = nn::conv1d_op_counts(layer, 5, nn::CountMode::dense);
  CHECK(c.multiplications == 9);
  CHECK(c.additions == 6);

  // same padding counts the padding taps too
  layer.padding = Padding::same;
  c = nn::conv1d_op_counts(layer, 4, nn::CountMode::dense);
  CHECK(c.multiplications == 12);
  CHECK(c.additions == 8);

  // binarized: products become the accumulation chain
  layer.padding = Padding::valid;
  c = nn::conv1d_op_counts(layer, 5, nn::CountMode::binarized);
  CHECK(c.multiplications == 0);
  CHECK(c.additions == 6);

  // pruned: only unmasked taps count
  nn::Conv1d two;
  two.kernels = Tensor({2, 1, 3});
  two.kernels.fill(1.0);
  two.bias = Tensor({2});
  Tensor mask({2, 1, 3});
  mask.data = {1, 0, 1, 0, 0, 0};  // channel 0 keeps 2 taps, channel 1 none
  c = nn::conv1d_op_counts(two, 5, nn::CountMode::pruned, &mask);
  CHECK(c.multiplications == 3 * 2);
  CHECK(c.additions == 3 * 1 + 3 * 2);  // accumulations + both biases

  nn::OpCounts d = nn::dense_op_counts(4, 3, true, nn::CountMode::dense);
  CHECK(d.multiplications == 12);
  CHECK(d.additions == 12);
  d = nn::dense_op_counts(4, 3, false, nn::CountMode::binarized);
  CHECK(d.multiplications == 0);
  CHECK(d.additions == 9);

  Tensor dmask({4, 2});
  dmask.data = {1, 0, 0, 0, 1, 1, 0, 1};  // unit 0 keeps 2, unit 1 keeps 2
  d = nn::dense_op_counts(4, 2, false, nn::CountMode::pruned, &dmask);
  CHECK(d.multiplications == 4);
  CHECK(d.additions == 2);
}
