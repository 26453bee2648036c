#include "apnea/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "apnea/errors.hpp"

namespace apnea::nn {

std::size_t conv1d_output_length(std::size_t len, std::size_t kernel_len,
                                 std::size_t stride, Padding padding) {
  if (padding == Padding::valid) {
    if (len < kernel_len)
      throw ShapeError("conv1d: input length " + std::to_string(len) +
                       " shorter than kernel " + std::to_string(kernel_len));
    return (len - kernel_len) / stride + 1;
  }
  return (len + stride - 1) / stride;
}

std::size_t conv1d_pad_left(std::size_t len, std::size_t kernel_len,
                            std::size_t stride, Padding padding) {
  if (padding == Padding::valid) return 0;
  std::size_t out = (len + stride - 1) / stride;
  std::size_t span = (out - 1) * stride + kernel_len;
  std::size_t total = span > len ? span - len : 0;
  return total / 2;
}

Tensor conv1d_forward(const Tensor& input, const Conv1d& layer) {
  if (input.rank() != 2)
    throw ShapeError("conv1d_forward: input must be [channels x length]");
  const std::size_t in_ch = input.extent(0);
  const std::size_t len = input.extent(1);
  if (in_ch != layer.in_channels())
    throw ShapeError("conv1d_forward: input has " + std::to_string(in_ch) +
                     " channels, kernels expect " +
                     std::to_string(layer.in_channels()));

  const std::size_t out_ch = layer.out_channels();
  const std::size_t k = layer.kernel_len();
  const std::size_t stride = layer.stride;
  const std::size_t out_len =
      conv1d_output_length(len, k, stride, layer.padding);
  const std::ptrdiff_t pad =
      static_cast<std::ptrdiff_t>(conv1d_pad_left(len, k, stride, layer.padding));

  Tensor out({out_ch, out_len});
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    const double b = layer.bias ? (*layer.bias)(oc) : 0.0;
    double* out_row = &out.data[oc * out_len];
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::ptrdiff_t base =
          static_cast<std::ptrdiff_t>(t * stride) - pad;
      double acc = b;
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const double* w = &layer.kernels.data[(oc * in_ch + ic) * k];
        const double* x = &input.data[ic * len];
        // clip the tap range to the valid part of the (virtually padded) input
        std::size_t k0 = base < 0 ? static_cast<std::size_t>(-base) : 0;
        std::size_t k1 = k;
        if (base + static_cast<std::ptrdiff_t>(k) >
            static_cast<std::ptrdiff_t>(len))
          k1 = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(len) - base);
        for (std::size_t kk = k0; kk < k1; ++kk)
          acc += w[kk] * x[static_cast<std::size_t>(base + static_cast<std::ptrdiff_t>(kk))];
      }
      out_row[t] = acc;
    }
  }
  return out;
}

Conv1dGrads conv1d_backward(const Tensor& upstream_grad, const Tensor& input,
                            const Conv1d& layer) {
  const std::size_t in_ch = input.extent(0);
  const std::size_t len = input.extent(1);
  const std::size_t out_ch = layer.out_channels();
  const std::size_t k = layer.kernel_len();
  const std::size_t stride = layer.stride;
  const std::size_t out_len =
      conv1d_output_length(len, k, stride, layer.padding);
  if (upstream_grad.shape != std::vector<std::size_t>{out_ch, out_len})
    throw ShapeError("conv1d_backward: upstream gradient shape mismatch");
  if (in_ch != layer.in_channels())
    throw ShapeError("conv1d_backward: input channel mismatch");
  const std::ptrdiff_t pad =
      static_cast<std::ptrdiff_t>(conv1d_pad_left(len, k, stride, layer.padding));

  Conv1dGrads g;
  g.input_grad = zeros_like(input);
  g.kernel_grad = zeros_like(layer.kernels);
  if (layer.bias) g.bias_grad = zeros_like(*layer.bias);

  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    const double* up_row = &upstream_grad.data[oc * out_len];
    if (g.bias_grad) {
      double s = 0.0;
      for (std::size_t t = 0; t < out_len; ++t) s += up_row[t];
      (*g.bias_grad)(oc) = s;
    }
    for (std::size_t t = 0; t < out_len; ++t) {
      const double up = up_row[t];
      if (up == 0.0) continue;
      const std::ptrdiff_t base =
          static_cast<std::ptrdiff_t>(t * stride) - pad;
      for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const double* w = &layer.kernels.data[(oc * in_ch + ic) * k];
        double* wg = &g.kernel_grad.data[(oc * in_ch + ic) * k];
        const double* x = &input.data[ic * len];
        double* xg = &g.input_grad.data[ic * len];
        std::size_t k0 = base < 0 ? static_cast<std::size_t>(-base) : 0;
        std::size_t k1 = k;
        if (base + static_cast<std::ptrdiff_t>(k) >
            static_cast<std::ptrdiff_t>(len))
          k1 = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(len) - base);
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const auto i = static_cast<std::size_t>(base + static_cast<std::ptrdiff_t>(kk));
          wg[kk] += up * x[i];
          xg[i] += up * w[kk];
        }
      }
    }
  }
  return g;
}

MaxPool1dResult maxpool1d_forward(const Tensor& input, std::size_t pool_size) {
  if (input.rank() != 2)
    throw ShapeError("maxpool1d_forward: input must be [channels x length]");
  if (pool_size == 0) throw ShapeError("maxpool1d_forward: pool_size 0");
  const std::size_t ch = input.extent(0);
  const std::size_t len = input.extent(1);
  const std::size_t out_len = len / pool_size;
  if (out_len == 0)
    throw ShapeError("maxpool1d_forward: input length " + std::to_string(len) +
                     " shorter than pool window " + std::to_string(pool_size));

  MaxPool1dResult r;
  r.output = Tensor({ch, out_len});
  r.argmax.resize(ch * out_len);
  for (std::size_t c = 0; c < ch; ++c) {
    const double* x = &input.data[c * len];
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = t * pool_size;
      double best_v = x[best];
      for (std::size_t j = 1; j < pool_size; ++j) {
        const std::size_t i = t * pool_size + j;
        if (x[i] > best_v) {  // strict: ties keep the lowest index
          best_v = x[i];
          best = i;
        }
      }
      r.output(c, t) = best_v;
      r.argmax[c * out_len + t] = c * len + best;
    }
  }
  return r;
}

Tensor maxpool1d_backward(const Tensor& upstream_grad,
                          const std::vector<std::size_t>& argmax,
                          const std::vector<std::size_t>& input_shape) {
  if (upstream_grad.numel() != argmax.size())
    throw ShapeError("maxpool1d_backward: upstream/argmax size mismatch");
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad.numel())
      throw InternalError("maxpool1d_backward: argmax index out of range");
    grad.data[argmax[i]] += upstream_grad.data[i];
  }
  return grad;
}

BatchNorm make_batchnorm(std::size_t features, double epsilon,
                         double momentum) {
  BatchNorm bn;
  bn.gamma = Tensor({features});
  bn.gamma.fill(1.0);
  bn.beta = Tensor({features});
  bn.running_mean = Tensor({features});
  bn.running_var = Tensor({features});
  bn.running_var.fill(1.0);
  bn.epsilon = epsilon;
  bn.momentum = momentum;
  return bn;
}

namespace {

// [C x L] tensors carry L values per feature; rank-1 tensors carry one.
std::size_t bn_feature_count(const Tensor& t) { return t.extent(0); }
std::size_t bn_values_per_feature(const Tensor& t) {
  return t.rank() == 1 ? 1 : t.extent(1);
}

}  // namespace

std::vector<Tensor> batchnorm_forward(const std::vector<Tensor>& batch,
                                      BatchNorm& state, Mode mode,
                                      BatchNormCache* cache) {
  if (batch.empty()) throw ShapeError("batchnorm_forward: empty batch");
  const std::size_t f = state.features();
  const std::size_t l = bn_values_per_feature(batch[0]);
  for (const Tensor& t : batch) {
    if (bn_feature_count(t) != f || bn_values_per_feature(t) != l)
      throw ShapeError("batchnorm_forward: feature count mismatch");
  }

  std::vector<Tensor> out;
  out.reserve(batch.size());

  if (mode == Mode::infer) {
    for (const Tensor& t : batch) {
      Tensor y = zeros_like(t);
      for (std::size_t c = 0; c < f; ++c) {
        const double inv = 1.0 / std::sqrt(state.running_var(c) + state.epsilon);
        const double scale = state.gamma(c) * inv;
        const double shift = state.beta(c) - state.running_mean(c) * scale;
        for (std::size_t j = 0; j < l; ++j)
          y.data[c * l + j] = t.data[c * l + j] * scale + shift;
      }
      out.push_back(std::move(y));
    }
    return out;
  }

  if (batch.size() < 2)
    throw ShapeError(
        "batchnorm_forward: train mode needs a batch of at least 2");

  const std::size_t n = batch.size() * l;  // values per feature in this batch
  Tensor mean({f}), var({f});
  for (std::size_t c = 0; c < f; ++c) {
    double s = 0.0;
    for (const Tensor& t : batch)
      for (std::size_t j = 0; j < l; ++j) s += t.data[c * l + j];
    mean(c) = s / static_cast<double>(n);
  }
  for (std::size_t c = 0; c < f; ++c) {
    double s = 0.0;
    for (const Tensor& t : batch)
      for (std::size_t j = 0; j < l; ++j) {
        const double d = t.data[c * l + j] - mean(c);
        s += d * d;
      }
    var(c) = s / static_cast<double>(n);  // population estimator
  }

  Tensor inv_std({f});
  for (std::size_t c = 0; c < f; ++c)
    inv_std(c) = 1.0 / std::sqrt(var(c) + state.epsilon);

  if (cache) {
    cache->xhat.clear();
    cache->xhat.reserve(batch.size());
    cache->inv_std = inv_std;
    cache->per_feature_count = n;
  }

  for (const Tensor& t : batch) {
    Tensor xhat = zeros_like(t);
    Tensor y = zeros_like(t);
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t j = 0; j < l; ++j) {
        const double xh = (t.data[c * l + j] - mean(c)) * inv_std(c);
        xhat.data[c * l + j] = xh;
        y.data[c * l + j] = state.gamma(c) * xh + state.beta(c);
      }
    if (cache) cache->xhat.push_back(std::move(xhat));
    out.push_back(std::move(y));
  }

  for (std::size_t c = 0; c < f; ++c) {
    state.running_mean(c) =
        state.momentum * state.running_mean(c) + (1.0 - state.momentum) * mean(c);
    state.running_var(c) =
        state.momentum * state.running_var(c) + (1.0 - state.momentum) * var(c);
  }
  return out;
}

BatchNormGrads batchnorm_backward(const std::vector<Tensor>& upstream_grads,
                                  const BatchNorm& state,
                                  const BatchNormCache& cache) {
  if (upstream_grads.size() != cache.xhat.size())
    throw ShapeError("batchnorm_backward: batch size mismatch with cache");
  const std::size_t f = state.features();
  const std::size_t l = bn_values_per_feature(cache.xhat[0]);
  const double n = static_cast<double>(cache.per_feature_count);

  BatchNormGrads g;
  g.gamma_grad = Tensor({f});
  g.beta_grad = Tensor({f});

  // per-feature sums over the whole batch
  Tensor sum_dy({f}), sum_dy_xhat({f});
  for (std::size_t s = 0; s < upstream_grads.size(); ++s)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t j = 0; j < l; ++j) {
        const double dy = upstream_grads[s].data[c * l + j];
        sum_dy(c) += dy;
        sum_dy_xhat(c) += dy * cache.xhat[s].data[c * l + j];
      }
  g.beta_grad = sum_dy;
  g.gamma_grad = sum_dy_xhat;

  // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
  g.input_grads.reserve(upstream_grads.size());
  for (std::size_t s = 0; s < upstream_grads.size(); ++s) {
    Tensor dx = zeros_like(upstream_grads[s]);
    for (std::size_t c = 0; c < f; ++c) {
      const double coef = state.gamma(c) * cache.inv_std(c);
      const double mean_dy = sum_dy(c) / n;
      const double mean_dy_xhat = sum_dy_xhat(c) / n;
      for (std::size_t j = 0; j < l; ++j) {
        const double dy = upstream_grads[s].data[c * l + j];
        const double xh = cache.xhat[s].data[c * l + j];
        dx.data[c * l + j] = coef * (dy - mean_dy - xh * mean_dy_xhat);
      }
    }
    g.input_grads.push_back(std::move(dx));
  }
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights,
                     const std::optional<Tensor>& bias) {
  if (weights.rank() != 2)
    throw ShapeError("dense_forward: weights must be [in x units]");
  const std::size_t f = weights.extent(0);
  const std::size_t u = weights.extent(1);
  if (input.numel() != f)
    throw ShapeError("dense_forward: input size " +
                     std::to_string(input.numel()) + " != weight rows " +
                     std::to_string(f));
  Tensor out({u});
  if (bias) {
    if (bias->numel() != u) throw ShapeError("dense_forward: bias size");
    out.data = bias->data;
  }
  for (std::size_t i = 0; i < f; ++i) {
    const double x = input.data[i];
    if (x == 0.0) continue;
    const double* w = &weights.data[i * u];
    for (std::size_t j = 0; j < u; ++j) out.data[j] += x * w[j];
  }
  return out;
}

DenseGrads dense_backward(const Tensor& upstream_grad, const Tensor& input,
                          const Tensor& weights, bool has_bias) {
  const std::size_t f = weights.extent(0);
  const std::size_t u = weights.extent(1);
  if (upstream_grad.numel() != u)
    throw ShapeError("dense_backward: upstream size mismatch");
  if (input.numel() != f)
    throw ShapeError("dense_backward: input size mismatch");

  DenseGrads g;
  g.input_grad = Tensor({f});
  g.weight_grad = Tensor({f, u});
  for (std::size_t i = 0; i < f; ++i) {
    const double x = input.data[i];
    const double* w = &weights.data[i * u];
    double* wg = &g.weight_grad.data[i * u];
    double acc = 0.0;
    for (std::size_t j = 0; j < u; ++j) {
      const double up = upstream_grad.data[j];
      acc += w[j] * up;
      wg[j] = x * up;
    }
    g.input_grad.data[i] = acc;
  }
  if (has_bias) {
    g.bias_grad = Tensor({u});
    g.bias_grad->data = upstream_grad.data;
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& upstream_grad, const Tensor& input) {
  if (!upstream_grad.same_shape(input))
    throw ShapeError("relu_backward: shape mismatch");
  Tensor g = upstream_grad;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (input.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

DropoutResult dropout_forward(const Tensor& input, double p, Mode mode,
                              Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: probability must be in [0, 1)");
  DropoutResult r;
  r.mask = zeros_like(input);
  if (mode == Mode::infer || p == 0.0) {
    r.mask.fill(1.0);
    r.output = input;
    return r;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  r.output = zeros_like(input);
  for (std::size_t i = 0; i < input.numel(); ++i) {
    if (rng.uniform() >= p) {
      r.mask.data[i] = keep_scale;
      r.output.data[i] = input.data[i] * keep_scale;
    }
  }
  return r;
}

Tensor dropout_backward(const Tensor& upstream_grad, const Tensor& mask) {
  if (!upstream_grad.same_shape(mask))
    throw ShapeError("dropout_backward: shape mismatch");
  Tensor g = upstream_grad;
  for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] *= mask.data[i];
  return g;
}

SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.numel() != 2)
    throw ShapeError("softmax_cross_entropy: expected two logits");
  if (target >= 2)
    throw ShapeError("softmax_cross_entropy: target class out of range");
  const double m = std::max(logits(0), logits(1));
  const double e0 = std::exp(logits(0) - m);
  const double e1 = std::exp(logits(1) - m);
  const double z = e0 + e1;

  SoftmaxLoss r;
  r.probabilities = Tensor({2});
  r.probabilities(0) = e0 / z;
  r.probabilities(1) = e1 / z;
  // -log p computed from the shifted logits to avoid log of a denormal
  r.loss = std::log(z) - (logits(target) - m);
  r.logit_grad = r.probabilities;
  r.logit_grad(target) -= 1.0;
  return r;
}

AdamState adam_init(const std::vector<const Tensor*>& params,
                    double learning_rate) {
  AdamState st;
  st.learning_rate = learning_rate;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.push_back(zeros_like(*p));
    st.v.push_back(zeros_like(*p));
  }
  return st;
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state) {
  if (params.size() != state.m.size() || grads.size() != params.size())
    throw ShapeError("adam_step: parameter/moment count mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(state.beta1, t);
  const double corr2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (!p.same_shape(g) || !p.same_shape(m))
      throw ShapeError("adam_step: tensor shape mismatch");
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * g.data[j];
      v.data[j] =
          state.beta2 * v.data[j] + (1.0 - state.beta2) * g.data[j] * g.data[j];
      const double mhat = m.data[j] / corr1;
      const double vhat = v.data[j] / corr2;
      p.data[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

OpCounts conv1d_op_counts(const Conv1d& layer, std::size_t len,
                          CountMode mode, const Tensor* mask) {
  const std::size_t out_ch = layer.out_channels();
  const std::size_t in_ch = layer.in_channels();
  const std::size_t k = layer.kernel_len();
  const std::size_t out_len =
      conv1d_output_length(len, k, layer.stride, layer.padding);
  const std::size_t taps = in_ch * k;
  const bool biased = layer.bias.has_value();

  OpCounts c;
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    std::size_t live = taps;
    if (mode == CountMode::pruned && mask) {
      live = 0;
      for (std::size_t i = 0; i < taps; ++i)
        if (mask->data[oc * taps + i] != 0.0) ++live;
    }
    std::uint64_t accum = live > 0 ? static_cast<std::uint64_t>(live - 1) : 0;
    if (mode == CountMode::binarized) {
      c.additions += out_len * accum;
    } else {
      c.multiplications += static_cast<std::uint64_t>(out_len) * live;
      c.additions += out_len * accum;
    }
    if (biased) c.additions += out_len;
  }
  return c;
}

OpCounts dense_op_counts(std::size_t in_features, std::size_t units,
                         bool has_bias, CountMode mode, const Tensor* mask) {
  OpCounts c;
  for (std::size_t u = 0; u < units; ++u) {
    std::size_t live = in_features;
    if (mode == CountMode::pruned && mask) {
      live = 0;
      for (std::size_t i = 0; i < in_features; ++i)
        if (mask->data[i * units + u] != 0.0) ++live;
    }
    std::uint64_t accum = live > 0 ? static_cast<std::uint64_t>(live - 1) : 0;
    if (mode == CountMode::binarized) {
      c.additions += accum;
    } else {
      c.multiplications += live;
      c.additions += accum;
    }
    if (has_bias) c.additions += 1;
  }
  return c;
}

}  // namespace apnea::nn
