#ifndef APNEA_NN_HPP
#define APNEA_NN_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "apnea/rng.hpp"
#include "apnea/tensor.hpp"

namespace apnea {

enum class Mode { train, infer };
enum class Padding { valid, same };

namespace nn {

// ---------------------------------------------------------------------------
// 1D convolution
// ---------------------------------------------------------------------------

/// One conv layer: kernels [out_ch x in_ch x kernel_len], optional bias
/// [out_ch]. In a binarized model the kernel tensor holds latent weights;
/// callers pass the sign-projected tensor here.
struct Conv1d {
  Tensor kernels;
  std::optional<Tensor> bias;
  std::size_t stride = 1;
  Padding padding = Padding::valid;

  std::size_t out_channels() const { return kernels.extent(0); }
  std::size_t in_channels() const { return kernels.extent(1); }
  std::size_t kernel_len() const { return kernels.extent(2); }
};

/// Output length of a conv over an input of length `len`.
/// valid: floor((len - k)/stride) + 1; same: ceil(len/stride).
std::size_t conv1d_output_length(std::size_t len, std::size_t kernel_len,
                                 std::size_t stride, Padding padding);

/// Left padding used by `same` mode (0 for `valid`).
std::size_t conv1d_pad_left(std::size_t len, std::size_t kernel_len,
                            std::size_t stride, Padding padding);

Tensor conv1d_forward(const Tensor& input, const Conv1d& layer);

struct Conv1dGrads {
  Tensor input_grad;
  Tensor kernel_grad;
  std::optional<Tensor> bias_grad;
};

Conv1dGrads conv1d_backward(const Tensor& upstream_grad, const Tensor& input,
                            const Conv1d& layer);

// ---------------------------------------------------------------------------
// Max pooling (non-overlapping windows, stride == pool_size, remainder
// samples dropped; ties resolve to the lowest index)
// ---------------------------------------------------------------------------

struct MaxPool1dResult {
  Tensor output;                       // [ch x floor(len/pool)]
  std::vector<std::size_t> argmax;     // flat index into input.data per cell
};

MaxPool1dResult maxpool1d_forward(const Tensor& input, std::size_t pool_size);

Tensor maxpool1d_backward(const Tensor& upstream_grad,
                          const std::vector<std::size_t>& argmax,
                          const std::vector<std::size_t>& input_shape);

// ---------------------------------------------------------------------------
// Batch normalization. Statistics are per channel (axis 0 of [C x L]
// inputs; rank-1 inputs are treated as [F] feature vectors with one value
// per feature). Train mode uses the population (biased) variance of the
// current batch and updates running stats with exponential momentum:
// running = momentum * running + (1 - momentum) * batch_stat.
// ---------------------------------------------------------------------------

struct BatchNorm {
  Tensor gamma;          // [features]
  Tensor beta;           // [features]
  Tensor running_mean;   // [features]
  Tensor running_var;    // [features]
  double epsilon = 1e-3;
  double momentum = 0.99;

  std::size_t features() const { return gamma.numel(); }
};

BatchNorm make_batchnorm(std::size_t features, double epsilon = 1e-3,
                         double momentum = 0.99);

struct BatchNormCache {
  std::vector<Tensor> xhat;   // normalized inputs, per sample
  Tensor inv_std;             // [features], 1/sqrt(var + eps)
  std::size_t per_feature_count = 0;
};

/// Forward over a whole batch. Train mode requires batch.size() >= 2 and
/// mutates the running statistics; infer mode normalizes each sample with
/// the running statistics alone. `cache` may be null in infer mode.
std::vector<Tensor> batchnorm_forward(const std::vector<Tensor>& batch,
                                      BatchNorm& state, Mode mode,
                                      BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  std::vector<Tensor> input_grads;
  Tensor gamma_grad;
  Tensor beta_grad;
};

/// Backward through train-mode normalization (batch statistics included).
BatchNormGrads batchnorm_backward(const std::vector<Tensor>& upstream_grads,
                                  const BatchNorm& state,
                                  const BatchNormCache& cache);

// ---------------------------------------------------------------------------
// Dense (affine) layer: y = W^T x + b with W [F x U]
// ---------------------------------------------------------------------------

Tensor dense_forward(const Tensor& input, const Tensor& weights,
                     const std::optional<Tensor>& bias);

struct DenseGrads {
  Tensor input_grad;
  Tensor weight_grad;
  std::optional<Tensor> bias_grad;
};

DenseGrads dense_backward(const Tensor& upstream_grad, const Tensor& input,
                          const Tensor& weights, bool has_bias);

// ---------------------------------------------------------------------------
// Activations, dropout, loss
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input);
/// Subgradient 0 at exactly 0.
Tensor relu_backward(const Tensor& upstream_grad, const Tensor& input);

struct DropoutResult {
  Tensor output;
  Tensor mask;  // 0 where dropped, 1/(1-p) where kept; all ones in infer mode
};

/// Inverted dropout: train mode zeroes elements with probability p and
/// rescales survivors by 1/(1-p); infer mode is the identity.
DropoutResult dropout_forward(const Tensor& input, double p, Mode mode,
                              Rng& rng);

Tensor dropout_backward(const Tensor& upstream_grad, const Tensor& mask);

struct SoftmaxLoss {
  double loss = 0.0;
  Tensor probabilities;  // [2]
  Tensor logit_grad;     // [2], = p - one_hot(target)
};

/// Numerically stable two-class softmax cross-entropy.
SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::size_t target);

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // first moments, one per tracked parameter tensor
  std::vector<Tensor> v;  // second moments
};

/// Moments sized to match `params`, step counter at 0.
AdamState adam_init(const std::vector<const Tensor*>& params,
                    double learning_rate = 1e-3);

/// One bias-corrected update over all tracked tensors. `params` and `grads`
/// must match the shapes the state was initialized with.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Operation-count signatures (deterministic, analytic). Conventions:
// a weight-activation product is one multiplication; accumulating k
// products costs k-1 additions; a bias is one addition; a +/-1 binarized
// product is a signed accumulate costing one addition less per cell (k
// taps -> k-1 additions, no multiplications). Masked-out weights
// contribute nothing. Padding taps of `same` convolutions are counted.
// ---------------------------------------------------------------------------

struct OpCounts {
  std::uint64_t multiplications = 0;
  std::uint64_t additions = 0;

  OpCounts& operator+=(const OpCounts& o) {
    multiplications += o.multiplications;
    additions += o.additions;
    return *this;
  }
};

enum class CountMode { dense, pruned, binarized };

/// Per-layer counts for a conv over input length `len`. `mask`, when
/// present, is shape-congruent with the kernels and marks retained weights
/// with nonzero entries (pruned mode only).
OpCounts conv1d_op_counts(const Conv1d& layer, std::size_t len,
                          CountMode mode, const Tensor* mask = nullptr);

OpCounts dense_op_counts(std::size_t in_features, std::size_t units,
                         bool has_bias, CountMode mode,
                         const Tensor* mask = nullptr);

}  // namespace nn
}  // namespace apnea

#endif
