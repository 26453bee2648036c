#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "apnea/nn.hpp"
#include "apnea/rng.hpp"
#include "apnea/tensor.hpp"

namespace apnea {

enum class WeightMode { dense, pruned, binarized };

std::string to_string(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& s);

struct ConvBlockSpec {
  std::size_t filters = 0;
  std::size_t kernel_len = 0;
  std::size_t stride = 1;
  Padding padding = Padding::valid;
  std::size_t pool_size = 2;
};

struct DenseBlockSpec {
  std::size_t units = 0;
  double dropout_p = 0.0;
};

// Layer chain: [input BN] -> {conv -> maxpool -> relu}* -> flatten
// -> {dense -> relu -> dropout}* -> dense(output) -> softmax.
// The output layer's input dropout is head_dropout_p when no hidden dense
// blocks exist, otherwise the last hidden block's dropout_p.
struct ArchitectureConfig {
  std::size_t input_len = 1408;
  bool input_bn = true;
  // false: one BN feature for the whole lead; true: one per sample position
  bool input_bn_per_position = false;
  std::vector<ConvBlockSpec> conv_blocks;
  std::vector<DenseBlockSpec> dense_blocks;
  double head_dropout_p = 0.25;
  bool use_bias = true;
  std::size_t output_units = 2;
};

ArchitectureConfig m1_profile();
ArchitectureConfig m3_profile();
ArchitectureConfig m4_profile();

struct ConvLayerState {
  nn::Conv1d layer;
  std::size_t pool_size = 1;
  std::optional<Tensor> mask;    // pruned mode: 0/1, congruent with kernels
  std::optional<Tensor> latent;  // binarized mode: real latents in [-1, 1]
};

struct DenseLayerState {
  Tensor weights;  // [in_features x units]
  std::optional<Tensor> bias;
  double input_dropout_p = 0.0;
  std::optional<Tensor> mask;
  std::optional<Tensor> latent;
};

struct Model {
  ArchitectureConfig config;
  WeightMode mode = WeightMode::dense;
  std::optional<nn::BatchNorm> input_bn;
  std::vector<ConvLayerState> conv_layers;
  std::vector<DenseLayerState> dense_layers;  // hidden blocks then the head
};

struct LayerGeometry {
  std::vector<std::size_t> conv_output_lengths;  // after the conv itself
  std::vector<std::size_t> pool_output_lengths;
  std::size_t flatten_length = 0;
};

// Throws ConfigError naming the first layer whose geometry collapses.
LayerGeometry validate_geometry(const ArchitectureConfig& config);

// Fan-in-scaled uniform init (limit sqrt(6/fan_in)); biases 0; BN identity.
Model build_model(const ArchitectureConfig& config, Rng& rng);

struct ParamCount {
  std::size_t total = 0;    // trainable scalars + BN running statistics
  std::size_t nonzero = 0;  // scalars whose stored value is not exactly 0
};

ParamCount count_params(const Model& model);
std::size_t bias_scalar_count(const Model& model);

struct ForwardResult {
  Tensor probabilities;  // [output_units]
  std::size_t predicted_label = 0;  // argmax; ties resolve to class 0
};

// Single-window inference. In train mode dropout is sampled from rng and
// batch norm falls back to running statistics (batch statistics need a
// batch; the trainer runs its own batched pipeline).
ForwardResult forward(const Model& model, const Tensor& window, Mode mode,
                      Rng* rng = nullptr);

// Trainable tensors in canonical order: BN gamma/beta, then per conv layer
// kernels (latents when binarized) and bias, then dense layers likewise.
// Masks and BN running statistics are excluded.
std::vector<Tensor*> collect_trainable(Model& model);

// Every persisted tensor with a stable name, for serialization and tests.
struct NamedTensorRef {
  std::string name;
  Tensor* tensor;
  bool as_mask;  // stored as bytes, not doubles
};
std::vector<NamedTensorRef> named_tensors(Model& model);

}  // namespace apnea
