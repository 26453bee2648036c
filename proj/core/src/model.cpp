#include "apnea/model.hpp"

#include <cmath>
#include <string>

#include "apnea/errors.hpp"

namespace apnea {

std::string to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::dense: return "dense";
    case WeightMode::pruned: return "pruned";
    case WeightMode::binarized: return "binarized";
  }
  throw InternalError("unknown weight mode");
}

WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "dense") return WeightMode::dense;
  if (s == "pruned") return WeightMode::pruned;
  if (s == "binarized") return WeightMode::binarized;
  throw ConfigError("unknown weight mode '" + s + "'");
}

ArchitectureConfig m1_profile() {
  ArchitectureConfig c;
  c.conv_blocks = {
      {3, 100, 2, Padding::valid, 2},
      {50, 10, 1, Padding::valid, 2},
      {30, 30, 1, Padding::valid, 2},
  };
  return c;
}

ArchitectureConfig m3_profile() {
  ArchitectureConfig c = m1_profile();
  c.use_bias = false;
  return c;
}

ArchitectureConfig m4_profile() {
  ArchitectureConfig c = m1_profile();
  c.conv_blocks.pop_back();
  return c;
}

LayerGeometry validate_geometry(const ArchitectureConfig& config) {
  if (config.input_len == 0) throw ConfigError("input length is 0");
  if (config.output_units == 0) throw ConfigError("output layer has 0 units");
  LayerGeometry g;
  std::size_t len = config.input_len;
  for (std::size_t i = 0; i < config.conv_blocks.size(); ++i) {
    const ConvBlockSpec& b = config.conv_blocks[i];
    const std::string where = "conv block " + std::to_string(i + 1);
    if (b.filters == 0 || b.kernel_len == 0 || b.stride == 0 ||
        b.pool_size == 0)
      throw ConfigError(where + ": zero-sized field");
    if (b.padding == Padding::valid && len < b.kernel_len)
      throw ConfigError(where + ": kernel " + std::to_string(b.kernel_len) +
                        " does not fit input of length " + std::to_string(len));
    len = nn::conv1d_output_length(len, b.kernel_len, b.stride, b.padding);
    g.conv_output_lengths.push_back(len);
    if (len < b.pool_size)
      throw ConfigError(where + ": pool " + std::to_string(b.pool_size) +
                        " does not fit conv output of length " +
                        std::to_string(len));
    len /= b.pool_size;
    g.pool_output_lengths.push_back(len);
    if (len == 0) throw ConfigError(where + ": output collapses to length 0");
  }
  const std::size_t channels =
      config.conv_blocks.empty() ? 1 : config.conv_blocks.back().filters;
  g.flatten_length = channels * len;
  for (std::size_t i = 0; i < config.dense_blocks.size(); ++i) {
    if (config.dense_blocks[i].units == 0)
      throw ConfigError("dense block " + std::to_string(i + 1) +
                        ": zero units");
  }
  return g;
}

namespace {

Tensor fan_in_uniform(const std::vector<std::size_t>& shape,
                      std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

DenseLayerState make_dense(std::size_t in_features, std::size_t units,
                           double input_dropout_p, bool use_bias, Rng& rng) {
  DenseLayerState d;
  d.weights = fan_in_uniform({in_features, units}, in_features, rng);
  if (use_bias) d.bias = Tensor({units});
  d.input_dropout_p = input_dropout_p;
  return d;
}

}  // namespace

Model build_model(const ArchitectureConfig& config, Rng& rng) {
  const LayerGeometry geom = validate_geometry(config);
  Model m;
  m.config = config;

  if (config.input_bn) {
    const std::size_t features =
        config.input_bn_per_position ? config.input_len : 1;
    m.input_bn = nn::make_batchnorm(features);
  }

  std::size_t in_ch = 1;
  for (const ConvBlockSpec& b : config.conv_blocks) {
    ConvLayerState c;
    c.layer.kernels = fan_in_uniform({b.filters, in_ch, b.kernel_len},
                                     in_ch * b.kernel_len, rng);
    if (config.use_bias) c.layer.bias = Tensor({b.filters});
    c.layer.stride = b.stride;
    c.layer.padding = b.padding;
    c.pool_size = b.pool_size;
    m.conv_layers.push_back(std::move(c));
    in_ch = b.filters;
  }

  std::size_t features = geom.flatten_length;
  for (const DenseBlockSpec& b : config.dense_blocks) {
    m.dense_layers.push_back(
        make_dense(features, b.units, 0.0, config.use_bias, rng));
    features = b.units;
  }
  // hidden blocks carry their dropout on the output side of the activation,
  // which is the input side of the next layer
  for (std::size_t i = 0; i + 1 < m.dense_layers.size(); ++i)
    m.dense_layers[i + 1].input_dropout_p = config.dense_blocks[i].dropout_p;

  DenseLayerState head = make_dense(features, config.output_units,
                                    config.head_dropout_p, config.use_bias, rng);
  if (!config.dense_blocks.empty())
    head.input_dropout_p = config.dense_blocks.back().dropout_p;
  m.dense_layers.push_back(std::move(head));
  return m;
}

ParamCount count_params(const Model& model) {
  ParamCount c;
  auto tally = [&c](const Tensor& t) {
    c.total += t.numel();
    for (double v : t.data)
      if (v != 0.0) ++c.nonzero;
  };
  if (model.input_bn) {
    tally(model.input_bn->gamma);
    tally(model.input_bn->beta);
    tally(model.input_bn->running_mean);
    tally(model.input_bn->running_var);
  }
  for (const ConvLayerState& l : model.conv_layers) {
    tally(l.layer.kernels);
    if (l.layer.bias) tally(*l.layer.bias);
  }
  for (const DenseLayerState& l : model.dense_layers) {
    tally(l.weights);
    if (l.bias) tally(*l.bias);
  }
  return c;
}

std::size_t bias_scalar_count(const Model& model) {
  std::size_t n = 0;
  for (const ConvLayerState& l : model.conv_layers)
    if (l.layer.bias) n += l.layer.bias->numel();
  for (const DenseLayerState& l : model.dense_layers)
    if (l.bias) n += l.bias->numel();
  return n;
}

ForwardResult forward(const Model& model, const Tensor& window, Mode mode,
                      Rng* rng) {
  if (window.numel() != model.config.input_len)
    throw ShapeError("forward: window has " + std::to_string(window.numel()) +
                     " samples, model expects " +
                     std::to_string(model.config.input_len));
  if (mode == Mode::train && !rng)
    throw ConfigError("forward: train mode needs an RNG for dropout");

  Tensor x({std::size_t{1}, model.config.input_len});
  x.data = window.data;

  if (model.input_bn) {
    // single-window path always normalizes with running statistics
    nn::BatchNorm bn = *model.input_bn;
    const std::size_t f = bn.features();
    Tensor shaped = model.config.input_bn_per_position
                        ? Tensor({f, std::size_t{1}})
                        : Tensor({std::size_t{1}, model.config.input_len});
    shaped.data = x.data;
    std::vector<Tensor> out =
        nn::batchnorm_forward({shaped}, bn, Mode::infer);
    x.data = out[0].data;
  }

  for (const ConvLayerState& l : model.conv_layers) {
    x = nn::conv1d_forward(x, l.layer);
    x = nn::maxpool1d_forward(x, l.pool_size).output;
    x = nn::relu(x);
  }

  Tensor flat({x.numel()});
  flat.data = std::move(x.data);

  Tensor logits;
  for (std::size_t i = 0; i < model.dense_layers.size(); ++i) {
    const DenseLayerState& l = model.dense_layers[i];
    if (mode == Mode::train && l.input_dropout_p > 0.0)
      flat = nn::dropout_forward(flat, l.input_dropout_p, mode, *rng).output;
    Tensor y = nn::dense_forward(flat, l.weights, l.bias);
    if (i + 1 < model.dense_layers.size()) {
      flat = nn::relu(y);
    } else {
      logits = std::move(y);
    }
  }

  ForwardResult r;
  r.probabilities = Tensor({logits.numel()});
  double m = logits.data[0];
  for (double v : logits.data) m = std::max(m, v);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    r.probabilities.data[i] = std::exp(logits.data[i] - m);
    z += r.probabilities.data[i];
  }
  for (double& p : r.probabilities.data) p /= z;
  r.predicted_label = 0;
  for (std::size_t i = 1; i < r.probabilities.numel(); ++i)
    if (r.probabilities.data[i] > r.probabilities.data[r.predicted_label])
      r.predicted_label = i;
  return r;
}

std::vector<Tensor*> collect_trainable(Model& model) {
  std::vector<Tensor*> params;
  if (model.input_bn) {
    params.push_back(&model.input_bn->gamma);
    params.push_back(&model.input_bn->beta);
  }
  const bool binarized = model.mode == WeightMode::binarized;
  for (ConvLayerState& l : model.conv_layers) {
    params.push_back(binarized ? &*l.latent : &l.layer.kernels);
    if (l.layer.bias) params.push_back(&*l.layer.bias);
  }
  for (DenseLayerState& l : model.dense_layers) {
    params.push_back(binarized ? &*l.latent : &l.weights);
    if (l.bias) params.push_back(&*l.bias);
  }
  return params;
}

std::vector<NamedTensorRef> named_tensors(Model& model) {
  std::vector<NamedTensorRef> refs;
  auto add = [&refs](std::string name, Tensor& t, bool as_mask = false) {
    refs.push_back({std::move(name), &t, as_mask});
  };
  if (model.input_bn) {
    add("input_bn.gamma", model.input_bn->gamma);
    add("input_bn.beta", model.input_bn->beta);
    add("input_bn.running_mean", model.input_bn->running_mean);
    add("input_bn.running_var", model.input_bn->running_var);
  }
  for (std::size_t i = 0; i < model.conv_layers.size(); ++i) {
    ConvLayerState& l = model.conv_layers[i];
    const std::string p = "conv" + std::to_string(i) + ".";
    add(p + "kernels", l.layer.kernels);
    if (l.layer.bias) add(p + "bias", *l.layer.bias);
    if (l.mask) add(p + "mask", *l.mask, true);
    if (l.latent) add(p + "latent", *l.latent);
  }
  for (std::size_t i = 0; i < model.dense_layers.size(); ++i) {
    DenseLayerState& l = model.dense_layers[i];
    const std::string p = "dense" + std::to_string(i) + ".";
    add(p + "weights", l.weights);
    if (l.bias) add(p + "bias", *l.bias);
    if (l.mask) add(p + "mask", *l.mask, true);
    if (l.latent) add(p + "latent", *l.latent);
  }
  return refs;
}

}  // namespace apnea
