#include "apnea/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "apnea/errors.hpp"
#include "apnea/model_io.hpp"

namespace apnea {

namespace {


struct ConvCache {
  Tensor input;
  std::vector<std::size_t> conv_out_shape;
  nn::MaxPool1dResult pool;
};

struct DenseCache {
  Tensor input;                 // post-dropout input to the matmul
  std::optional<Tensor> mask;   // dropout mask applied to that input
  Tensor pre_activation;        // hidden layers only
};

struct SampleCache {
  std::vector<ConvCache> conv;
  std::vector<DenseCache> dense;
  Tensor logit_grad;
  double loss = 0.0;
  bool correct = false;
};

// Gradient accumulators laid out exactly like collect_trainable().
struct GradSet {
  std::optional<Tensor> bn_gamma, bn_beta;
  std::vector<Tensor> conv_weights;  // effective-weight grads
  std::vector<std::optional<Tensor>> conv_bias;
  std::vector<Tensor> dense_weights;
  std::vector<std::optional<Tensor>> dense_bias;

  explicit GradSet(const Model& m) {
    if (m.input_bn) {
      bn_gamma = zeros_like(m.input_bn->gamma);
      bn_beta = zeros_like(m.input_bn->beta);
    }
    for (const ConvLayerState& l : m.conv_layers) {
      conv_weights.push_back(zeros_like(l.layer.kernels));
      conv_bias.push_back(l.layer.bias ? std::optional<Tensor>(zeros_like(*l.layer.bias))
                                       : std::nullopt);
    }
    for (const DenseLayerState& l : m.dense_layers) {
      dense_weights.push_back(zeros_like(l.weights));
      dense_bias.push_back(l.bias ? std::optional<Tensor>(zeros_like(*l.bias))
                                  : std::nullopt);
    }
  }
};

void add_into(Tensor& acc, const Tensor& g) {
  for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += g.data[i];
}

Tensor bn_shaped(const Model& model, const std::vector<double>& values) {
  Tensor t(model.config.input_bn_per_position
               ? std::vector<std::size_t>{model.config.input_len, 1}
               : std::vector<std::size_t>{1, model.config.input_len});
  t.data = values;
  return t;
}

// Forward through conv and dense stacks for one sample; fills the cache.
// `x` enters as the (normalized) [1 x input_len] signal.
void sample_forward(const Model& model, Tensor x, std::uint8_t label,
                    double inv_batch, Rng& dropout_rng, SampleCache& cache) {
  for (const ConvLayerState& l : model.conv_layers) {
    ConvCache cc;
    cc.input = std::move(x);
    Tensor conv_out = nn::conv1d_forward(cc.input, l.layer);
    cc.conv_out_shape = conv_out.shape;
    cc.pool = nn::maxpool1d_forward(conv_out, l.pool_size);
    x = nn::relu(cc.pool.output);
    cache.conv.push_back(std::move(cc));
  }

  Tensor flat({x.numel()});
  flat.data = std::move(x.data);

  Tensor logits;
  for (std::size_t i = 0; i < model.dense_layers.size(); ++i) {
    const DenseLayerState& l = model.dense_layers[i];
    DenseCache dc;
    if (l.input_dropout_p > 0.0) {
      nn::DropoutResult dr =
          nn::dropout_forward(flat, l.input_dropout_p, Mode::train, dropout_rng);
      dc.input = std::move(dr.output);
      dc.mask = std::move(dr.mask);
    } else {
      dc.input = std::move(flat);
    }
    Tensor y = nn::dense_forward(dc.input, l.weights, l.bias);
    if (i + 1 < model.dense_layers.size()) {
      dc.pre_activation = y;
      flat = nn::relu(y);
    } else {
      logits = std::move(y);
    }
    cache.dense.push_back(std::move(dc));
  }

  nn::SoftmaxLoss sm = nn::softmax_cross_entropy(logits, label);
  cache.loss = sm.loss;
  std::size_t pred = 0;
  for (std::size_t i = 1; i < sm.probabilities.numel(); ++i)
    if (sm.probabilities.data[i] > sm.probabilities.data[pred]) pred = i;
  cache.correct = pred == label;
  cache.logit_grad = std::move(sm.logit_grad);
  for (double& v : cache.logit_grad.data) v *= inv_batch;
}

// Backward for one sample; accumulates into grads and returns the gradient
// with respect to the conv stack's input (the batch-norm output).
Tensor sample_backward(const Model& model, SampleCache& cache, GradSet& grads) {
  Tensor g = std::move(cache.logit_grad);
  for (std::size_t ii = model.dense_layers.size(); ii-- > 0;) {
    const DenseLayerState& l = model.dense_layers[ii];
    DenseCache& dc = cache.dense[ii];
    nn::DenseGrads dg =
        nn::dense_backward(g, dc.input, l.weights, l.bias.has_value());
    add_into(grads.dense_weights[ii], dg.weight_grad);
    if (dg.bias_grad) add_into(*grads.dense_bias[ii], *dg.bias_grad);
    Tensor gx = std::move(dg.input_grad);
    if (dc.mask) gx = nn::dropout_backward(gx, *dc.mask);
    if (ii == 0) {
      g = std::move(gx);
    } else {
      g = nn::relu_backward(gx, cache.dense[ii - 1].pre_activation);
    }
  }

  if (!model.conv_layers.empty()) {
    Tensor shaped(cache.conv.back().pool.output.shape);
    shaped.data = std::move(g.data);
    g = std::move(shaped);
  }
  for (std::size_t jj = model.conv_layers.size(); jj-- > 0;) {
    const ConvLayerState& l = model.conv_layers[jj];
    ConvCache& cc = cache.conv[jj];
    g = nn::relu_backward(g, cc.pool.output);
    g = nn::maxpool1d_backward(g, cc.pool.argmax, cc.conv_out_shape);
    nn::Conv1dGrads cg = nn::conv1d_backward(g, cc.input, l.layer);
    add_into(grads.conv_weights[jj], cg.kernel_grad);
    if (cg.bias_grad) add_into(*grads.conv_bias[jj], *cg.bias_grad);
    g = std::move(cg.input_grad);
  }
  return g;
}

// Flattens the gradient set into collect_trainable() order, applying the
// straight-through gate (binarized) or mask zeroing (pruned) so optimizer
// moments never accumulate on frozen coordinates.
std::vector<const Tensor*> assemble_grads(const Model& model, GradSet& grads) {
  const bool binarized = model.mode == WeightMode::binarized;
  for (std::size_t j = 0; j < grads.conv_weights.size(); ++j) {
    const ConvLayerState& l = model.conv_layers[j];
    if (binarized) {
      grads.conv_weights[j] = binarize_backward(grads.conv_weights[j], *l.latent);
    } else if (l.mask) {
      for (std::size_t i = 0; i < l.mask->numel(); ++i)
        if (l.mask->data[i] == 0.0) grads.conv_weights[j].data[i] = 0.0;
    }
  }
  for (std::size_t j = 0; j < grads.dense_weights.size(); ++j) {
    const DenseLayerState& l = model.dense_layers[j];
    if (binarized) {
      grads.dense_weights[j] = binarize_backward(grads.dense_weights[j], *l.latent);
    } else if (l.mask) {
      for (std::size_t i = 0; i < l.mask->numel(); ++i)
        if (l.mask->data[i] == 0.0) grads.dense_weights[j].data[i] = 0.0;
    }
  }

  std::vector<const Tensor*> out;
  if (grads.bn_gamma) {
    out.push_back(&*grads.bn_gamma);
    out.push_back(&*grads.bn_beta);
  }
  for (std::size_t j = 0; j < grads.conv_weights.size(); ++j) {
    out.push_back(&grads.conv_weights[j]);
    if (grads.conv_bias[j]) out.push_back(&*grads.conv_bias[j]);
  }
  for (std::size_t j = 0; j < grads.dense_weights.size(); ++j) {
    out.push_back(&grads.dense_weights[j]);
    if (grads.dense_bias[j]) out.push_back(&*grads.dense_bias[j]);
  }
  return out;
}

struct BatchStats {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

BatchStats run_batch(Model& model, const std::vector<const SampleWindow*>& batch,
                     nn::AdamState& adam, Rng& dropout_rng) {
  const std::size_t b = batch.size();
  const double inv_batch = 1.0 / static_cast<double>(b);

  std::vector<Tensor> bn_out;
  nn::BatchNormCache bn_cache;
  if (model.input_bn) {
    std::vector<Tensor> bn_in;
    bn_in.reserve(b);
    for (const SampleWindow* w : batch) bn_in.push_back(bn_shaped(model, w->values));
    bn_out = nn::batchnorm_forward(bn_in, *model.input_bn, Mode::train, &bn_cache);
  }

  GradSet grads(model);
  std::vector<SampleCache> caches(b);
  std::vector<Tensor> bn_upstream;
  if (model.input_bn) bn_upstream.reserve(b);

  BatchStats stats;
  for (std::size_t s = 0; s < b; ++s) {
    Tensor x({std::size_t{1}, model.config.input_len});
    if (model.input_bn) {
      x.data = std::move(bn_out[s].data);
    } else {
      x.data = batch[s]->values;
    }
    sample_forward(model, std::move(x), batch[s]->label, inv_batch,
                   dropout_rng, caches[s]);
    stats.loss_sum += caches[s].loss;
    if (caches[s].correct) ++stats.correct;
  }
  for (std::size_t s = 0; s < b; ++s) {
    Tensor gin = sample_backward(model, caches[s], grads);
    if (model.input_bn) {
      Tensor shaped = bn_shaped(model, {});
      shaped.data = std::move(gin.data);
      bn_upstream.push_back(std::move(shaped));
    }
  }
  if (model.input_bn) {
    nn::BatchNormGrads bg =
        nn::batchnorm_backward(bn_upstream, *model.input_bn, bn_cache);
    add_into(*grads.bn_gamma, bg.gamma_grad);
    add_into(*grads.bn_beta, bg.beta_grad);
  }

  std::vector<Tensor*> params = collect_trainable(model);
  std::vector<const Tensor*> grad_ptrs = assemble_grads(model, grads);
  nn::adam_step(params, grad_ptrs, adam);

  if (model.mode == WeightMode::pruned) enforce_masks(model);
  if (model.mode == WeightMode::binarized) refresh_binarized_weights(model);
  return stats;
}

}  // namespace

TrainResult train(Model model, const DatasetSplit& split,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
  if (config.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (config.batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (split.train.size() < 2)
    throw ConfigError("train partition needs at least 2 windows");
  if (split.validation.empty())
    throw ConfigError("validation partition is empty");

  if (config.mode == WeightMode::pruned && model.mode == WeightMode::dense)
    attach_masks(model);
  if (config.mode == WeightMode::binarized && model.mode == WeightMode::dense)
    attach_latents(model);
  if (model.mode != config.mode)
    throw ConfigError("model is in " + to_string(model.mode) +
                      " mode but the run wants " + to_string(config.mode));

  ScheduleFn schedule = config.schedule_override
                            ? *config.schedule_override
                            : cubic_schedule(config.prune);
  const bool pruned = config.mode == WeightMode::pruned;
  const double terminal_sparsity = pruned ? schedule(config.epochs - 1) : 0.0;

  std::vector<Tensor*> params = collect_trainable(model);
  std::vector<const Tensor*> param_views(params.begin(), params.end());
  nn::AdamState adam = nn::adam_init(param_views, config.learning_rate);

  Rng order_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> indices(split.train.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});

  TrainResult result;
  result.model = model;
  double best_acc = -1.0;

  for (std::size_t e = 0; e < config.epochs; ++e) {
    if (pruned) apply_magnitude_mask(model, schedule(e));
    order_rng.shuffle(indices);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < indices.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(indices.size(), start + config.batch_size);
      if (end - start < 2) continue;
      std::vector<const SampleWindow*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(&split.train[indices[i]]);
      BatchStats bs = run_batch(model, batch, adam, dropout_rng);
      loss_sum += bs.loss_sum;
      correct += bs.correct;
      seen += batch.size();
    }
    if (seen == 0)
      throw ConfigError("no trainable batch of size >= 2 could be formed");

    Evaluation val = evaluate(model, split.validation);
    const double val_acc =
        static_cast<double>(val.metrics.tp + val.metrics.tn) /
        static_cast<double>(val.metrics.count());

    EpochStats stats;
    stats.epoch = e + 1;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    stats.val_loss = val.mean_loss;
    stats.val_accuracy = val_acc;
    result.history.epochs.push_back(stats);

    if (on_epoch) on_epoch(model, stats);

    // In pruned mode only epochs already at the run's terminal sparsity are
    // checkpoint candidates, so the returned model keeps its sparsity.
    const bool candidate = !pruned || schedule(e) >= terminal_sparsity - 1e-12;
    if (candidate && val_acc > best_acc) {
      best_acc = val_acc;
      result.model = model;
      result.history.best_epoch = stats.epoch;  // 1-based, like history rows
    }
  }
  return result;
}

PatientModelResult derive_patient_model(const Model& generic,
                                        const DatasetSplit& patient_split,
                                        const TrainConfig& config,
                                        const EpochCallback& on_epoch) {
  if (generic.conv_layers.empty())
    throw ConfigError("generic model has no conv block to remove");
  if (generic.mode != WeightMode::dense)
    throw ConfigError("patient derivation starts from a dense-mode model");

  ArchitectureConfig cfg = generic.config;
  cfg.conv_blocks.pop_back();

  Rng init_rng(config.seed);
  Model derived = build_model(cfg, init_rng);
  if (generic.input_bn) *derived.input_bn = *generic.input_bn;
  for (std::size_t j = 0; j < derived.conv_layers.size(); ++j) {
    derived.conv_layers[j].layer.kernels = generic.conv_layers[j].layer.kernels;
    if (generic.conv_layers[j].layer.bias)
      derived.conv_layers[j].layer.bias = generic.conv_layers[j].layer.bias;
  }

  PatientModelResult r;
  auto has_positive = [](const std::vector<SampleWindow>& ws) {
    return std::any_of(ws.begin(), ws.end(),
                       [](const SampleWindow& w) { return w.label == 1; });
  };
  r.no_positive_windows = !has_positive(patient_split.train) &&
                          !has_positive(patient_split.validation) &&
                          !has_positive(patient_split.test);

  TrainResult tr = train(std::move(derived), patient_split, config, on_epoch);
  r.model = std::move(tr.model);
  r.history = std::move(tr.history);
  return r;
}

Evaluation evaluate(const Model& model, const std::vector<SampleWindow>& windows) {
  if (windows.empty()) throw ConfigError("evaluate: empty window set");
  Evaluation ev;
  ev.predictions.reserve(windows.size());
  double loss_sum = 0.0;
  for (const SampleWindow& w : windows) {
    Tensor input({w.values.size()});
    input.data = w.values;
    ForwardResult fr = forward(model, input, Mode::infer);
    ev.predictions.push_back(fr.predicted_label);
    ev.metrics.add(fr.predicted_label, w.label);
    const double p = std::max(fr.probabilities.data[w.label], 1e-300);
    loss_sum += -std::log(p);
  }
  ev.mean_loss = loss_sum / static_cast<double>(windows.size());
  return ev;
}

void save_history_csv(const TrainHistory& history,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const EpochStats& s : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f\n", s.epoch,
                  s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy);
    out << line;
  }
  if (!out) throw DataError("write failed: '" + path.string() + "'");
}

}  // namespace apnea
