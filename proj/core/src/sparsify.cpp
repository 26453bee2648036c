#include "apnea/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apnea/errors.hpp"

namespace apnea {

double sparsity_at(const PruneSchedule& schedule, std::size_t epoch) {
  if (schedule.initial_sparsity < 0.0 ||
      schedule.initial_sparsity > schedule.final_sparsity ||
      schedule.final_sparsity >= 1.0)
    throw ConfigError("prune schedule: need 0 <= initial <= final < 1");
  if (schedule.ramp_epochs == 0 || epoch >= schedule.ramp_epochs)
    return schedule.final_sparsity;
  const double frac = 1.0 - static_cast<double>(epoch) /
                                static_cast<double>(schedule.ramp_epochs);
  return schedule.final_sparsity +
         (schedule.initial_sparsity - schedule.final_sparsity) * frac * frac *
             frac;
}

ScheduleFn cubic_schedule(PruneSchedule schedule) {
  return [schedule](std::size_t epoch) { return sparsity_at(schedule, epoch); };
}

namespace {

template <typename Fn>
void for_each_prunable(Model& model, Fn&& fn) {
  for (ConvLayerState& l : model.conv_layers) fn(l.layer.kernels, l.mask);
  for (DenseLayerState& l : model.dense_layers) fn(l.weights, l.mask);
}

void mask_tensor(Tensor& weights, Tensor& mask, double target) {
  const std::size_t n = weights.numel();
  const std::size_t want = masked_count_for(target, n);
  std::size_t masked = 0;
  for (double m : mask.data)
    if (m == 0.0) ++masked;
  if (want <= masked) return;

  std::vector<std::size_t> live;
  live.reserve(n - masked);
  for (std::size_t i = 0; i < n; ++i)
    if (mask.data[i] != 0.0) live.push_back(i);

  const std::size_t extra = want - masked;
  std::partial_sort(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(extra),
                    live.end(), [&weights](std::size_t a, std::size_t b) {
                      const double ma = std::fabs(weights.data[a]);
                      const double mb = std::fabs(weights.data[b]);
                      if (ma != mb) return ma < mb;
                      return a < b;
                    });
  for (std::size_t j = 0; j < extra; ++j) {
    mask.data[live[j]] = 0.0;
    weights.data[live[j]] = 0.0;
  }
}

}  // namespace

void attach_masks(Model& model) {
  if (model.mode == WeightMode::binarized)
    throw ConfigError("cannot prune a binarized model");
  model.mode = WeightMode::pruned;
  for_each_prunable(model, [](Tensor& weights, std::optional<Tensor>& mask) {
    if (!mask) {
      mask = zeros_like(weights);
      mask->fill(1.0);
    }
  });
}

void apply_magnitude_mask(Model& model, double target_sparsity) {
  if (target_sparsity < 0.0 || target_sparsity >= 1.0)
    throw ConfigError("target sparsity must be in [0, 1)");
  if (model.mode != WeightMode::pruned)
    throw ConfigError("apply_magnitude_mask: model is not in pruned mode");
  for_each_prunable(model,
                    [target_sparsity](Tensor& weights, std::optional<Tensor>& mask) {
                      mask_tensor(weights, *mask, target_sparsity);
                    });
}

void enforce_masks(Model& model) {
  for_each_prunable(model, [](Tensor& weights, std::optional<Tensor>& mask) {
    if (!mask) return;
    for (std::size_t i = 0; i < weights.numel(); ++i)
      if (mask->data[i] == 0.0) weights.data[i] = 0.0;
  });
}

std::size_t masked_count_for(double target, std::size_t n) {
  const double x = target * static_cast<double>(n);
  auto want = static_cast<std::size_t>(x);
  // snap up when x sits within relative 1e-9 of the next integer; decimal
  // targets like 0.7 otherwise floor one short of the exact product
  if (static_cast<double>(want + 1) - x <=
      1e-9 * std::max(1.0, x))
    ++want;
  return want;
}

double tensor_sparsity(const Tensor& mask) {
  if (mask.numel() == 0) return 0.0;
  std::size_t zeros = 0;
  for (double m : mask.data)
    if (m == 0.0) ++zeros;
  return static_cast<double>(zeros) / static_cast<double>(mask.numel());
}

Tensor binarize_forward_weights(const Tensor& latent) {
  Tensor out = latent;
  for (double& v : out.data) v = v < 0.0 ? -1.0 : 1.0;
  return out;
}

Tensor binarize_backward(const Tensor& upstream_grad, const Tensor& latent) {
  if (!upstream_grad.same_shape(latent))
    throw ShapeError("binarize_backward: shape mismatch");
  Tensor g = upstream_grad;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (std::fabs(latent.data[i]) > 1.0) g.data[i] = 0.0;
  return g;
}

void attach_latents(Model& model) {
  if (model.mode == WeightMode::pruned)
    throw ConfigError("cannot binarize a pruned model");
  model.mode = WeightMode::binarized;
  auto convert = [](Tensor& weights, std::optional<Tensor>& latent) {
    if (!latent) {
      latent = weights;
      for (double& v : latent->data) v = std::clamp(v, -1.0, 1.0);
    }
    weights = binarize_forward_weights(*latent);
  };
  for (ConvLayerState& l : model.conv_layers) convert(l.layer.kernels, l.latent);
  for (DenseLayerState& l : model.dense_layers) convert(l.weights, l.latent);
}

void refresh_binarized_weights(Model& model) {
  if (model.mode != WeightMode::binarized)
    throw ConfigError("refresh_binarized_weights: model is not binarized");
  auto refresh = [](Tensor& weights, std::optional<Tensor>& latent) {
    for (double& v : latent->data) v = std::clamp(v, -1.0, 1.0);
    weights = binarize_forward_weights(*latent);
  };
  for (ConvLayerState& l : model.conv_layers) refresh(l.layer.kernels, l.latent);
  for (DenseLayerState& l : model.dense_layers) refresh(l.weights, l.latent);
}

}  // namespace apnea
