#pragma once

#include <cstddef>
#include <functional>

#include "apnea/model.hpp"
#include "apnea/tensor.hpp"

namespace apnea {

struct PruneSchedule {
  double initial_sparsity = 0.50;
  double final_sparsity = 0.80;
  std::size_t ramp_epochs = 50;
};

// Cubic polynomial decay: s(e) = final + (initial - final) * (1 - e/ramp)^3,
// clamped at final_sparsity once e >= ramp_epochs.
double sparsity_at(const PruneSchedule& schedule, std::size_t epoch);

// Injectable schedule for tests that want a linear ramp.
using ScheduleFn = std::function<double(std::size_t epoch)>;
ScheduleFn cubic_schedule(PruneSchedule schedule);

// Converts a model to pruned mode, attaching all-ones masks to every conv
// kernel and dense weight tensor. Biases and batch norm are left alone.
void attach_masks(Model& model);

// Within each prunable tensor, masks the floor(target * n) smallest-|w|
// entries (ties to the lowest flat index). Already-masked entries stay
// masked. Masked weights are set to exactly 0.
void apply_magnitude_mask(Model& model, double target_sparsity);

// Re-zeroes every masked weight; call after each optimizer step.
void enforce_masks(Model& model);

// Achieved sparsity of one prunable tensor (masked fraction).
double tensor_sparsity(const Tensor& mask);

// floor(target * n) with a relative tolerance, so decimal targets hit the
// exact integer product (0.7 * 45000 must mask 31500 weights even though
// the double 0.7 multiplies out to 31499.999...).
std::size_t masked_count_for(double target, std::size_t n);

// Converts a model to binarized mode: each conv kernel and dense weight
// tensor gains a latent copy (clipped to [-1, 1]) and the stored weights
// become sign(latent) in {-1, +1}, with sign(0) = +1.
void attach_latents(Model& model);

Tensor binarize_forward_weights(const Tensor& latent);

// Straight-through estimator: passes the gradient where |latent| <= 1,
// zeroes it where |latent| > 1.
Tensor binarize_backward(const Tensor& upstream_grad, const Tensor& latent);

// Clips latents into [-1, 1] and refreshes the effective sign weights;
// call after each optimizer step on a binarized model.
void refresh_binarized_weights(Model& model);

}  // namespace apnea
