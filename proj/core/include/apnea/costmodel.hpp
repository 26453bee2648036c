#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apnea/model.hpp"
#include "apnea/nn.hpp"

namespace apnea {

// 16-bit device constants; overridable for other technologies.
struct EnergyModel {
  double mac_energy_joules = 0.39e-12;
  double add_energy_joules = 20e-15;
};

struct CostReport {
  std::string name;
  std::uint64_t multiplications = 0;
  std::uint64_t additions = 0;
  std::size_t total_params = 0;
  std::size_t nonzero_params = 0;
  double energy_joules = 0.0;
};

// Counting convention (one inference over one 1408-sample window):
//   - per-window standardization: 1 multiplication + 1 addition per sample;
//   - input batch norm (folded affine at inference): 1 multiplication +
//     1 addition per sample;
//   - convolution and dense: one multiplication per weight-activation
//     product, k-1 accumulation additions per output cell with k live
//     products, one addition per bias;
//   - pruned mode counts only products whose weight is unmasked;
//   - binarized mode turns every +/-1 product into the accumulation chain
//     (k products -> k-1 additions, 0 multiplications);
//   - max pooling, ReLU, dropout, and softmax are not priced.
nn::OpCounts count_ops(const Model& model);

// energy = multiplications * mac + max(0, additions - multiplications) * add.
// Each multiplication is priced as a fused MAC that includes its paired
// accumulation; only surplus additions are priced separately.
double estimate_energy(const nn::OpCounts& counts,
                       const EnergyModel& energy = EnergyModel{});

CostReport cost_report(const Model& model, std::string name = {},
                       const EnergyModel& energy = EnergyModel{});

// Columns: Model | Net Parameters | Multiplications | Additions | Energy (uJ).
std::string format_cost_table(const std::vector<CostReport>& rows);
std::string format_cost_csv(const std::vector<CostReport>& rows);

}  // namespace apnea
