#include "apnea/costmodel.hpp"

#include <cstdio>
#include <sstream>

#include "apnea/errors.hpp"

namespace apnea {

nn::OpCounts count_ops(const Model& model) {
  const LayerGeometry geom = validate_geometry(model.config);
  nn::CountMode cmode = nn::CountMode::dense;
  if (model.mode == WeightMode::pruned) cmode = nn::CountMode::pruned;
  if (model.mode == WeightMode::binarized) cmode = nn::CountMode::binarized;

  nn::OpCounts total;
  // per-window standardization: subtract the mean, scale by 1/sd
  total.multiplications += model.config.input_len;
  total.additions += model.config.input_len;
  if (model.input_bn) {
    // folded inference-time affine per sample position
    total.multiplications += model.config.input_len;
    total.additions += model.config.input_len;
  }

  std::size_t len = model.config.input_len;
  for (std::size_t j = 0; j < model.conv_layers.size(); ++j) {
    const ConvLayerState& l = model.conv_layers[j];
    total += nn::conv1d_op_counts(l.layer, len, cmode,
                                  l.mask ? &*l.mask : nullptr);
    len = geom.pool_output_lengths[j];
  }
  for (const DenseLayerState& l : model.dense_layers) {
    total += nn::dense_op_counts(l.weights.extent(0), l.weights.extent(1),
                                 l.bias.has_value(), cmode,
                                 l.mask ? &*l.mask : nullptr);
  }
  return total;
}

double estimate_energy(const nn::OpCounts& counts, const EnergyModel& energy) {
  if (energy.mac_energy_joules <= 0.0 || energy.add_energy_joules <= 0.0)
    throw ConfigError("energy constants must be positive");
  const double macs = static_cast<double>(counts.multiplications);
  const double surplus =
      counts.additions > counts.multiplications
          ? static_cast<double>(counts.additions - counts.multiplications)
          : 0.0;
  return macs * energy.mac_energy_joules + surplus * energy.add_energy_joules;
}

CostReport cost_report(const Model& model, std::string name,
                       const EnergyModel& energy) {
  CostReport r;
  r.name = name.empty() ? to_string(model.mode) : std::move(name);
  const nn::OpCounts ops = count_ops(model);
  r.multiplications = ops.multiplications;
  r.additions = ops.additions;
  const ParamCount pc = count_params(model);
  r.total_params = pc.total;
  r.nonzero_params = pc.nonzero;
  r.energy_joules = estimate_energy(ops, energy);
  return r;
}

namespace {

std::string energy_uj(double joules) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f", joules * 1e6);
  return buf;
}

}  // namespace

std::string format_cost_table(const std::vector<CostReport>& rows) {
  std::size_t name_w = 5;
  for (const CostReport& r : rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %14s  %15s  %15s  %12s\n",
                static_cast<int>(name_w), "Model", "Net Parameters",
                "Multiplications", "Additions", "Energy (uJ)");
  out << line;
  for (const CostReport& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %14zu  %15llu  %15llu  %12s\n",
                  static_cast<int>(name_w), r.name.c_str(), r.nonzero_params,
                  static_cast<unsigned long long>(r.multiplications),
                  static_cast<unsigned long long>(r.additions),
                  energy_uj(r.energy_joules).c_str());
    out << line;
  }
  return out.str();
}

std::string format_cost_csv(const std::vector<CostReport>& rows) {
  std::ostringstream out;
  out << "model,net_parameters,multiplications,additions,energy_uj\n";
  for (const CostReport& r : rows) {
    out << r.name << ',' << r.nonzero_params << ',' << r.multiplications << ','
        << r.additions << ',' << energy_uj(r.energy_joules) << '\n';
  }
  return out.str();
}

}  // namespace apnea
