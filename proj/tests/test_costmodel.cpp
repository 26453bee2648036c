#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "apnea/costmodel.hpp"
#include "apnea/errors.hpp"
#include "apnea/model.hpp"
#include "apnea/rng.hpp"
#include "apnea/sparsify.hpp"
#include "oracles.hpp"
#include "test_profiles.hpp"

using namespace apnea;
namespace t = apnea::testing;

namespace {

// Counting oracle: simulates the naive kernel loop and increments a counter
// at every arithmetic event instead of deriving closed-form products.
nn::OpCounts enumerate_conv(const nn::Conv1d& layer, std::size_t len,
                            nn::CountMode mode, const Tensor* mask) {
  const std::size_t out_len =
      nn::conv1d_output_length(len, layer.kernel_len(), layer.stride,
                               layer.padding);
  nn::OpCounts c;
  for (std::size_t f = 0; f < layer.out_channels(); ++f) {
    for (std::size_t o = 0; o < out_len; ++o) {
      std::size_t terms = 0;
      for (std::size_t ch = 0; ch < layer.in_channels(); ++ch) {
        for (std::size_t k = 0; k < layer.kernel_len(); ++k) {
          const std::size_t flat =
              (f * layer.in_channels() + ch) * layer.kernel_len() + k;
          if (mode == nn::CountMode::pruned && mask &&
              mask->data[flat] == 0.0)
            continue;  // a hard zero weight never reaches the ALU
          if (mode == nn::CountMode::binarized) {
            // +/-1 weight: the product is a signed pass-through
          } else {
            ++c.multiplications;
          }
          if (terms > 0) ++c.additions;  // fold into the accumulator
          ++terms;
        }
      }
      if (layer.bias) ++c.additions;
    }
  }
  return c;
}

nn::OpCounts enumerate_dense(std::size_t features, std::size_t units,
                             bool has_bias, nn::CountMode mode,
                             const Tensor* mask) {
  nn::OpCounts c;
  for (std::size_t u = 0; u < units; ++u) {
    std::size_t terms = 0;
    for (std::size_t f = 0; f < features; ++f) {
      if (mode == nn::CountMode::pruned && mask &&
          mask->data[f * units + u] == 0.0)
        continue;
      if (mode != nn::CountMode::binarized) ++c.multiplications;
      if (terms > 0) ++c.additions;
      ++terms;
    }
    if (has_bias) ++c.additions;
  }
  return c;
}

}  // namespace

TEST_CASE("layer op counts match the counting oracle") {
  // the worked example: 1 in-ch, 2 filters of K=3 on L=10, valid, bias
  nn::Conv1d ex;
  ex.kernels = Tensor({2, 1, 3});
  ex.kernels.fill(0.5);
  ex.bias = Tensor({2});
  nn::OpCounts c = nn::conv1d_op_counts(ex, 10, nn::CountMode::dense);
  CHECK(c.multiplications == 48);
  CHECK(c.additions == 32 + 16);

  Rng rng(0x0C7);
  for (int n = 0; n < 60; ++n) {
    nn::Conv1d layer;
    const std::size_t in_ch = 1 + rng.below(4);
    const std::size_t out_ch = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(6);
    layer.stride = 1 + rng.below(3);
    layer.padding = rng.below(2) ? Padding::same : Padding::valid;
    layer.kernels = t::random_tensor(rng, {out_ch, in_ch, k});
    if (rng.below(2)) layer.bias = Tensor({out_ch});
    const std::size_t len = k + rng.below(12);

    Tensor mask({out_ch, in_ch, k});
    for (double& v : mask.data) v = rng.below(3) == 0 ? 0.0 : 1.0;

    for (nn::CountMode mode : {nn::CountMode::dense, nn::CountMode::pruned,
                               nn::CountMode::binarized}) {
      const Tensor* m = mode == nn::CountMode::pruned ? &mask : nullptr;
      const nn::OpCounts got = nn::conv1d_op_counts(layer, len, mode, m);
      const nn::OpCounts want = enumerate_conv(layer, len, mode, m);
      CHECK(got.multiplications == want.multiplications);
      CHECK(got.additions == want.additions);
    }

    const std::size_t features = 1 + rng.below(12);
    const std::size_t units = 1 + rng.below(4);
    const bool bias = rng.below(2) == 1;
    Tensor dmask({features, units});
    for (double& v : dmask.data) v = rng.below(3) == 0 ? 0.0 : 1.0;
    for (nn::CountMode mode : {nn::CountMode::dense, nn::CountMode::pruned,
                               nn::CountMode::binarized}) {
      const Tensor* m = mode == nn::CountMode::pruned ? &dmask : nullptr;
      const nn::OpCounts got =
          nn::dense_op_counts(features, units, bias, mode, m);
      const nn::OpCounts want =
          enumerate_dense(features, units, bias, mode, m);
      CHECK(got.multiplications == want.multiplications);
      CHECK(got.additions == want.additions);
    }
  }

  // a fully masked layer reaches the ALU only for its bias adds
  nn::Conv1d dead;
  dead.kernels = Tensor({2, 1, 3});
  dead.bias = Tensor({2});
  Tensor zero_mask({2, 1, 3});
  zero_mask.fill(0.0);
  c = nn::conv1d_op_counts(dead, 10, nn::CountMode::pruned, &zero_mask);
  CHECK(c.multiplications == 0);
  CHECK(c.additions == 16);
}

TEST_CASE("whole-model counts: dense detector") {
  Rng rng(1);
  Model m1 = build_model(m1_profile(), rng);
  const nn::OpCounts c = count_ops(m1);

  // standardization 1408m+1408a, input BN 1408m+1408a, conv chain
  // 196,500 + 477,000 + 5,850,000, head 3,900; biased layers keep
  // additions equal to multiplications.
  CHECK(c.multiplications == 6530216);
  CHECK(c.additions == 6530216);
}

TEST_CASE("whole-model counts: binarized and patient variants") {
  Rng rng(2);
  Model m3 = build_model(m3_profile(), rng);
  attach_latents(m3);
  const nn::OpCounts b = count_ops(m3);
  CHECK(b.multiplications == 2816);  // standardization + folded BN only
  CHECK(b.additions == 6508449);
  // under 0.1% of the dense multiplication count
  CHECK(static_cast<double>(b.multiplications) <
        0.001 * 6530216.0);

  Model m4 = build_model(m4_profile(), rng);
  const nn::OpCounts p = count_ops(m4);
  CHECK(p.multiplications == 692216);
  CHECK(p.additions == 692216);
}

TEST_CASE("pruned counts: affine in sparsity over one prunable pool") {
  Rng rng(3);
  Model m = build_model(m1_profile(), rng);
  attach_masks(m);

  const std::uint64_t dense_mults = 6530216;
  const std::uint64_t pool = 6527400;  // conv + dense products

  std::uint64_t previous_gap = 0;
  bool first = true;
  for (const double s : {0.5, 0.6, 0.7, 0.8}) {
    apply_magnitude_mask(m, s);
    const nn::OpCounts c = count_ops(m);
    const auto expected = static_cast<std::uint64_t>(
        static_cast<double>(dense_mults) -
        s * static_cast<double>(pool) + 0.5);
    CHECK(c.multiplications == expected);
    CHECK(c.additions >= c.multiplications);
    const std::uint64_t gap = c.additions - c.multiplications;
    if (!first) CHECK(gap == previous_gap);
    previous_gap = gap;
    first = false;
  }
  // for this topology the biased-layer identity makes the gap zero
  CHECK(previous_gap == 0);
}

TEST_CASE("energy: published count pairs land within a hundredth of a uJ") {
  struct Row {
    const char* name;
    std::uint64_t mults, adds;
    double published_uj;
  };
  const Row rows[] = {
      {"dense", 6534116, 6546647, 2.55},
      {"pruned 50%", 3270416, 3289663, 1.28},
      {"pruned 60%", 2617676, 2630207, 1.03},
      {"pruned 70%", 1964936, 1977467, 0.77},
      {"pruned 80%", 1312196, 1324727, 0.52},
      {"binarized", 4766, 6301530, 0.13},
      {"patient", 708116, 724016, 0.28},
  };
  for (const Row& r : rows) {
    const double uj =
        estimate_energy({r.mults, r.adds}) * 1e6;
    INFO(r.name << ": " << uj << " uJ vs " << r.published_uj);
    CHECK(std::fabs(uj - r.published_uj) <= 0.01 + 1e-12);
  }
}

TEST_CASE("energy formula: MAC pricing and surplus additions") {
  const EnergyModel em;
  CHECK(estimate_energy({10, 25}, em) ==
        doctest::Approx(10 * 0.39e-12 + 15 * 20e-15));
  // additions below the MAC count are already paid for
  CHECK(estimate_energy({10, 5}, em) == doctest::Approx(10 * 0.39e-12));
  CHECK(estimate_energy({0, 0}, em) == 0.0);

  CHECK_THROWS_AS(estimate_energy({1, 1}, {0.0, 20e-15}), ConfigError);
  CHECK_THROWS_AS(estimate_energy({1, 1}, {0.39e-12, -1.0}), ConfigError);
}

TEST_CASE("cost reports: naming, parameter counts, formatting") {
  Rng rng(4);
  Model m = build_model(t::reduced_profile(), rng);
  const CostReport r = cost_report(m);
  CHECK(r.name == "dense");
  CHECK(r.total_params == count_params(m).total);
  CHECK(r.nonzero_params == count_params(m).nonzero);
  CHECK(r.energy_joules ==
        estimate_energy({r.multiplications, r.additions}));

  const CostReport named = cost_report(m, "desk");
  CHECK(named.name == "desk");

  const std::string table = format_cost_table({r, named});
  CHECK(table.find("Model") != std::string::npos);
  CHECK(table.find("Net Parameters") != std::string::npos);
  CHECK(table.find("Multiplications") != std::string::npos);
  CHECK(table.find("Additions") != std::string::npos);
  CHECK(table.find("Energy (uJ)") != std::string::npos);
  CHECK(table.find("desk") != std::string::npos);

  const std::string csv = format_cost_csv({r});
  CHECK(csv.rfind("model,net_parameters,multiplications,additions,energy_uj\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);

  // header-only output for an empty row set
  const std::string empty_csv = format_cost_csv({});
  CHECK(std::count(empty_csv.begin(), empty_csv.end(), '\n') == 1);
}

TEST_CASE("pruned whole-model counts respect the stored masks") {
  Rng rng(5);
  Model m = build_model(t::reduced_profile(), rng);
  const nn::OpCounts dense_counts = count_ops(m);
  attach_masks(m);
  apply_magnitude_mask(m, 0.5);
  const nn::OpCounts pruned_counts = count_ops(m);
  CHECK(pruned_counts.multiplications < dense_counts.multiplications);

  // recompute from the masks layer by layer, independently
  const LayerGeometry g = validate_geometry(m.config);
  std::uint64_t want = 2 * 1408;  // standardization + input BN
  for (std::size_t i = 0; i < m.conv_layers.size(); ++i) {
    std::uint64_t live = 0;
    for (double v : m.conv_layers[i].mask->data) live += v != 0.0 ? 1 : 0;
    // every retained weight fires once per output position
    want += static_cast<std::uint64_t>(g.conv_output_lengths[i]) * live;
  }
  std::uint64_t dlive = 0;
  for (double v : m.dense_layers[0].mask->data) dlive += v != 0.0 ? 1 : 0;
  want += dlive;
  CHECK(pruned_counts.multiplications == want);
}
