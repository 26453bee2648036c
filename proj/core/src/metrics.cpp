#include "apnea/metrics.hpp"

namespace apnea {

namespace {

std::optional<double> percent(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> Metrics::accuracy() const {
  return percent(tp + tn, count());
}

std::optional<double> Metrics::sensitivity() const {
  return percent(tp, tp + fn);
}

std::optional<double> Metrics::specificity() const {
  return percent(tn, tn + fp);
}

void Metrics::add(std::size_t predicted, std::size_t actual) {
  if (actual == 1) {
    predicted == 1 ? ++tp : ++fn;
  } else {
    predicted == 1 ? ++fp : ++tn;
  }
}

}  // namespace apnea
