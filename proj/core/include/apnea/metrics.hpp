#pragma once

#include <cstdint>
#include <optional>

namespace apnea {

// Apnea (label 1) is the positive class.
struct Metrics {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t count() const { return tp + fp + tn + fn; }
  std::optional<double> accuracy() const;     // percent
  std::optional<double> sensitivity() const;  // percent, tp / (tp + fn)
  std::optional<double> specificity() const;  // percent, tn / (tn + fp)

  void add(std::size_t predicted, std::size_t actual);
};

}  // namespace apnea
