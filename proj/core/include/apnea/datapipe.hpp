#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apnea/rng.hpp"
#include "apnea/tensor.hpp"

namespace apnea {

inline constexpr std::size_t kSampleRate = 128;
inline constexpr std::size_t kWindowSeconds = 11;
inline constexpr std::size_t kWindowSamples = kSampleRate * kWindowSeconds;
inline constexpr std::size_t kLabelOffsetSeconds = 1;  // 2nd second of window

struct EcgRecord {
  std::string patient_id;
  std::size_t sample_rate = kSampleRate;
  std::vector<double> samples;        // one lead, millivolts
  std::vector<std::uint8_t> second_labels;  // 1 apnea, 0 normal
  bool truncated = false;             // trailing partial second dropped
  bool no_apnea_events = false;

  std::size_t seconds() const { return second_labels.size(); }
};

struct SampleWindow {
  std::vector<double> values;  // kWindowSamples, standardized
  std::uint8_t label = 0;
  std::string patient_id;
  std::size_t start_second = 0;

  std::size_t labeled_second() const {
    return start_second + kLabelOffsetSeconds;
  }
};

struct DatasetSplit {
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> validation;
  std::vector<SampleWindow> test;
  std::uint64_t split_seed = 0;
  bool balanced = true;  // false when a partition had a single class
};

// CSV layout: header "patient_id,sample_rate", one sample per line;
// labels come from a sibling file "<stem>.labels", one 0/1 per line.
EcgRecord load_record_csv(const std::filesystem::path& samples_path);

// Raw binary layout: magic "APNEAREC", patient-id length + bytes, u32 rate,
// u64 sample count, little-endian f64 samples, u64 label count, label bytes.
EcgRecord load_record_binary(const std::filesystem::path& path);
void save_record_binary(const EcgRecord& record,
                        const std::filesystem::path& path);

// Dispatches on extension: .csv or .ecg.
EcgRecord load_record(const std::filesystem::path& path);

// In-place standardization to zero mean and unit variance (population
// standard deviation); constant input maps to all zeros.
void standardize(std::vector<double>& values);

// An S-second record yields S-10 windows; window i spans seconds
// [i, i+11) and carries the label of second i+1. Values are standardized.
std::vector<SampleWindow> make_windows(const EcgRecord& record);

enum class SplitMode { pooled, contiguous };

// Pooled: seeded uniform shuffle, then 10% test, 10% validation (floor of
// n/10 each), remainder train. Contiguous: the same cut points over the
// unshuffled sequence, for leakage-sensitive experiments.
// Minority-class windows in train and validation are then duplicated
// (seeded, with replacement) to exact class parity; test is untouched.
DatasetSplit split_and_balance(std::vector<SampleWindow> windows,
                               std::uint64_t seed,
                               SplitMode mode = SplitMode::pooled);

struct SynthProfile {
  std::string patient_id = "synth000";
  std::size_t duration_seconds = 120;
  // Half-open second ranges marked apneic.
  std::vector<std::pair<std::size_t, std::size_t>> apnea_episodes;
  double beat_rate_hz = 1.0;       // normal heart rate of the pseudo-ECG
  double apnea_rate_factor = 0.5;  // bradycardia during events
  double apnea_amplitude_factor = 1.6;
  double noise_sd = 0.05;          // 0 gives an exactly periodic waveform
};

EcgRecord synth_record(const SynthProfile& profile, std::uint64_t seed);

// Window shard container ("APNEAWIN"): windows with labels and provenance.
void save_windows(const std::vector<SampleWindow>& windows,
                  const std::filesystem::path& path);
std::vector<SampleWindow> load_windows(const std::filesystem::path& path);

}  // namespace apnea
