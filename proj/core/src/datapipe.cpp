#include "apnea/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "apnea/errors.hpp"
#include "binio.hpp"

namespace apnea {

namespace {

constexpr char kRecordMagic[] = "APNEAREC";
constexpr char kWindowMagic[] = "APNEAWIN";
constexpr std::uint32_t kRecordVersion = 1;
constexpr std::uint32_t kWindowVersion = 1;

void validate_record(EcgRecord& rec, const std::string& source) {
  if (rec.sample_rate != kSampleRate)
    throw DataError(source + ": sample rate " +
                    std::to_string(rec.sample_rate) + ", expected " +
                    std::to_string(kSampleRate));
  const std::size_t whole = rec.samples.size() / rec.sample_rate;
  if (rec.samples.size() != whole * rec.sample_rate) {
    rec.samples.resize(whole * rec.sample_rate);
    rec.truncated = true;
  }
  if (rec.second_labels.size() != whole)
    throw DataError(source + ": " + std::to_string(whole) +
                    " whole seconds of samples but " +
                    std::to_string(rec.second_labels.size()) + " labels");
  rec.no_apnea_events =
      std::none_of(rec.second_labels.begin(), rec.second_labels.end(),
                   [](std::uint8_t l) { return l == 1; });
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

EcgRecord load_record_csv(const std::filesystem::path& samples_path) {
  std::ifstream in(samples_path);
  if (!in)
    throw DataError("cannot open '" + samples_path.string() + "'");

  std::string line;
  if (!std::getline(in, line))
    throw DataError(samples_path.string() + ": empty file");
  // a literal column-name header may precede the value line
  if (trim(line) == "patient_id,sample_rate") {
    if (!std::getline(in, line))
      throw DataError(samples_path.string() + ": header without values");
  }
  const std::size_t comma = line.find(',');
  if (comma == std::string::npos)
    throw DataError(samples_path.string() +
                    ": malformed header, expected 'patient_id,sample_rate'");

  EcgRecord rec;
  rec.patient_id = trim(line.substr(0, comma));
  if (rec.patient_id.empty())
    throw DataError(samples_path.string() + ": empty patient id");
  try {
    rec.sample_rate = std::stoul(trim(line.substr(comma + 1)));
  } catch (const std::exception&) {
    throw DataError(samples_path.string() + ": unparsable sample rate");
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      rec.samples.push_back(v);
    } catch (const std::exception&) {
      throw DataError(samples_path.string() + ":" + std::to_string(line_no) +
                      ": unparsable sample '" + t + "'");
    }
  }

  std::filesystem::path labels_path = samples_path;
  labels_path.replace_extension(".labels");
  std::ifstream labels(labels_path);
  if (!labels)
    throw DataError("cannot open label file '" + labels_path.string() + "'");
  line_no = 0;
  while (std::getline(labels, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t == "0")
      rec.second_labels.push_back(0);
    else if (t == "1")
      rec.second_labels.push_back(1);
    else
      throw DataError(labels_path.string() + ":" + std::to_string(line_no) +
                      ": label must be 0 or 1, got '" + t + "'");
  }

  validate_record(rec, samples_path.string());
  return rec;
}

void save_record_binary(const EcgRecord& record,
                        const std::filesystem::path& path) {
  binio::Writer w(path.string());
  w.bytes(kRecordMagic, 8);
  w.u32(kRecordVersion);
  w.str(record.patient_id);
  w.u32(static_cast<std::uint32_t>(record.sample_rate));
  w.u64(record.samples.size());
  for (double v : record.samples) w.f64(v);
  w.u64(record.second_labels.size());
  for (std::uint8_t l : record.second_labels) w.u8(l);
  w.finish();
}

EcgRecord load_record_binary(const std::filesystem::path& path) {
  binio::Reader r(path.string());
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kRecordMagic, 8) != 0)
    throw DataError(path.string() + ": not a record file");
  const std::uint32_t version = r.u32();
  if (version != kRecordVersion)
    throw VersionError(path.string() + ": record format version " +
                       std::to_string(version) + ", expected " +
                       std::to_string(kRecordVersion));
  EcgRecord rec;
  rec.patient_id = r.str();
  rec.sample_rate = r.u32();
  const std::uint64_t n = r.u64();
  rec.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) rec.samples[i] = r.f64();
  const std::uint64_t labels = r.u64();
  rec.second_labels.resize(labels);
  for (std::uint64_t i = 0; i < labels; ++i) {
    const std::uint8_t l = r.u8();
    if (l > 1)
      throw DataError(path.string() + ": label byte " + std::to_string(l));
    rec.second_labels[i] = l;
  }
  validate_record(rec, path.string());
  return rec;
}

EcgRecord load_record(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".csv") return load_record_csv(path);
  if (ext == ".ecg") return load_record_binary(path);
  throw DataError("'" + path.string() +
                  "': unknown record extension, expected .csv or .ecg");
}

void standardize(std::vector<double>& values) {
  if (values.empty()) throw ShapeError("standardize: empty window");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_sd = 1.0 / std::sqrt(var);
  for (double& v : values) v = (v - mean) * inv_sd;
}

std::vector<SampleWindow> make_windows(const EcgRecord& record) {
  std::vector<SampleWindow> out;
  const std::size_t s = record.seconds();
  if (s < kWindowSeconds) return out;
  out.reserve(s - kWindowSeconds + 1);
  for (std::size_t i = 0; i + kWindowSeconds <= s; ++i) {
    SampleWindow w;
    w.values.assign(record.samples.begin() +
                        static_cast<std::ptrdiff_t>(i * kSampleRate),
                    record.samples.begin() +
                        static_cast<std::ptrdiff_t>(i * kSampleRate +
                                                    kWindowSamples));
    standardize(w.values);
    w.label = record.second_labels[i + kLabelOffsetSeconds];
    w.patient_id = record.patient_id;
    w.start_second = i;
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

bool oversample_to_parity(std::vector<SampleWindow>& part, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < part.size(); ++i)
    (part[i].label == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) return false;
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  std::size_t need = pos.size() < neg.size() ? neg.size() - pos.size()
                                             : pos.size() - neg.size();
  while (need--) {
    const std::size_t pick = minority[rng.below(minority.size())];
    part.push_back(part[pick]);
  }
  return true;
}

}  // namespace

DatasetSplit split_and_balance(std::vector<SampleWindow> windows,
                               std::uint64_t seed, SplitMode mode) {
  DatasetSplit split;
  split.split_seed = seed;
  Rng rng(seed);
  if (mode == SplitMode::pooled) rng.shuffle(windows);

  const std::size_t n = windows.size();
  const std::size_t n_test = n / 10;
  const std::size_t n_val = n / 10;
  split.test.assign(windows.begin(),
                    windows.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.validation.assign(
      windows.begin() + static_cast<std::ptrdiff_t>(n_test),
      windows.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  split.train.assign(windows.begin() + static_cast<std::ptrdiff_t>(n_test + n_val),
                     windows.end());

  const bool train_ok = oversample_to_parity(split.train, rng);
  const bool val_ok = oversample_to_parity(split.validation, rng);
  split.balanced = train_ok && val_ok;
  return split;
}

EcgRecord synth_record(const SynthProfile& profile, std::uint64_t seed) {
  EcgRecord rec;
  rec.patient_id = profile.patient_id;
  rec.sample_rate = kSampleRate;
  rec.second_labels.assign(profile.duration_seconds, 0);
  for (const auto& [a, b] : profile.apnea_episodes)
    for (std::size_t s = a; s < b && s < profile.duration_seconds; ++s)
      rec.second_labels[s] = 1;

  Rng rng(seed);
  const double dt = 1.0 / static_cast<double>(kSampleRate);
  double phase = 0.0;
  rec.samples.reserve(profile.duration_seconds * kSampleRate);
  for (std::size_t s = 0; s < profile.duration_seconds; ++s) {
    const bool apneic = rec.second_labels[s] == 1;
    const double rate =
        profile.beat_rate_hz * (apneic ? profile.apnea_rate_factor : 1.0);
    const double amp = apneic ? profile.apnea_amplitude_factor : 1.0;
    for (std::size_t k = 0; k < kSampleRate; ++k) {
      const double p = phase - std::floor(phase);
      // stylized beat: R spike, S dip, T bump
      const double v =
          std::exp(-(p - 0.30) * (p - 0.30) / (2.0 * 0.0009)) -
          0.25 * std::exp(-(p - 0.42) * (p - 0.42) / (2.0 * 0.0025)) +
          0.30 * std::exp(-(p - 0.70) * (p - 0.70) / (2.0 * 0.0064));
      double sample = amp * v;
      if (profile.noise_sd > 0.0) sample += rng.normal(0.0, profile.noise_sd);
      rec.samples.push_back(sample);
      phase += rate * dt;
    }
  }
  rec.no_apnea_events = std::none_of(rec.second_labels.begin(),
                                     rec.second_labels.end(),
                                     [](std::uint8_t l) { return l == 1; });
  return rec;
}

void save_windows(const std::vector<SampleWindow>& windows,
                  const std::filesystem::path& path) {
  binio::Writer w(path.string());
  w.bytes(kWindowMagic, 8);
  w.u32(kWindowVersion);
  w.u64(windows.size());
  for (const SampleWindow& win : windows) {
    w.str(win.patient_id);
    w.u64(win.start_second);
    w.u8(win.label);
    w.u32(static_cast<std::uint32_t>(win.values.size()));
    for (double v : win.values) w.f64(v);
  }
  w.finish();
}

std::vector<SampleWindow> load_windows(const std::filesystem::path& path) {
  binio::Reader r(path.string());
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kWindowMagic, 8) != 0)
    throw DataError(path.string() + ": not a window shard");
  const std::uint32_t version = r.u32();
  if (version != kWindowVersion)
    throw VersionError(path.string() + ": window format version " +
                       std::to_string(version));
  const std::uint64_t count = r.u64();
  std::vector<SampleWindow> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SampleWindow win;
    win.patient_id = r.str();
    win.start_second = r.u64();
    win.label = r.u8();
    if (win.label > 1)
      throw DataError(path.string() + ": label byte " +
                      std::to_string(win.label));
    const std::uint32_t len = r.u32();
    win.values.resize(len);
    for (std::uint32_t j = 0; j < len; ++j) win.values[j] = r.f64();
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace apnea
