#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "apnea/datapipe.hpp"
#include "apnea/errors.hpp"
#include "apnea/rng.hpp"
#include "test_profiles.hpp"

using namespace apnea;
namespace t = apnea::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "apnea_datapipe_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

EcgRecord quick_record(std::size_t seconds, std::uint64_t seed,
                       std::size_t first_onset = 15) {
  SynthProfile prof;
  prof.duration_seconds = seconds;
  if (seconds > first_onset + 5)
    prof.apnea_episodes.emplace_back(first_onset, first_onset + 5);
  return synth_record(prof, seed);
}

std::pair<std::size_t, std::size_t> label_counts(
    const std::vector<SampleWindow>& ws) {
  std::size_t pos = 0, neg = 0;
  for (const SampleWindow& w : ws) (w.label == 1 ? pos : neg)++;
  return {pos, neg};
}

// Key identifying a source window independent of duplication.
using WindowKey = std::pair<std::string, std::size_t>;
WindowKey key(const SampleWindow& w) { return {w.patient_id, w.start_second}; }

}  // namespace

TEST_CASE("windowing: exhaustive structural sweep, 11..300 seconds") {
  for (std::size_t S = 11; S <= 300; ++S) {
    EcgRecord rec = quick_record(S, S);
    REQUIRE(rec.seconds() == S);
    REQUIRE(rec.samples.size() == S * kSampleRate);

    const std::vector<SampleWindow> ws = make_windows(rec);
    REQUIRE(ws.size() == S - 10);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const SampleWindow& w = ws[i];
      REQUIRE(w.values.size() == kWindowSamples);
      REQUIRE(w.start_second == i);
      REQUIRE(w.labeled_second() == i + 1);
      REQUIRE(w.label == rec.second_labels[i + 1]);
      REQUIRE(w.patient_id == rec.patient_id);

      // window i is exactly the standardized slice at sample offset i*128
      std::vector<double> slice(
          rec.samples.begin() + static_cast<std::ptrdiff_t>(i * kSampleRate),
          rec.samples.begin() +
              static_cast<std::ptrdiff_t>(i * kSampleRate + kWindowSamples));
      standardize(slice);
      REQUIRE(w.values == slice);
    }
  }

  // shorter than one window: no windows at all
  EcgRecord ten = quick_record(10, 1, 100);
  CHECK(make_windows(ten).empty());
}

TEST_CASE("windowing: adjacent windows share 1280 raw samples") {
  EcgRecord rec = quick_record(30, 9);
  for (std::size_t i = 0; i + 1 < rec.seconds() - 10; ++i) {
    // raw overlap region of windows i and i+1
    const std::size_t a_from = i * kSampleRate + kSampleRate;
    const std::size_t b_from = (i + 1) * kSampleRate;
    CHECK(a_from == b_from);
    CHECK(kWindowSamples - kSampleRate == 1280);
  }
}

TEST_CASE("standardize: zero mean, unit population variance, constant input") {
  Rng rng(4);
  std::vector<double> v(500);
  for (double& x : v) x = rng.uniform(-3.0, 7.0);
  standardize(v);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  CHECK(std::fabs(mean) < 1e-12);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-10));

  std::vector<double> flat(100, 42.0);
  standardize(flat);
  for (double x : flat) CHECK(x == 0.0);
}

TEST_CASE("split_and_balance: determinism, ratios, parity, test purity") {
  std::vector<EcgRecord> cohort = t::synth_cohort(3, 90, 21);
  const std::vector<SampleWindow> windows = t::cohort_windows(cohort);
  const std::size_t n = windows.size();
  REQUIRE(n == 3 * 80);

  const DatasetSplit a = split_and_balance(windows, 7);
  const DatasetSplit b = split_and_balance(windows, 7);
  const DatasetSplit c = split_and_balance(windows, 8);

  auto flatten = [](const DatasetSplit& s) {
    std::vector<std::pair<WindowKey, std::uint8_t>> all;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (const SampleWindow& w : *part) all.push_back({key(w), w.label});
    return all;
  };
  CHECK(flatten(a) == flatten(b));  // same seed, same split
  CHECK(flatten(a) != flatten(c));  // different seed, different split

  CHECK(a.test.size() == n / 10);
  CHECK(a.validation.size() >= n / 10);  // floor cut + oversampling growth

  // class parity in train and validation, never enforced on test
  const auto [tr_pos, tr_neg] = label_counts(a.train);
  const auto [va_pos, va_neg] = label_counts(a.validation);
  CHECK(tr_pos == tr_neg);
  CHECK(va_pos == va_neg);

  // every emitted window is one of the source windows, values included
  std::map<WindowKey, const SampleWindow*> source;
  for (const SampleWindow& w : windows) source[key(w)] = &w;
  std::set<WindowKey> test_keys, other_keys;
  for (const SampleWindow& w : a.test) test_keys.insert(key(w));
  for (const auto* part : {&a.train, &a.validation})
    for (const SampleWindow& w : *part) other_keys.insert(key(w));
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (const SampleWindow& w : *part) {
      REQUIRE(source.count(key(w)) == 1);
      REQUIRE(w.values == source[key(w)]->values);
      REQUIRE(w.label == source[key(w)]->label);
    }

  // no source window appears in both test and train/validation
  CHECK(a.test.size() == test_keys.size());  // test gets no duplicates
  for (const WindowKey& k : test_keys) CHECK(other_keys.count(k) == 0);

  // partitions jointly cover every source window exactly once pre-balance
  CHECK(test_keys.size() + other_keys.size() == n);
}

TEST_CASE("split_and_balance: contiguous mode keeps sequence order") {
  std::vector<EcgRecord> cohort = t::synth_cohort(1, 120, 3);
  const std::vector<SampleWindow> windows = t::cohort_windows(cohort);
  const std::size_t n = windows.size();
  const DatasetSplit s = split_and_balance(windows, 5, SplitMode::contiguous);

  REQUIRE(s.test.size() == n / 10);
  for (std::size_t i = 0; i < s.test.size(); ++i)
    CHECK(key(s.test[i]) == key(windows[i]));
  for (std::size_t i = 0; i < s.validation.size() && i < n / 10; ++i)
    CHECK(key(s.validation[i]) == key(windows[n / 10 + i]));
}

TEST_CASE("split_and_balance: single-class input flags balanced=false") {
  SynthProfile prof;
  prof.duration_seconds = 60;  // no episodes: all labels 0
  EcgRecord rec = synth_record(prof, 2);
  const DatasetSplit s = split_and_balance(make_windows(rec), 1);
  CHECK_FALSE(s.balanced);
  CHECK(s.train.size() + s.validation.size() + s.test.size() == 50);
}

TEST_CASE("synth_record: determinism, labels, morphology contrast") {
  SynthProfile prof;
  prof.duration_seconds = 80;
  prof.apnea_episodes = {{20, 35}, {50, 60}};

  EcgRecord a = synth_record(prof, 42);
  EcgRecord b = synth_record(prof, 42);
  EcgRecord c = synth_record(prof, 43);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);

  REQUIRE(a.seconds() == 80);
  for (std::size_t s = 0; s < 80; ++s) {
    const bool in_episode = (s >= 20 && s < 35) || (s >= 50 && s < 60);
    CHECK(a.second_labels[s] == (in_episode ? 1 : 0));
  }
  CHECK_FALSE(a.no_apnea_events);

  // apneic episodes show the 1.6x taller R spikes; bradycardia halves the
  // beat count, so the contrast that survives per-second statistics is the
  // peak amplitude over a whole episode vs an equal normal stretch
  auto peak_over = [&a](std::size_t from, std::size_t to) {
    double peak = 0.0;
    for (std::size_t i = from * kSampleRate; i < to * kSampleRate; ++i)
      peak = std::max(peak, std::fabs(a.samples[i]));
    return peak;
  };
  CHECK(peak_over(20, 35) > 1.3 * peak_over(0, 15));

  SUBCASE("zero noise is exactly reproducible and periodic pre-onset") {
    SynthProfile clean;
    clean.duration_seconds = 30;
    clean.apnea_episodes = {{20, 25}};
    clean.noise_sd = 0.0;
    EcgRecord r = synth_record(clean, 7);
    EcgRecord r2 = synth_record(clean, 99);
    CHECK(r.samples == r2.samples);  // no noise, seed is irrelevant
    // 1 Hz beat at 128 Hz sampling: one-second periodicity before onset
    for (std::size_t i = 0; i < 10 * kSampleRate; ++i)
      CHECK(r.samples[i] ==
            doctest::Approx(r.samples[i + kSampleRate]).epsilon(1e-9));
  }
}

TEST_CASE("CSV records: header variants, labels, failure taxonomy") {
  const fs::path dir = temp_dir();

  const std::string body = "0.1\n0.2\n";
  std::string samples;
  for (int s = 0; s < 12; ++s)
    for (int i = 0; i < 64; ++i) samples += body;  // 12 * 128 values

  write_file(dir / "p01.csv", "patient_id,sample_rate\np01,128\n" + samples);
  write_file(dir / "p01.labels", "0\n1\n0\n1\n0\n0\n1\n0\n0\n0\n1\n0\n");
  EcgRecord rec = load_record_csv(dir / "p01.csv");
  CHECK(rec.patient_id == "p01");
  CHECK(rec.sample_rate == 128);
  CHECK(rec.seconds() == 12);
  CHECK(rec.samples.size() == 12 * 128);
  CHECK(rec.second_labels[1] == 1);
  CHECK_FALSE(rec.truncated);
  CHECK_FALSE(rec.no_apnea_events);

  // headerless variant: first line is directly "<id>,<rate>"
  write_file(dir / "p02.csv", "p02,128\n" + samples);
  write_file(dir / "p02.labels", "1\n1\n1\n1\n1\n1\n1\n1\n1\n1\n1\n1\n");
  CHECK(load_record_csv(dir / "p02.csv").patient_id == "p02");

  // trailing partial second is dropped and flagged
  write_file(dir / "p03.csv", "p03,128\n" + samples + "0.5\n0.5\n");
  write_file(dir / "p03.labels", "0\n0\n0\n0\n0\n0\n0\n0\n0\n0\n0\n1\n");
  EcgRecord trunc = load_record_csv(dir / "p03.csv");
  CHECK(trunc.truncated);
  CHECK(trunc.seconds() == 12);

  // all-zero labels raise the no-apnea flag
  write_file(dir / "p04.csv", "p04,128\n" + samples);
  write_file(dir / "p04.labels", "0\n0\n0\n0\n0\n0\n0\n0\n0\n0\n0\n0\n");
  CHECK(load_record_csv(dir / "p04.csv").no_apnea_events);

  SUBCASE("failures carry the offending location") {
    write_file(dir / "bad_rate.csv", "p05,500\n" + samples);
    write_file(dir / "bad_rate.labels", "0\n");
    CHECK_THROWS_WITH_AS(load_record_csv(dir / "bad_rate.csv"),
                         doctest::Contains("sample rate 500"), DataError);

    write_file(dir / "bad_sample.csv", "p06,128\n0.1\nnot_a_number\n");
    write_file(dir / "bad_sample.labels", "0\n");
    CHECK_THROWS_WITH_AS(load_record_csv(dir / "bad_sample.csv"),
                         doctest::Contains(":3:"), DataError);

    write_file(dir / "bad_label.csv", "p07,128\n" + samples);
    write_file(dir / "bad_label.labels", "0\n2\n");
    CHECK_THROWS_WITH_AS(load_record_csv(dir / "bad_label.csv"),
                         doctest::Contains("label must be 0 or 1"), DataError);

    write_file(dir / "count.csv", "p08,128\n" + samples);
    write_file(dir / "count.labels", "0\n0\n0\n");
    CHECK_THROWS_WITH_AS(load_record_csv(dir / "count.csv"),
                         doctest::Contains("12 whole seconds"), DataError);

    write_file(dir / "orphan.csv", "p09,128\n" + samples);
    CHECK_THROWS_AS(load_record_csv(dir / "orphan.csv"), DataError);

    CHECK_THROWS_AS(load_record_csv(dir / "missing.csv"), DataError);
  }
}

TEST_CASE("binary records: round trip and corruption") {
  const fs::path dir = temp_dir();
  EcgRecord rec = quick_record(40, 17);
  const fs::path path = dir / "rec.ecg";
  save_record_binary(rec, path);

  EcgRecord back = load_record_binary(path);
  CHECK(back.patient_id == rec.patient_id);
  CHECK(back.samples == rec.samples);
  CHECK(back.second_labels == rec.second_labels);

  // extension dispatch
  CHECK(load_record(path).samples == rec.samples);
  CHECK_THROWS_AS(load_record(dir / "rec.wav"), DataError);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  write_file(dir / "short.ecg", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_record_binary(dir / "short.ecg"), DataError);

  std::string magic = bytes;
  magic[2] = 'x';
  write_file(dir / "magic.ecg", magic);
  CHECK_THROWS_AS(load_record_binary(dir / "magic.ecg"), DataError);
}

TEST_CASE("window shards: round trip preserves everything") {
  const fs::path dir = temp_dir();
  std::vector<EcgRecord> cohort = t::synth_cohort(2, 40, 33);
  const std::vector<SampleWindow> windows = t::cohort_windows(cohort);

  const fs::path path = dir / "w.win";
  save_windows(windows, path);
  const std::vector<SampleWindow> back = load_windows(path);
  REQUIRE(back.size() == windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(back[i].patient_id == windows[i].patient_id);
    CHECK(back[i].start_second == windows[i].start_second);
    CHECK(back[i].label == windows[i].label);
    CHECK(back[i].values == windows[i].values);
  }

  // shard writes are byte-stable
  save_windows(windows, dir / "w2.win");
  std::ifstream fa(path, std::ios::binary), fb(dir / "w2.win", std::ios::binary);
  const std::string a((std::istreambuf_iterator<char>(fa)),
                      std::istreambuf_iterator<char>());
  const std::string b((std::istreambuf_iterator<char>(fb)),
                      std::istreambuf_iterator<char>());
  CHECK(a == b);

  CHECK_THROWS_AS(load_windows(dir / "nope.win"), DataError);
}
