#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "apnea/costmodel.hpp"
#include "apnea/errors.hpp"
#include "apnea/metrics.hpp"
#include "apnea/model_io.hpp"
#include "apnea/sparsify.hpp"
#include "apnea/trainer.hpp"

namespace apnea::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("write failed: '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

std::string fmt_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

json metrics_json(const Metrics& m) {
  json j;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  j["accuracy"] = fmt_pct(m.accuracy());
  j["sensitivity"] = fmt_pct(m.sensitivity());
  j["specificity"] = fmt_pct(m.specificity());
  return j;
}

ArchitectureConfig resolve_arch(const std::string& profile,
                                const fs::path& arch_json) {
  if (!arch_json.empty())
    return architecture_from_json(read_text(arch_json));
  if (profile == "m1") return m1_profile();
  if (profile == "m3") return m3_profile();
  if (profile == "m4") return m4_profile();
  throw ConfigError("unknown profile '" + profile + "' (want m1, m3, or m4)");
}

DatasetSplit load_shards(const fs::path& dir) {
  DatasetSplit split;
  split.train = load_windows(dir / "train.win");
  split.validation = load_windows(dir / "validation.win");
  split.test = load_windows(dir / "test.win");
  return split;
}

std::vector<fs::path> record_files(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw DataError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".csv" || ext == ".ecg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct PartitionCounts {
  std::size_t total = 0, positive = 0, negative = 0;
};

PartitionCounts partition_counts(const std::vector<SampleWindow>& ws) {
  PartitionCounts c;
  c.total = ws.size();
  for (const SampleWindow& w : ws) (w.label == 1 ? c.positive : c.negative)++;
  return c;
}

json partition_json(const std::vector<SampleWindow>& ws) {
  const PartitionCounts c = partition_counts(ws);
  return {{"total", c.total}, {"positive", c.positive}, {"negative", c.negative}};
}

void print_metrics_block(const std::string& title, const Metrics& m) {
  std::cout << title << ": tp=" << m.tp << " fp=" << m.fp << " tn=" << m.tn
            << " fn=" << m.fn << "  accuracy=" << fmt_pct(m.accuracy())
            << " sensitivity=" << fmt_pct(m.sensitivity())
            << " specificity=" << fmt_pct(m.specificity()) << "\n";
}

json train_run_summary(const char* command, const TrainConfig& tc,
                       const ArchitectureConfig& arch,
                       const TrainResult& result, const DatasetSplit& split) {
  json j;
  j["command"] = command;
  j["mode"] = to_string(tc.mode);
  j["learning_rate"] = tc.learning_rate;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["seed"] = tc.seed;
  j["architecture"] = json::parse(architecture_to_json(arch));
  j["best_epoch"] = result.history.best_epoch;
  j["best_val_accuracy"] =
      result.history.epochs[result.history.best_epoch - 1].val_accuracy;
  const ParamCount pc = count_params(result.model);
  j["params_total"] = pc.total;
  j["params_nonzero"] = pc.nonzero;
  if (!split.test.empty()) {
    Evaluation ev = evaluate(result.model, split.test);
    j["test"] = metrics_json(ev.metrics);
    print_metrics_block("test", ev.metrics);
  }
  return j;
}

}  // namespace

void cmd_synth(const SynthArgs& args) {
  ensure_dir(args.out_dir);
  Rng rng(args.seed);
  json manifest;
  manifest["seed"] = args.seed;
  manifest["duration_seconds"] = args.duration_seconds;
  json files = json::array();
  for (std::size_t p = 0; p < args.patients; ++p) {
    SynthProfile prof;
    char id[32];
    std::snprintf(id, sizeof id, "synth%03zu", p);
    prof.patient_id = id;
    prof.duration_seconds = args.duration_seconds;
    prof.noise_sd = args.noise_sd;
    std::size_t t = 15 + rng.below(20);
    while (t + 10 < prof.duration_seconds) {
      const std::size_t len = 10 + rng.below(15);
      const std::size_t end = std::min(t + len, prof.duration_seconds);
      prof.apnea_episodes.emplace_back(t, end);
      t = end + 25 + rng.below(40);
    }
    EcgRecord rec = synth_record(prof, rng.bits());
    fs::path out;
    if (args.csv) {
      out = args.out_dir / (prof.patient_id + ".csv");
      std::string text = prof.patient_id + "," + std::to_string(kSampleRate) + "\n";
      char line[40];
      for (double v : rec.samples) {
        std::snprintf(line, sizeof line, "%.9g\n", v);
        text += line;
      }
      write_text(out, text);
      std::string labels;
      for (std::uint8_t l : rec.second_labels)
        labels += l ? "1\n" : "0\n";
      fs::path lp = out;
      lp.replace_extension(".labels");
      write_text(lp, labels);
    } else {
      out = args.out_dir / (prof.patient_id + ".ecg");
      save_record_binary(rec, out);
    }
    std::size_t apneic = 0;
    for (std::uint8_t l : rec.second_labels) apneic += l;
    files.push_back({{"patient_id", prof.patient_id},
                     {"file", out.filename().string()},
                     {"seconds", rec.seconds()},
                     {"apnea_seconds", apneic}});
    std::cout << prof.patient_id << ": " << rec.seconds() << " s, " << apneic
              << " apneic\n";
  }
  manifest["records"] = std::move(files);
  write_json(args.out_dir / "synth_manifest.json", manifest);
}

void cmd_prepare(const PrepareArgs& args) {
  const std::vector<fs::path> files = record_files(args.records_dir);
  if (files.empty())
    throw DataError("no records found in '" + args.records_dir.string() + "'");

  std::vector<SampleWindow> windows;
  json records = json::array();
  for (const fs::path& f : files) {
    EcgRecord rec = load_record(f);
    const bool excluded = rec.no_apnea_events && !args.include_no_apnea;
    std::size_t apneic = 0;
    for (std::uint8_t l : rec.second_labels) apneic += l;
    std::size_t added = 0;
    if (!excluded) {
      std::vector<SampleWindow> ws = make_windows(rec);
      if (ws.empty())
        std::cerr << "warning: '" << f.string()
                  << "' is shorter than one window, skipped\n";
      added = ws.size();
      windows.insert(windows.end(), std::make_move_iterator(ws.begin()),
                     std::make_move_iterator(ws.end()));
    } else {
      std::cerr << "note: '" << f.string()
                << "' has no apnea events, excluded (use --include-no-apnea "
                   "to keep it)\n";
    }
    records.push_back({{"patient_id", rec.patient_id},
                       {"file", f.filename().string()},
                       {"seconds", rec.seconds()},
                       {"apnea_seconds", apneic},
                       {"windows", added},
                       {"truncated", rec.truncated},
                       {"excluded_no_apnea", excluded}});
  }
  if (windows.empty()) throw DataError("no usable windows in any record");
  const std::size_t prebalance = windows.size();

  DatasetSplit split =
      split_and_balance(std::move(windows), args.seed, args.split_mode);
  if (!split.balanced)
    std::cerr << "warning: a partition is single-class, balancing skipped\n";

  ensure_dir(args.out_dir);
  save_windows(split.train, args.out_dir / "train.win");
  save_windows(split.validation, args.out_dir / "validation.win");
  save_windows(split.test, args.out_dir / "test.win");

  json manifest;
  manifest["seed"] = args.seed;
  manifest["split_mode"] =
      args.split_mode == SplitMode::pooled ? "pooled" : "contiguous";
  manifest["window_samples"] = kWindowSamples;
  manifest["windows_prebalance"] = prebalance;
  manifest["balanced"] = split.balanced;
  manifest["records"] = std::move(records);
  manifest["partitions"] = {{"train", partition_json(split.train)},
                            {"validation", partition_json(split.validation)},
                            {"test", partition_json(split.test)}};
  write_json(args.out_dir / "manifest.json", manifest);
  std::cout << "prepared " << prebalance << " windows -> train "
            << split.train.size() << ", validation " << split.validation.size()
            << ", test " << split.test.size() << "\n";
}

void cmd_train(const TrainArgs& args) {
  const ArchitectureConfig arch = resolve_arch(args.profile, args.arch_json);
  DatasetSplit split = load_shards(args.data_dir);

  Rng init_rng(args.seed);
  Model model = build_model(arch, init_rng);

  TrainConfig tc;
  tc.learning_rate = args.learning_rate;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.seed = args.seed;
  tc.mode = WeightMode::dense;
  TrainResult result = train(std::move(model), split, tc);

  ensure_dir(args.out_dir);
  save_model(result.model, args.out_dir / "model.mdl");
  save_history_csv(result.history, args.out_dir / "history.csv");
  json summary = train_run_summary("train", tc, arch, result, split);
  summary["profile"] = args.arch_json.empty() ? args.profile : "custom";
  write_json(args.out_dir / "summary.json", summary);
  std::cout << "model written to " << (args.out_dir / "model.mdl").string()
            << "\n";
}

void cmd_prune(const PruneArgs& args) {
  Model model = load_model(args.model_in);
  if (model.mode != WeightMode::dense)
    throw ConfigError("pruning starts from a dense model, '" +
                      args.model_in.string() + "' is " + to_string(model.mode));
  DatasetSplit split = load_shards(args.data_dir);

  TrainConfig tc;
  tc.learning_rate = args.learning_rate;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.seed = args.seed;
  tc.mode = WeightMode::pruned;
  tc.prune = {args.initial_sparsity, args.final_sparsity, args.ramp_epochs};
  TrainResult result = train(std::move(model), split, tc);

  ensure_dir(args.out_dir);
  save_model(result.model, args.out_dir / "model.mdl");
  save_history_csv(result.history, args.out_dir / "history.csv");
  json summary =
      train_run_summary("prune", tc, result.model.config, result, split);
  summary["initial_sparsity"] = args.initial_sparsity;
  summary["final_sparsity"] = args.final_sparsity;
  summary["ramp_epochs"] = args.ramp_epochs;
  json sparsities;
  Model& m = result.model;
  for (const NamedTensorRef& ref : named_tensors(m)) {
    if (ref.as_mask) sparsities[ref.name] = tensor_sparsity(*ref.tensor);
  }
  summary["achieved_sparsity"] = std::move(sparsities);
  write_json(args.out_dir / "summary.json", summary);
  std::cout << "model written to " << (args.out_dir / "model.mdl").string()
            << "\n";
}

void cmd_binarize(const BinarizeArgs& args) {
  const ArchitectureConfig arch = resolve_arch(args.profile, args.arch_json);
  if (arch.use_bias)
    throw ConfigError(
        "binarized training requires a bias-free profile (use_bias=false)");
  DatasetSplit split = load_shards(args.data_dir);

  Rng init_rng(args.seed);
  Model model = build_model(arch, init_rng);

  TrainConfig tc;
  tc.learning_rate = args.learning_rate;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.seed = args.seed;
  tc.mode = WeightMode::binarized;
  TrainResult result = train(std::move(model), split, tc);

  ensure_dir(args.out_dir);
  save_model(result.model, args.out_dir / "model.mdl");
  save_history_csv(result.history, args.out_dir / "history.csv");
  json summary = train_run_summary("binarize", tc, arch, result, split);
  summary["profile"] = args.arch_json.empty() ? args.profile : "custom";
  write_json(args.out_dir / "summary.json", summary);
  std::cout << "model written to " << (args.out_dir / "model.mdl").string()
            << "\n";
}

void cmd_finetune(const FinetuneArgs& args) {
  Model generic = load_model(args.model_in);

  std::vector<fs::path> files;
  if (!args.record.empty()) {
    files.push_back(args.record);
  } else if (!args.records_dir.empty()) {
    files = record_files(args.records_dir);
  } else {
    throw ConfigError("finetune needs --record or --records");
  }
  if (files.empty()) throw DataError("no records to fine-tune on");

  const std::set<std::string> wanted(args.patients.begin(), args.patients.end());

  TrainConfig tc;
  tc.learning_rate = args.learning_rate;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.seed = args.seed;
  tc.mode = WeightMode::dense;

  ensure_dir(args.out_dir);
  json rows = json::array();
  std::size_t tuned = 0;
  for (const fs::path& f : files) {
    EcgRecord rec = load_record(f);
    if (!wanted.empty() && !wanted.count(rec.patient_id)) continue;
    std::vector<SampleWindow> windows = make_windows(rec);
    if (windows.empty()) {
      std::cerr << "warning: '" << f.string() << "' too short, skipped\n";
      continue;
    }
    DatasetSplit split = split_and_balance(std::move(windows), args.seed);
    PatientModelResult pr = derive_patient_model(generic, split, tc);
    ++tuned;

    const fs::path model_path = args.out_dir / (rec.patient_id + "_m4.mdl");
    save_model(pr.model, model_path);
    save_history_csv(pr.history,
                     args.out_dir / (rec.patient_id + "_history.csv"));

    json row;
    row["patient_id"] = rec.patient_id;
    row["model"] = model_path.filename().string();
    row["flagged_no_apnea"] = pr.no_positive_windows;
    row["best_epoch"] = pr.history.best_epoch;
    if (!split.test.empty()) {
      Evaluation tuned_ev = evaluate(pr.model, split.test);
      Evaluation generic_ev = evaluate(generic, split.test);
      row["patient_model"] = metrics_json(tuned_ev.metrics);
      row["generic_model"] = metrics_json(generic_ev.metrics);
      print_metrics_block(rec.patient_id + " patient-specific",
                          tuned_ev.metrics);
      print_metrics_block(rec.patient_id + " generic", generic_ev.metrics);
    }
    if (pr.no_positive_windows)
      std::cerr << "warning: " << rec.patient_id
                << " has no apnea windows; sensitivity is undefined\n";
    rows.push_back(std::move(row));
  }
  if (tuned == 0) throw DataError("no matching patient records found");

  json summary;
  summary["command"] = "finetune";
  // filename only: absolute paths would break byte-identical reruns from
  // different working directories
  summary["generic_model"] = args.model_in.filename().string();
  summary["learning_rate"] = tc.learning_rate;
  summary["epochs"] = tc.epochs;
  summary["batch_size"] = tc.batch_size;
  summary["seed"] = tc.seed;
  summary["patients"] = std::move(rows);
  write_json(args.out_dir / "summary.json", summary);
}

void cmd_eval(const EvalArgs& args) {
  Model model = load_model(args.model_in);
  DatasetSplit split = load_shards(args.data_dir);

  std::vector<SampleWindow>* part = nullptr;
  std::vector<SampleWindow> all;
  if (args.partition == "test") {
    part = &split.test;
  } else if (args.partition == "train") {
    part = &split.train;
  } else if (args.partition == "validation") {
    part = &split.validation;
  } else if (args.partition == "all") {
    all.reserve(split.train.size() + split.validation.size() +
                split.test.size());
    for (auto* v : {&split.train, &split.validation, &split.test})
      all.insert(all.end(), v->begin(), v->end());
    part = &all;
  } else {
    throw ConfigError("unknown partition '" + args.partition +
                      "' (want train, validation, test, or all)");
  }
  if (part->empty())
    throw DataError("partition '" + args.partition + "' is empty");

  Evaluation ev = evaluate(model, *part);
  print_metrics_block("overall", ev.metrics);

  std::string csv =
      "patient,tp,fp,tn,fn,accuracy,sensitivity,specificity\n";
  auto csv_row = [&csv](const std::string& name, const Metrics& m) {
    csv += name + "," + std::to_string(m.tp) + "," + std::to_string(m.fp) +
           "," + std::to_string(m.tn) + "," + std::to_string(m.fn) + "," +
           fmt_pct(m.accuracy()) + "," + fmt_pct(m.sensitivity()) + "," +
           fmt_pct(m.specificity()) + "\n";
  };

  if (args.per_patient) {
    std::map<std::string, Metrics> by_patient;
    for (std::size_t i = 0; i < part->size(); ++i)
      by_patient[(*part)[i].patient_id].add(ev.predictions[i],
                                            (*part)[i].label);
    double acc_sum = 0, sen_sum = 0, spe_sum = 0;
    std::size_t acc_n = 0, sen_n = 0, spe_n = 0;
    for (const auto& [pid, m] : by_patient) {
      print_metrics_block(pid, m);
      csv_row(pid, m);
      if (auto a = m.accuracy()) { acc_sum += *a; ++acc_n; }
      if (auto s = m.sensitivity()) { sen_sum += *s; ++sen_n; }
      if (auto s = m.specificity()) { spe_sum += *s; ++spe_n; }
    }
    auto avg = [](double sum, std::size_t n) -> std::optional<double> {
      if (n == 0) return std::nullopt;
      return sum / static_cast<double>(n);
    };
    std::cout << "average (unweighted over " << by_patient.size()
              << " patients): accuracy=" << fmt_pct(avg(acc_sum, acc_n))
              << " sensitivity=" << fmt_pct(avg(sen_sum, sen_n))
              << " specificity=" << fmt_pct(avg(spe_sum, spe_n)) << "\n";
    csv += "average,,,,," + fmt_pct(avg(acc_sum, acc_n)) + "," +
           fmt_pct(avg(sen_sum, sen_n)) + "," + fmt_pct(avg(spe_sum, spe_n)) +
           "\n";
  }
  csv_row("overall", ev.metrics);

  if (!args.csv_out.empty()) write_text(args.csv_out, csv);
}

void cmd_predict(const PredictArgs& args) {
  Model model = load_model(args.model_in);
  EcgRecord rec = load_record(args.record);
  if (rec.seconds() < kWindowSeconds)
    throw DataError("record '" + rec.patient_id + "' has " +
                    std::to_string(rec.seconds()) +
                    " s, need at least " + std::to_string(kWindowSeconds));

  std::vector<SampleWindow> windows = make_windows(rec);
  std::string out;
  out += "# patient " + rec.patient_id + ", " + std::to_string(rec.seconds()) +
         " s; predictions cover seconds 1.." +
         std::to_string(rec.seconds() - 10) +
         " (second 0 and the final 9 seconds have no covering window)\n";
  out += "second,predicted_label,p_apnea\n";
  char line[64];
  for (const SampleWindow& w : windows) {
    Tensor input({w.values.size()});
    input.data = w.values;
    ForwardResult fr = forward(model, input, Mode::infer);
    std::snprintf(line, sizeof line, "%zu,%zu,%.6f\n", w.labeled_second(),
                  fr.predicted_label, fr.probabilities.data[1]);
    out += line;
  }
  if (args.out.empty()) {
    std::cout << out;
  } else {
    write_text(args.out, out);
    std::cout << "trace written to " << args.out.string() << "\n";
  }
}

void cmd_cost(const CostArgs& args) {
  std::vector<CostReport> rows;
  for (const fs::path& p : args.models) {
    Model model = load_model(p);
    // name rows by the path as typed (minus extension); bare stems collide
    // when every run directory holds a model.mdl
    fs::path shown = p;
    shown.replace_extension();
    rows.push_back(cost_report(model, shown.string()));
  }
  std::cout << (args.csv ? format_cost_csv(rows) : format_cost_table(rows));
}

}  // namespace apnea::cli
