#include <exception>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "apnea/errors.hpp"
#include "commands.hpp"

namespace {

using namespace apnea;
using namespace apnea::cli;

void add_synth(CLI::App& app, SynthArgs& args) {
  CLI::App* sub =
      app.add_subcommand("synth", "Generate synthetic labeled ECG records");
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--patients", args.patients, "Number of records")
      ->capture_default_str();
  sub->add_option("--duration", args.duration_seconds, "Record length, seconds")
      ->capture_default_str();
  sub->add_option("--seed", args.seed, "Generator seed")->capture_default_str();
  sub->add_option("--noise", args.noise_sd, "Additive noise sd")
      ->capture_default_str();
  sub->add_flag("--csv", args.csv, "Write CSV + .labels instead of .ecg");
  sub->callback([&args] { cmd_synth(args); });
}

void add_prepare(CLI::App& app, PrepareArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "prepare", "Window, standardize, split, and balance a record directory");
  sub->add_option("-i,--records", args.records_dir, "Directory of records")
      ->required();
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--seed", args.seed, "Split seed")->capture_default_str();
  sub->add_option("--split", args.split_mode, "Split mode")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, SplitMode>{
              {"pooled", SplitMode::pooled},
              {"contiguous", SplitMode::contiguous}},
          CLI::ignore_case))
      ->default_str("pooled");
  sub->add_flag("--include-no-apnea", args.include_no_apnea,
                "Keep records without any apnea events");
  sub->callback([&args] { cmd_prepare(args); });
}

void add_train(CLI::App& app, TrainArgs& args) {
  CLI::App* sub =
      app.add_subcommand("train", "Train a dense detector on prepared shards");
  sub->add_option("-d,--data", args.data_dir, "Prepared shard directory")
      ->required();
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--profile", args.profile, "Architecture profile (m1|m3|m4)")
      ->capture_default_str();
  sub->add_option("--arch-json", args.arch_json,
                  "Architecture JSON file (overrides --profile)");
  sub->add_option("--lr", args.learning_rate, "ADAM learning rate")
      ->capture_default_str();
  sub->add_option("--epochs", args.epochs, "Training epochs")
      ->capture_default_str();
  sub->add_option("--batch", args.batch_size, "Batch size")
      ->capture_default_str();
  sub->add_option("--seed", args.seed, "Init/shuffle/dropout seed")
      ->capture_default_str();
  sub->callback([&args] { cmd_train(args); });
}

void add_prune(CLI::App& app, PruneArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "prune", "Sparsify a trained dense model with scheduled magnitude pruning");
  sub->add_option("-d,--data", args.data_dir, "Prepared shard directory")
      ->required();
  sub->add_option("-m,--model", args.model_in, "Dense model to start from")
      ->required();
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--initial", args.initial_sparsity, "Sparsity at epoch 0")
      ->capture_default_str();
  sub->add_option("--final", args.final_sparsity, "Terminal sparsity")
      ->capture_default_str();
  sub->add_option("--ramp", args.ramp_epochs, "Epochs to reach terminal sparsity")
      ->capture_default_str();
  sub->add_option("--lr", args.learning_rate, "ADAM learning rate")
      ->capture_default_str();
  sub->add_option("--epochs", args.epochs, "Fine-tuning epochs")
      ->capture_default_str();
  sub->add_option("--batch", args.batch_size, "Batch size")
      ->capture_default_str();
  sub->add_option("--seed", args.seed, "Shuffle/dropout seed")
      ->capture_default_str();
  sub->callback([&args] { cmd_prune(args); });
}

void add_binarize(CLI::App& app, BinarizeArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "binarize", "Train a weight-binarized detector on prepared shards");
  sub->add_option("-d,--data", args.data_dir, "Prepared shard directory")
      ->required();
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--profile", args.profile,
                  "Architecture profile (must be bias-free)")
      ->capture_default_str();
  sub->add_option("--arch-json", args.arch_json,
                  "Architecture JSON file (overrides --profile)");
  sub->add_option("--lr", args.learning_rate, "ADAM learning rate")
      ->capture_default_str();
  sub->add_option("--epochs", args.epochs, "Training epochs")
      ->capture_default_str();
  sub->add_option("--batch", args.batch_size, "Batch size")
      ->capture_default_str();
  sub->add_option("--seed", args.seed, "Init/shuffle/dropout seed")
      ->capture_default_str();
  sub->callback([&args] { cmd_binarize(args); });
}

void add_finetune(CLI::App& app, FinetuneArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "finetune",
      "Derive patient-specific models from a trained generic model");
  sub->add_option("-m,--model", args.model_in, "Trained generic dense model")
      ->required();
  sub->add_option("-o,--out", args.out_dir, "Output directory")->required();
  sub->add_option("--record", args.record, "Single patient record");
  sub->add_option("--records", args.records_dir, "Directory of records");
  sub->add_option("--patient", args.patients,
                  "Patient id filter (repeatable; default: all)");
  sub->add_option("--lr", args.learning_rate, "ADAM learning rate")
      ->capture_default_str();
  sub->add_option("--epochs", args.epochs, "Fine-tuning epochs")
      ->capture_default_str();
  sub->add_option("--batch", args.batch_size, "Batch size")
      ->capture_default_str();
  sub->add_option("--seed", args.seed, "Split/init/shuffle seed")
      ->capture_default_str();
  sub->callback([&args] { cmd_finetune(args); });
}

void add_eval(CLI::App& app, EvalArgs& args) {
  CLI::App* sub =
      app.add_subcommand("eval", "Score a model on a prepared partition");
  sub->add_option("-m,--model", args.model_in, "Model file")->required();
  sub->add_option("-d,--data", args.data_dir, "Prepared shard directory")
      ->required();
  sub->add_option("--partition", args.partition,
                  "train, validation, test, or all")
      ->capture_default_str();
  sub->add_flag("--per-patient", args.per_patient,
                "Also report per-patient rows and their unweighted average");
  sub->add_option("--csv", args.csv_out, "Write metrics CSV to this file");
  sub->callback([&args] { cmd_eval(args); });
}

void add_predict(CLI::App& app, PredictArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "predict", "Emit per-second apnea predictions for one record");
  sub->add_option("-m,--model", args.model_in, "Model file")->required();
  sub->add_option("-r,--record", args.record, "ECG record (.csv or .ecg)")
      ->required();
  sub->add_option("-o,--out", args.out, "Output file (default: stdout)");
  sub->callback([&args] { cmd_predict(args); });
}

void add_cost(CLI::App& app, CostArgs& args) {
  CLI::App* sub = app.add_subcommand(
      "cost", "Report per-inference op counts, parameters, and energy");
  sub->add_option("models", args.models, "Model files");
  sub->add_flag("--csv", args.csv, "CSV instead of a table");
  sub->callback([&args] { cmd_cost(args); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-second sleep apnea detection from single-lead ECG"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  PrepareArgs prepare_args;
  TrainArgs train_args;
  PruneArgs prune_args;
  BinarizeArgs binarize_args;
  FinetuneArgs finetune_args;
  EvalArgs eval_args;
  PredictArgs predict_args;
  CostArgs cost_args;

  add_synth(app, synth_args);
  add_prepare(app, prepare_args);
  add_train(app, train_args);
  add_prune(app, prune_args);
  add_binarize(app, binarize_args);
  add_finetune(app, finetune_args);
  add_eval(app, eval_args);
  add_predict(app, predict_args);
  add_cost(app, cost_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const apnea::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const apnea::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
