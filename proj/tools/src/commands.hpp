#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apnea/datapipe.hpp"
#include "apnea/model.hpp"

namespace apnea::cli {

struct SynthArgs {
  std::filesystem::path out_dir;
  std::size_t patients = 4;
  std::size_t duration_seconds = 600;
  std::uint64_t seed = 7;
  double noise_sd = 0.05;
  bool csv = false;
};
void cmd_synth(const SynthArgs& args);

struct PrepareArgs {
  std::filesystem::path records_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  SplitMode split_mode = SplitMode::pooled;
  bool include_no_apnea = false;
};
void cmd_prepare(const PrepareArgs& args);

struct TrainArgs {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::string profile = "m1";
  std::filesystem::path arch_json;  // overrides profile when set
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};
void cmd_train(const TrainArgs& args);

struct PruneArgs {
  std::filesystem::path data_dir;
  std::filesystem::path model_in;
  std::filesystem::path out_dir;
  double initial_sparsity = 0.50;
  double final_sparsity = 0.80;
  std::size_t ramp_epochs = 50;
  double learning_rate = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};
void cmd_prune(const PruneArgs& args);

struct BinarizeArgs {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::string profile = "m3";
  std::filesystem::path arch_json;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};
void cmd_binarize(const BinarizeArgs& args);

struct FinetuneArgs {
  std::filesystem::path model_in;
  std::filesystem::path out_dir;
  std::filesystem::path record;       // one patient record, or
  std::filesystem::path records_dir;  // a directory of them
  std::vector<std::string> patients;  // empty = every record in the directory
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};
void cmd_finetune(const FinetuneArgs& args);

struct EvalArgs {
  std::filesystem::path model_in;
  std::filesystem::path data_dir;
  std::string partition = "test";
  bool per_patient = false;
  std::filesystem::path csv_out;
};
void cmd_eval(const EvalArgs& args);

struct PredictArgs {
  std::filesystem::path model_in;
  std::filesystem::path record;
  std::filesystem::path out;  // empty = stdout
};
void cmd_predict(const PredictArgs& args);

struct CostArgs {
  std::vector<std::filesystem::path> models;
  bool csv = false;
};
void cmd_cost(const CostArgs& args);

}  // namespace apnea::cli
