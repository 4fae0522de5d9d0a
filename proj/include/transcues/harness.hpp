#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "transcues/checkpoint.hpp"
#include "transcues/config.hpp"
#include "transcues/data.hpp"
#include "transcues/metrics.hpp"
#include "transcues/model.hpp"
#include "transcues/optim.hpp"

namespace transcues {

struct StepLog {
  std::int64_t step = 0;
  LossBreakdown loss;
};

std::string format_step_log(const StepLog& entry);

// Reflective class ids of a run: the config's explicit list, else the flags
// of the class table.
std::set<std::int32_t> resolve_reflective_ids(const ExperimentConfig& config, const data::ClassTable& classes);

// Single-threaded trainer. The datasets must outlive it.
class Trainer {
 public:
  Trainer(ExperimentConfig config, const data::Dataset& train, const data::Dataset* val = nullptr);

  // One optimization step. NumericError (after writing a diagnostic file to
  // the output directory) when the loss is not finite.
  LossBreakdown step();
  // Steps until max_steps; logs one key=value line per step and an eval line
  // every val_every steps when a validation set is present.
  std::vector<StepLog> run(std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& checkpoint);

  std::int64_t steps_done() const { return step_; }
  TransCuesModel<float>& model() { return *model_; }
  const ExperimentConfig& config() const { return config_; }
  const LossSettings& loss_settings() const { return loss_settings_; }

 private:
  std::vector<std::size_t> next_batch();

  ExperimentConfig config_;
  const data::Dataset* train_;
  const data::Dataset* val_;
  std::unique_ptr<TransCuesModel<float>> model_;
  AdamW<float> optimizer_;
  LossSettings loss_settings_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
  std::int64_t step_ = 0;
};

// Evaluation-mode pass over a dataset at the model's resolution.
metrics::EvalReport evaluate(TransCuesModel<float>& model, const data::Dataset& dataset, int batch_size = 8);

// Rebuilds the model stored in a checkpoint (parameters and running stats).
std::unique_ptr<TransCuesModel<float>> model_from_checkpoint(const Checkpoint& checkpoint,
                                                             ExperimentConfig* config = nullptr);

// Full command: load the datasets named by the config, echo the config to
// <output>/config.txt, train (optionally resuming from a checkpoint), then
// write <output>/checkpoint.bin, train_log.txt and metrics.txt.
std::vector<StepLog> train(const ExperimentConfig& config, std::ostream* log = nullptr,
                           const std::filesystem::path& resume = {});

struct GradcheckOptions {
  int n_parameters = 10;
  double step = 1e-6;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  int batch = 2;
};

struct GradcheckEntry {
  std::string module;
  std::string parameter;
  Index element = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass = false;
  std::string to_text() const;
};

// Central differences against the analytic gradient of the weighted total
// loss, in double precision, on a small synthetic batch. Parameters are
// drawn round-robin over the model's modules.
GradcheckReport gradcheck(const ExperimentConfig& config, const GradcheckOptions& options = {});

struct AblationRow {
  std::string name;
  bool bfe_enabled = false;
  bool rfe_enabled = false;
  ModuleOrder order = ModuleOrder::bfe_then_rfe;
  LossWeights weights;
};

// baseline, +RFE, +BFE, +BFE+RFE with the given loss weights switched on per module.
std::vector<AblationRow> module_protocol(const LossWeights& weights);
// Both modules under each placement.
std::vector<AblationRow> placement_protocol(const LossWeights& weights);

struct AblationRun {
  std::string row;
  std::uint64_t seed = 0;
  double miou = 0;
  double final_loss = 0;
  bool finite = true;
};

struct AblationSummary {
  std::string row;
  std::vector<double> mious;
  double median_miou = 0;
  bool all_finite = true;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> rows;
  std::string to_key_value() const;
  const AblationSummary& row(const std::string& name) const;
};

// Trains every row with every seed under the same budget and evaluates on
// `val` (or on `train` when `val` is null).
AblationResult ablate(const ExperimentConfig& base, const std::vector<AblationRow>& rows,
                      const std::vector<std::uint64_t>& seeds, const data::Dataset& train, const data::Dataset* val,
                      std::ostream* log = nullptr);

struct PredictResult {
  std::filesystem::path mask;
  std::filesystem::path boundary;    // empty when the model has no BFE
  std::filesystem::path reflection;  // empty when the model has no RFE
};

// Writes mask.png (indexed), boundary.png and reflection.png (grayscale) at
// the input image's size.
PredictResult predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                      const std::filesystem::path& out_dir);

}  // namespace transcues
