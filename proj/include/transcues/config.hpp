#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "transcues/model.hpp"

namespace transcues {

struct OptimizerConfig {
  std::string kind = "adamw";
  double lr = 1e-4;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct ExperimentConfig {
  ModelConfig model;
  LossWeights loss;
  BoundaryTarget boundary_target = BoundaryTarget::boundary_head;
  // Empty optional: take the reflective flags of the dataset's class table.
  std::optional<std::set<std::int32_t>> reflective_ids;
  OptimizerConfig optim;
  int batch_size = 8;
  int max_steps = 1000;
  int val_every = 100;
  bool augment = true;
  std::string data_root;
  std::string val_root;
  std::string output_dir = "runs/default";

  // ConfigError on any inconsistent field.
  void validate() const;

  // Flat dotted keys, e.g. loss.alpha, optim.lr, model.order.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  static ExperimentConfig from_map(const std::map<std::string, std::string>& values);
  static ExperimentConfig from_text(const std::string& text);
};

// key=value lines; '#' starts a comment. ConfigError on malformed lines.
std::map<std::string, std::string> parse_key_values(std::istream& in);
// Later entries win.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
// Splits "key=value". ConfigError without '='.
std::pair<std::string, std::string> split_assignment(const std::string& text);

}  // namespace transcues
