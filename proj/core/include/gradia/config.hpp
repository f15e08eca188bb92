#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gradia/model.hpp"
#include "gradia/synthetic.hpp"
#include "gradia/trainer.hpp"

namespace gradia {

struct FewShotConfig {
  std::vector<std::size_t> shots = {1, 5, 10, 50};
  std::size_t num_seeds = 10;
  FewShotSettings settings;
  std::vector<double> sweep_weights = {0.0, 0.25, 0.5, 0.75};
  std::size_t sweep_shots = 10;
  // Epochs for the base model pretrained on the disjoint scene.
  std::size_t pretrain_epochs = 20;
};

// Everything a workbench run depends on. The text form is an INI document
// with [scene], [model], [baseline], [finetune], [oracle] and [fewshot]
// sections; a canonical copy goes into every run directory.
struct WorkbenchConfig {
  SceneSpec scene;
  SplitCounts counts;
  // When set, datasets are read from this manifest directory instead of
  // being generated from `scene`.
  std::filesystem::path dataset_dir;
  ModelConfig model;
  TrainConfig baseline;
  TrainConfig finetune;
  OracleConfig oracle;
  FewShotConfig fewshot;

  WorkbenchConfig();
  void validate() const;
};

// Missing keys keep their defaults; unknown sections or keys and malformed
// values throw ConfigError.
WorkbenchConfig parse_config(const std::string& text);
WorkbenchConfig load_config(const std::filesystem::path& path);
std::string format_config(const WorkbenchConfig& config);

// "8:3:1:1:max2,16:3:1:1:none" = out_maps:kernel:stride:padding:pool.
std::vector<ConvLayerConfig> parse_conv_stack(const std::string& text);
std::string format_conv_stack(const std::vector<ConvLayerConfig>& stack);

}  // namespace gradia
