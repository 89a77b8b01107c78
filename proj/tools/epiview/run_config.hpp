// SPDX-License-Identifier: Apache-2.0
// Run configuration shared by every subcommand: strict JSON in, resolved
// JSON out (the latter feeds the config hash).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epiview/pipeline.hpp"
#include "json.hpp"

namespace epiview::cli {

enum class BankMode { SingleClass, MultiClass };

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  SceneConfig scene;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  TrainConfig train;
  Fusion fusion = Fusion::Epipolar;
  Pretraining pretraining = Pretraining::MultiCenterReg;
  BankLayout bank_layout = BankLayout::PerView;
  BankMode bank_mode = BankMode::SingleClass;
  /// Overrides the mode's ratio when set.
  std::optional<double> coreset_ratio;
  ScoringOptions scoring;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};

  double effective_coreset_ratio() const;
  /// Copies the top-level seed into the scene and training sections.
  void propagate_seed();
  PipelineOptions pipeline_options() const;
  /// Throws Error(InvalidArgument) on a violated invariant.
  void validate() const;
};

/// Parses a config file. Unknown keys and wrong types raise SchemaError;
/// malformed JSON raises SchemaError with a line:column position.
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies a parsed JSON object on top of `base`.
RunConfig merge_run_config(RunConfig base, const nlohmann::json& j, const std::string& source);

nlohmann::json to_json(const RunConfig& cfg);

/// FNV-1a 64 over the compact dump of to_json, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Accepts a finite non-negative number or "inf".
double parse_delta(const std::string& text);
std::string delta_to_string(double delta);

}  // namespace epiview::cli
