// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace epiview::cli {

namespace fs = std::filesystem;

/// Inputs common to the stages that read a dataset.
struct DatasetArgs {
  fs::path manifest;
  std::optional<fs::path> rig;
};

struct SummaryTarget {
  std::optional<fs::path> path;
};

void cmd_synth(const RunConfig& cfg, const fs::path& out_dir, const SummaryTarget& summary);

void cmd_estimate_f(const fs::path& correspondences, const fs::path& out, const std::optional<fs::path>& rig);

struct MaskArgs {
  fs::path rig;
  std::optional<fs::path> manifest;  // grid source; else the config's scene grid
  std::string pair;                  // "a,b" with view ids or indices
  fs::path out;
};
void cmd_mask(const RunConfig& cfg, const MaskArgs& args);

struct PretrainArgs {
  DatasetArgs data;
  fs::path out;
  std::optional<fs::path> trace;
};
void cmd_pretrain(const RunConfig& cfg, const PretrainArgs& args, const SummaryTarget& summary);

struct BankArgs {
  DatasetArgs data;
  std::optional<fs::path> weights;
  fs::path out;
};
void cmd_build_bank(const RunConfig& cfg, const BankArgs& args, const SummaryTarget& summary);

struct ScoreArgs {
  DatasetArgs data;
  std::optional<fs::path> weights;
  fs::path bank;
  fs::path out;
  std::optional<fs::path> csv;
  std::optional<fs::path> heatmaps;
};
void cmd_score(const RunConfig& cfg, const ScoreArgs& args, const SummaryTarget& summary);

struct EvalArgs {
  fs::path manifest;
  fs::path scores;
  fs::path out;
  std::optional<fs::path> json;
};
void cmd_eval(const EvalArgs& args);

struct AblateArgs {
  std::optional<DatasetArgs> data;  // fixed dataset; else synthesized per seed
  fs::path out;
};
void cmd_ablate(const RunConfig& cfg, const AblateArgs& args);

struct PipelineArgs {
  DatasetArgs data;
  fs::path out;
  bool heatmaps = false;
};
void cmd_pipeline(const RunConfig& cfg, const PipelineArgs& args);

}  // namespace epiview::cli
