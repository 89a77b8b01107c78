// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "epiview/attention.hpp"
#include "epiview/features.hpp"
#include "epiview/membank.hpp"
#include "epiview/metrics.hpp"
#include "epiview/pretrain.hpp"
#include "epiview/synth.hpp"

namespace epiview {

enum class Fusion { None, Unmasked, Epipolar };
enum class Pretraining { RandomInit, CopyProxy, SingleCenter, MultiCenter, MultiCenterReg };

std::string to_string(Fusion f);
std::string to_string(Pretraining p);
Fusion fusion_from_string(const std::string& s);
Pretraining pretraining_from_string(const std::string& s);

struct PipelineOptions {
  Fusion fusion = Fusion::Epipolar;
  Pretraining pretraining = Pretraining::MultiCenterReg;
  BankLayout bank = BankLayout::PerView;
  /// Also carries delta_patches and the seed.
  TrainConfig train;
  double coreset_ratio = kSingleClassCoresetRatio;
  ScoringOptions scoring;
  unsigned threads = 1;
};

/// Features of one dataset, split and converted to 64-bit.
struct PipelineData {
  DatasetManifest manifest;
  CameraRig rig;
  std::vector<FeatureTensor64> train;
  std::vector<FeatureTensor64> test;
  std::vector<std::string> test_ids;
};

/// rig_path overrides the manifest's rig reference when given.
PipelineData load_pipeline_data(const std::filesystem::path& manifest_path,
                                const std::optional<std::filesystem::path>& rig_path = std::nullopt,
                                unsigned threads = 1);
PipelineData to_pipeline_data(SyntheticDataset data);

/// Training configuration after applying the pretraining arm: single-center
/// forces K=1 and lambda=0, multi-center forces lambda=0.
TrainConfig arm_train_config(const PipelineOptions& options);
bool arm_trains(Pretraining p);

/// Masks the attention module uses under this fusion mode.
EpipolarMaskSet fusion_masks(const PipelineData& data, const PipelineOptions& options);

/// Rounds every matrix entry to float, as the weight file stores it.
ProjectionWeights round_to_float(const ProjectionWeights& w);

/// Weights of the arm: random for the untrained arms, trained otherwise.
TrainResult pretrain_arm(const PipelineData& data, const PipelineOptions& options,
                         const EpochCallback& on_epoch = {});

/// Features the bank and scorer see: raw for fusion=none, fused otherwise.
std::vector<FeatureTensor64> pipeline_features(std::span<const FeatureTensor64> samples,
                                               const EpipolarMaskSet& masks,
                                               const std::optional<ProjectionWeights>& weights,
                                               const PipelineOptions& options);

struct PipelineResult {
  std::optional<ProjectionWeights> weights;
  std::vector<EpochTrace> trace;
  MemoryBank bank;
  ScoreReport report;
  std::vector<MetricRow> metrics;
};

/// pretrain -> build bank -> score -> evaluate. `weights` skips pretraining.
PipelineResult run_pipeline(const PipelineData& data, const PipelineOptions& options,
                            const std::optional<ProjectionWeights>& weights = std::nullopt);

struct AblationSpec {
  Fusion fusion = Fusion::Epipolar;
  Pretraining pretraining = Pretraining::MultiCenterReg;
  BankLayout bank = BankLayout::PerView;
};

std::string describe(const AblationSpec& spec);

/// The six arms: no fusion, untrained copy proxy, single center, multi
/// center, multi center with the negative term (all on a shared bank), and
/// the full method with per-view banks.
std::vector<AblationSpec> standard_ablation_specs();

struct AblationRow {
  AblationSpec spec;
  std::uint64_t seed = 0;
  double image_auroc = 0.0;
  double sample_auroc = 0.0;
};

struct AblationSummary {
  AblationSpec spec;
  double median_image_auroc = 0.0;
  double median_sample_auroc = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;
};

using DataForSeed = std::function<PipelineData(std::uint64_t seed)>;
using AblationProgress = std::function<void(const AblationRow&)>;

/// Runs every spec on every seed. Arms that share fusion and pretraining
/// reuse one trained weight set per seed.
AblationTable run_ablation(const DataForSeed& data_for_seed, const std::vector<AblationSpec>& specs,
                           const std::vector<std::uint64_t>& seeds, const PipelineOptions& base,
                           const AblationProgress& progress = {});

double median(std::vector<double> values);

std::string ablation_csv(const AblationTable& table);

}  // namespace epiview
