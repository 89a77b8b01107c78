// SPDX-License-Identifier: Apache-2.0

#include "epiview/pipeline.hpp"

#include <limits>

#include "epiview/error.hpp"
#include "epiview/parallel.hpp"

namespace epiview {

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::None: return "none";
    case Fusion::Unmasked: return "unmasked";
    case Fusion::Epipolar: return "epipolar";
  }
  return "?";
}

std::string to_string(Pretraining p) {
  switch (p) {
    case Pretraining::RandomInit: return "random-init";
    case Pretraining::CopyProxy: return "copy-proxy";
    case Pretraining::SingleCenter: return "single-center";
    case Pretraining::MultiCenter: return "multi-center";
    case Pretraining::MultiCenterReg: return "multi-center+reg";
  }
  return "?";
}

Fusion fusion_from_string(const std::string& s) {
  for (const Fusion f : {Fusion::None, Fusion::Unmasked, Fusion::Epipolar}) {
    if (to_string(f) == s) return f;
  }
  fail(ErrorCode::InvalidArgument, "unknown fusion mode '" + s + "'");
}

Pretraining pretraining_from_string(const std::string& s) {
  for (const Pretraining p : {Pretraining::RandomInit, Pretraining::CopyProxy, Pretraining::SingleCenter,
                              Pretraining::MultiCenter, Pretraining::MultiCenterReg}) {
    if (to_string(p) == s) return p;
  }
  fail(ErrorCode::InvalidArgument, "unknown pretraining arm '" + s + "'");
}

PipelineData load_pipeline_data(const std::filesystem::path& manifest_path,
                                const std::optional<std::filesystem::path>& rig_path, unsigned threads) {
  PipelineData data;
  data.manifest = load_manifest(manifest_path);
  data.rig = read_rig(rig_path ? *rig_path : data.manifest.resolve(data.manifest.rig_path));
  data.rig.validate();
  if (data.rig.view_ids.size() != data.manifest.views) {
    fail(ErrorCode::ShapeMismatch, "rig has " + std::to_string(data.rig.view_ids.size()) +
                                       " views but the manifest has " + std::to_string(data.manifest.views));
  }
  const auto train_idx = data.manifest.indices(Split::Train);
  const auto test_idx = data.manifest.indices(Split::Test);
  data.train.resize(train_idx.size());
  data.test.resize(test_idx.size());
  parallel_for(train_idx.size() + test_idx.size(), threads, [&](std::size_t i) {
    const bool is_train = i < train_idx.size();
    const std::size_t s = is_train ? train_idx[i] : test_idx[i - train_idx.size()];
    FeatureTensor64 t = load_sample_features(data.manifest, data.manifest.samples[s]).cast<double>();
    (is_train ? data.train[i] : data.test[i - train_idx.size()]) = std::move(t);
  });
  for (const std::size_t s : test_idx) data.test_ids.push_back(data.manifest.samples[s].sample_id);
  if (data.train.empty()) fail(ErrorCode::EmptyTrainSplit, "manifest has no training samples");
  return data;
}

PipelineData to_pipeline_data(SyntheticDataset synthetic) {
  PipelineData data;
  data.rig = std::move(synthetic.rig);
  data.manifest = std::move(synthetic.manifest);
  for (std::size_t i = 0; i < data.manifest.samples.size(); ++i) {
    const SampleRecord& r = data.manifest.samples[i];
    if (r.split == Split::Train) {
      data.train.push_back(synthetic.features[i].cast<double>());
    } else {
      data.test.push_back(synthetic.features[i].cast<double>());
      data.test_ids.push_back(r.sample_id);
    }
  }
  return data;
}

bool arm_trains(Pretraining p) {
  return p == Pretraining::SingleCenter || p == Pretraining::MultiCenter || p == Pretraining::MultiCenterReg;
}

TrainConfig arm_train_config(const PipelineOptions& options) {
  TrainConfig cfg = options.train;
  switch (options.pretraining) {
    case Pretraining::SingleCenter:
      cfg.k_centers = 1;
      cfg.lambda = 0.0;
      break;
    case Pretraining::MultiCenter:
      cfg.lambda = 0.0;
      break;
    default:
      break;
  }
  if (options.fusion == Fusion::Unmasked) cfg.delta_patches = std::numeric_limits<double>::infinity();
  return cfg;
}

EpipolarMaskSet fusion_masks(const PipelineData& data, const PipelineOptions& options) {
  const std::size_t views = data.manifest.views;
  const std::size_t tokens = data.manifest.grid.token_count();
  switch (options.fusion) {
    case Fusion::None: return EpipolarMaskSet::all_zeros(views, tokens);
    case Fusion::Unmasked: return EpipolarMaskSet::all_ones(views, tokens);
    case Fusion::Epipolar: break;
  }
  return build_mask_set(data.rig, data.manifest.grid, options.train.delta_patches, options.threads);
}

ProjectionWeights round_to_float(const ProjectionWeights& w) { return ProjectionWeights::from_tensor(w.to_tensor()); }

TrainResult pretrain_arm(const PipelineData& data, const PipelineOptions& options, const EpochCallback& on_epoch) {
  if (data.train.empty()) fail(ErrorCode::EmptyTrainSplit, "no training samples");
  const TrainConfig cfg = arm_train_config(options);
  TrainResult result;
  if (arm_trains(options.pretraining)) {
    result = train(data.train, fusion_masks(data, options), cfg, on_epoch);
  } else {
    cfg.validate();
    result.weights = ProjectionWeights::random(data.train[0].dims(), cfg.seed, cfg.init_scale);
  }
  result.weights = round_to_float(result.weights);
  return result;
}

std::vector<FeatureTensor64> pipeline_features(std::span<const FeatureTensor64> samples,
                                               const EpipolarMaskSet& masks,
                                               const std::optional<ProjectionWeights>& weights,
                                               const PipelineOptions& options) {
  if (options.fusion == Fusion::None) return {samples.begin(), samples.end()};
  if (!weights) fail(ErrorCode::InvalidArgument, "fusion needs projection weights");
  return fuse_all(samples, masks, *weights, AttentionOptions{options.train.aggregation}, options.threads);
}

namespace {

void round_prototypes(MemoryBank& bank) {
  for (auto& p : bank.prototypes) p = p.cast<float>().cast<double>();
}

}  // namespace

PipelineResult run_pipeline(const PipelineData& data, const PipelineOptions& options,
                            const std::optional<ProjectionWeights>& weights) {
  PipelineResult result;
  const EpipolarMaskSet masks = fusion_masks(data, options);
  if (options.fusion != Fusion::None) {
    if (weights) {
      result.weights = *weights;
    } else {
      TrainResult trained = pretrain_arm(data, options);
      result.weights = std::move(trained.weights);
      result.trace = std::move(trained.trace);
    }
  }
  const auto train_features = pipeline_features(data.train, masks, result.weights, options);
  result.bank = build_bank(train_features, options.coreset_ratio, options.train.seed, options.bank, options.threads);
  round_prototypes(result.bank);

  const auto test_features = pipeline_features(data.test, masks, result.weights, options);
  // Refinement always follows the epipolar geometry, whatever the fusion mode.
  std::optional<EpipolarMaskSet> refine_masks;
  if (options.scoring.refine) {
    refine_masks = build_mask_set(data.rig, data.manifest.grid, options.train.delta_patches, options.threads);
  }
  result.report.delta_patches = options.fusion == Fusion::Unmasked ? std::numeric_limits<double>::infinity()
                                                                    : options.train.delta_patches;
  result.report.alpha = options.scoring.alpha;
  result.report.refine = options.scoring.refine;
  result.report.fusion = to_string(options.fusion);
  result.report.bank_layout = to_string(options.bank);
  result.report.grid_w = data.manifest.grid.grid_w();
  result.report.grid_h = data.manifest.grid.grid_h();
  result.report.records = score_samples(test_features, data.test_ids, result.bank,
                                        refine_masks ? &*refine_masks : nullptr, options.scoring, options.threads);
  result.metrics = evaluate(data.manifest, result.report);
  return result;
}

}  // namespace epiview
