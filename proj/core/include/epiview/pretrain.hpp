// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epiview/attention.hpp"
#include "epiview/geometry.hpp"
#include "epiview/rng.hpp"
#include "epiview/tensor.hpp"

namespace epiview {

/// K prototypes in feature space (K x D).
struct ClusterCenters {
  MatrixD centers;
  bool per_view = false;

  std::size_t count() const { return static_cast<std::size_t>(centers.rows()); }
};

struct KMeansOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;  // max center shift
};

/// k-means++ seeding followed by Lloyd iterations. Deterministic in seed.
ClusterCenters kmeans_init(const MatrixD& features, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {});

/// Lloyd iterations from the given centers (no reseeding).
ClusterCenters kmeans_refine(const MatrixD& features, MatrixD initial_centers, const KMeansOptions& options = {});

/// argmin_k ||z - c_k||, ties to the lowest index.
std::size_t assign_nearest(std::span<const double> z, const ClusterCenters& centers);

/// Mean over every token in the batch of the distance to its nearest center.
double positive_loss(std::span<const FeatureTensor64> fused, const ClusterCenters& centers);

struct NegativeEntry {
  std::size_t view = 0;
  std::size_t token = 0;
  Eigen::VectorXd feature;
  bool is_support = false;
};

/// Which tokens act as negatives: the erased support token and, per
/// reference view, the chosen most-altered tokens.
struct NegativeSelection {
  std::size_t support_view = 0;
  std::size_t support_token = 0;
  std::vector<std::pair<std::size_t, std::size_t>> reference;  // (view, token)
};

struct NegativeSet {
  NegativeSelection selection;
  std::vector<NegativeEntry> entries;
};

enum class MaskFill { Zeros, Mean };

/// Input with one support-view token erased.
FeatureTensor64 erase_token(const FeatureTensor64& z, std::size_t view, std::size_t token,
                            MaskFill fill = MaskFill::Zeros);

/// Support tokens of view b with at least one epipolar correspondent.
std::vector<std::size_t> eligible_support_tokens(const EpipolarMaskSet& masks, std::size_t support_view);

/// Picks a support view and token, erases it, and keeps the top n_k most
/// altered reference tokens per reference view plus the erased token itself.
NegativeSet synthesize_negatives(const FeatureTensor64& z, const EpipolarMaskSet& masks,
                                 const ProjectionWeights& w, std::size_t n_k, CounterRng& rng,
                                 MaskFill fill = MaskFill::Zeros,
                                 const AttentionOptions& options = {});

/// Deterministic part of synthesize_negatives given the erased token and both
/// forward outputs.
NegativeSet select_negatives(const FeatureTensor64& original_fused, const FeatureTensor64& erased_fused,
                             const EpipolarMaskSet& masks, std::size_t support_view,
                             std::size_t support_token, std::size_t n_k);

/// Clamp inside the logarithm of the negative loss.
inline constexpr double kNegativeLogFloor = 1e-12;

/// -sum over entries of log(max(eps, mean_k ||z - m_k||)) against the entry's
/// view centers.
double negative_loss(const NegativeSet& negatives, std::span<const ClusterCenters> per_view_centers);

inline double total_loss(double positive, double negative, double lambda) {
  return positive + lambda * negative;
}

enum class CenterRefresh { PerEpoch, Fixed };

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  int epochs = 50;
  double lambda = 0.1;
  std::size_t n_k = 1;
  std::size_t k_centers = 20;
  double delta_patches = 1.0;
  std::size_t batch_samples = 8;
  std::uint64_t seed = 0;
  CenterRefresh center_refresh = CenterRefresh::PerEpoch;
  MaskFill mask_fill = MaskFill::Zeros;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Std of the initial projections is init_scale / sqrt(D).
  double init_scale = 1.0;
  Aggregation aggregation = Aggregation::Sum;
  std::size_t collapse_samples = 1024;
  /// Cap on the Lloyd steps of each per-epoch center refresh, warm-started
  /// from the previous centers. The default lets the refresh converge.
  int refresh_iterations = 100;

  void validate() const;
};

/// Value and weight gradient of the combined objective on one batch with
/// frozen negative selections: mean positive distance over all batch tokens
/// plus lambda times the per-sample mean of the negative loss.
struct BatchObjective {
  double positive = 0.0;
  double negative = 0.0;
  double total = 0.0;
  ProjectionWeights gradient;
};

BatchObjective batch_objective(std::span<const FeatureTensor64> batch, const EpipolarMaskSet& masks,
                               const ProjectionWeights& w, const ClusterCenters& shared_centers,
                               std::span<const ClusterCenters> per_view_centers, double lambda,
                               std::span<const NegativeSelection> selections, MaskFill fill = MaskFill::Zeros,
                               const AttentionOptions& options = {}, bool with_gradient = true);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(std::size_t dims, double learning_rate, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double epsilon = 1e-8);

  void step(ProjectionWeights& w, const ProjectionWeights& gradient);
  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  ProjectionWeights m_;
  ProjectionWeights v_;
};

struct EpochTrace {
  int epoch = 0;
  double positive = 0.0;
  double negative = 0.0;
  double total = 0.0;
  /// Mean pairwise distance among sampled fused training tokens.
  double collapse = 0.0;
};

struct TrainResult {
  ProjectionWeights weights;
  std::vector<EpochTrace> trace;
};

/// Mean pairwise Euclidean distance among the selected rows.
double mean_pairwise_distance(const MatrixD& rows);

/// Fused tokens of every sample stacked into one (N*V*T) x D matrix, sample-major.
MatrixD stack_tokens(std::span<const FeatureTensor64> samples);
/// Fused tokens of one view across samples, (N*T) x D.
MatrixD stack_view_tokens(std::span<const FeatureTensor64> samples, std::size_t view);

using EpochCallback = std::function<void(const EpochTrace&)>;

/// Multi-center pretraining on normal training samples.
TrainResult train(std::span<const FeatureTensor64> train_samples, const EpipolarMaskSet& masks,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Applies the attention module to every sample.
std::vector<FeatureTensor64> fuse_all(std::span<const FeatureTensor64> samples,
                                      const EpipolarMaskSet& masks, const ProjectionWeights& w,
                                      const AttentionOptions& options = {}, unsigned threads = 1);

}  // namespace epiview
