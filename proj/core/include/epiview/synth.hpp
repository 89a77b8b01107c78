// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "epiview/features.hpp"
#include "epiview/geometry.hpp"
#include "epiview/tensor.hpp"

namespace epiview {

/// Synthetic multi-view scene: a unit sphere carrying a smooth appearance
/// field, observed by pinhole cameras placed on an arc around it.
struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t views = 3;
  PatchGrid grid{224, 224, 28};
  std::size_t feature_dims = 32;
  std::size_t surface_points = 4000;
  double anomaly_rate = 0.5;
  double anomaly_radius = 0.3;
  double noise_sigma = 0.1;
  double camera_baseline = 1.2;

  // Secondary knobs.
  double camera_distance = 3.0;
  double camera_elevation = 0.15;
  double focal_length = 280.0;
  std::size_t appearance_modes = 8;
  double appearance_bandwidth = 0.45;
  double anomaly_strength = 2.0;
  /// Per-sample appearance drift shared by all views (lighting/material
  /// variation). Lives in a low-rank channel subspace.
  double nuisance_sigma = 2.5;
  std::size_t nuisance_rank = 4;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Cameras on an arc facing the origin, adjacent centers camera_baseline apart
/// (chord length). All pairwise F are analytic.
CameraRig make_rig(const SceneConfig& cfg);

/// Fixed scene content shared by all samples of one seed.
struct SyntheticScene {
  SceneConfig cfg;
  CameraRig rig;
  std::vector<Eigen::Vector3d> anchors;  // unit sphere points, normal == position
  MatrixD mode_weights;                  // anchors x modes, rows sum to 1
  MatrixD mode_appearance;               // modes x D
  MatrixD nuisance_basis;                // D x rank, orthonormal columns
  Eigen::VectorXd background;            // D
  /// patch index of each anchor in each view, or -1 when not visible.
  std::vector<std::vector<int>> anchor_patch;

  Eigen::VectorXd appearance(std::size_t anchor) const;
  bool visible_in(std::size_t anchor, std::size_t view) const { return anchor_patch[view][anchor] >= 0; }
};

SyntheticScene make_scene(const SceneConfig& cfg);

struct DefectSpec {
  Eigen::Vector3d center;  // point on or near the sphere
  double radius = 0.3;
  Eigen::VectorXd direction;  // D, added (scaled by strength) to affected anchors
};

struct SyntheticSample {
  FeatureTensor features;
  /// One vector of length T per view; 1 where the patch sees a defective anchor.
  std::vector<std::vector<std::uint8_t>> patch_masks;
};

/// Deterministic in (cfg.seed, sample_index). An anomalous sample draws a
/// defect centered on a random anchor visible in at least one view.
SyntheticSample synth_sample(const SyntheticScene& scene, std::uint64_t sample_index, bool anomalous);

/// Same as synth_sample with an explicit defect (or none). Noise and drift
/// streams are shared with synth_sample for the same index.
SyntheticSample render_sample(const SyntheticScene& scene, std::uint64_t sample_index,
                              const std::optional<DefectSpec>& defect, bool with_noise = true);

struct SyntheticDataset {
  CameraRig rig;
  /// Feature paths are filled relative to a future output directory.
  DatasetManifest manifest;
  /// One V x T x D tensor per manifest sample.
  std::vector<FeatureTensor> features;
};

/// In-memory version of synth_dataset; the written files decode to exactly
/// these tensors.
SyntheticDataset generate_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                                  unsigned threads = 1);

/// Writes rig.json, manifest.json and features/*.mvft into out_dir. Train
/// samples are all normal; test samples are anomalous with probability
/// anomaly_rate (keyed by seed and sample index).
DatasetManifest synth_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                              const std::filesystem::path& out_dir, unsigned threads = 1);

}  // namespace epiview
