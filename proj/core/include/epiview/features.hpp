// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epiview/geometry.hpp"
#include "epiview/tensor.hpp"

namespace epiview {

// ---------------------------------------------------------------------------
// MVFT tensor files
//
//   bytes 0-3    magic "MVFT"
//   bytes 4-7    version (u32 LE) = 1
//   bytes 8-19   V, T, D (u32 LE each)
//   bytes 20-27  reserved, zero
//   then V*T*D binary32 values, little-endian
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kMvftVersion = 1;
inline constexpr std::size_t kMvftHeaderBytes = 28;

std::vector<std::uint8_t> encode_feature_tensor(const FeatureTensor& t);
FeatureTensor decode_feature_tensor(const std::vector<std::uint8_t>& bytes);

void write_feature_tensor(const FeatureTensor& t, const std::filesystem::path& path);
FeatureTensor read_feature_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Camera rigs
// ---------------------------------------------------------------------------

/// Pinhole camera with world-to-camera pose x_cam = r * X + t.
struct CameraPose {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -r.transpose() * t; }
};

struct CameraRig {
  std::vector<std::string> view_ids;
  /// Row-major V x V table; entry a*V+b relates views a and b. Diagonal unused.
  std::vector<FundamentalMatrix> fundamental;
  std::optional<std::vector<CameraPose>> cameras;

  std::size_t views() const noexcept { return view_ids.size(); }
  const FundamentalMatrix& f(std::size_t a, std::size_t b) const;
  /// Accepts a view id or a decimal index.
  std::size_t view_index(const std::string& id) const;
  /// Every ordered pair present; analytic F agrees with stored F when
  /// cameras are given. Throws SchemaError otherwise.
  void validate() const;
};

CameraRig read_rig(const std::filesystem::path& path);
void write_rig(const CameraRig& rig, const std::filesystem::path& path);

/// Masks for every ordered view pair of the rig.
EpipolarMaskSet build_mask_set(const CameraRig& rig, const PatchGrid& grid, double delta_patches,
                               unsigned threads = 1);

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

enum class Split { Train, Test };
enum class Label { Normal, Anomalous };

struct SampleRecord {
  std::string sample_id;
  Split split = Split::Train;
  Label label = Label::Normal;
  /// Relative to the manifest directory unless absolute. One MVFT (V=1) per view.
  std::vector<std::string> view_feature_paths;
  std::vector<int> view_labels;
  /// Optional per-view patch-level ground truth, each of length T.
  std::optional<std::vector<std::vector<std::uint8_t>>> patch_masks;
};

struct DatasetManifest {
  PatchGrid grid;
  std::string rig_path;
  std::vector<SampleRecord> samples;

  /// Filled by load_manifest.
  std::filesystem::path base_dir;
  std::size_t views = 0;
  std::size_t tokens = 0;
  std::size_t dims = 0;

  std::filesystem::path resolve(const std::string& relative) const;
  std::vector<std::size_t> indices(Split split) const;
};

/// Parses and validates: schema, file existence, (T, D) consistency with the
/// first sample, and the normal-only training split.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Stacks the per-view files of one sample into a V x T x D tensor.
FeatureTensor load_sample_features(const DatasetManifest& manifest, const SampleRecord& sample);

std::string to_string(Split split);
std::string to_string(Label label);

}  // namespace epiview
