// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace epiview {

/// Homogeneous pixel coordinate: u is the column axis, v the row axis.
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
  double w = 1.0;

  Eigen::Vector3d vec() const { return {u, v, w}; }
};

/// Pairwise geometry with the convention p_src^T m p_dst = 0. The epipolar
/// line of a source-view point in the destination view is m^T p_src.
struct FundamentalMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  int src_view = 0;
  int dst_view = 1;
};

/// a*u + b*v + c = 0
struct EpipolarLine {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

struct PatchGrid {
  int image_width = 0;
  int image_height = 0;
  int patch_size = 0;

  /// Validates that the patch size tiles the image exactly.
  static PatchGrid make(int image_width, int image_height, int patch_size);

  int grid_w() const { return image_width / patch_size; }
  int grid_h() const { return image_height / patch_size; }
  std::size_t token_count() const {
    return static_cast<std::size_t>(grid_w()) * static_cast<std::size_t>(grid_h());
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Dense 0/1 matrix, row-major.
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(std::size_t rows, std::size_t cols, std::uint8_t fill = 0)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c]; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits_[r * cols_ + c]; }

  std::span<const std::uint8_t> row(std::size_t r) const { return {bits_.data() + r * cols_, cols_}; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  std::size_t count() const;
  bool row_empty(std::size_t r) const;
  bool col_empty(std::size_t c) const;

  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Masks for every ordered pair (a, b), a != b. at(a, b)(j, k) == 1 means
/// token j of view a may attend to token k of view b.
class EpipolarMaskSet {
 public:
  EpipolarMaskSet() = default;
  EpipolarMaskSet(std::size_t views, std::size_t tokens, double delta_patches);

  std::size_t views() const noexcept { return views_; }
  std::size_t tokens() const noexcept { return tokens_; }
  double delta_patches() const noexcept { return delta_; }

  bool has(std::size_t a, std::size_t b) const;
  /// Throws MissingMaskPair if the pair was never set.
  const BinaryMatrix& at(std::size_t a, std::size_t b) const;
  void set(std::size_t a, std::size_t b, BinaryMatrix mask);

  /// Masks with every entry set (plain cross-view attention).
  static EpipolarMaskSet all_ones(std::size_t views, std::size_t tokens);
  /// Masks with every entry cleared.
  static EpipolarMaskSet all_zeros(std::size_t views, std::size_t tokens);

 private:
  std::size_t views_ = 0;
  std::size_t tokens_ = 0;
  double delta_ = std::numeric_limits<double>::infinity();
  std::vector<std::optional<BinaryMatrix>> masks_;
};

using Correspondence = std::pair<PixelPoint, PixelPoint>;

/// Relative slack on the mask threshold so that patch centers lying exactly
/// delta * P away from a line are not dropped by rounding.
inline constexpr double kMaskBoundaryTolerance = 1e-9;

/// Normalized eight-point estimate. Requires >= 8 correspondences (p_src, p_dst).
FundamentalMatrix estimate_fundamental_8pt(std::span<const Correspondence> correspondences,
                                           int src_view = 0, int dst_view = 1);

/// Rank-2 projection, unit Frobenius norm, largest-magnitude entry positive.
FundamentalMatrix normalize_fundamental(const Eigen::Matrix3d& m, int src_view = 0,
                                        int dst_view = 1);

/// Analytic F for world-to-camera poses x_cam = R X + t, oriented so that
/// p_a^T F p_b = 0.
FundamentalMatrix fundamental_from_cameras(const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& r_a,
                                           const Eigen::Vector3d& t_a, const Eigen::Matrix3d& k_b,
                                           const Eigen::Matrix3d& r_b, const Eigen::Vector3d& t_b,
                                           int src_view = 0, int dst_view = 1);

Eigen::Matrix3d skew(const Eigen::Vector3d& t);

/// Center of token j (row-major tokens) as [u, v, 1].
PixelPoint patch_center(std::size_t j, const PatchGrid& grid);

/// Line in the destination view induced by a source-view point.
EpipolarLine epipolar_line(const PixelPoint& p, const FundamentalMatrix& f);

double point_line_distance(const PixelPoint& p, const EpipolarLine& l);

/// Sine of the angle between F matrices viewed as 9-vectors (sign invariant).
double fundamental_angle_sine(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// T x T mask: entry (j, k) is 1 iff patch k's center lies within
/// delta_patches * P of the epipolar line of patch j. Rows whose reference
/// center is the epipole are all ones.
BinaryMatrix build_epipolar_mask(const PatchGrid& grid, const FundamentalMatrix& f,
                                 double delta_patches, unsigned threads = 1);

}  // namespace epiview
