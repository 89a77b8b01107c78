// SPDX-License-Identifier: Apache-2.0

#include "epiview/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <string>

#include "epiview/error.hpp"
#include "epiview/parallel.hpp"

namespace epiview {

PatchGrid PatchGrid::make(int image_width, int image_height, int patch_size) {
  if (image_width <= 0 || image_height <= 0 || patch_size <= 0) {
    fail(ErrorCode::InvalidArgument, "patch grid dimensions must be positive");
  }
  if (image_width % patch_size != 0 || image_height % patch_size != 0) {
    fail(ErrorCode::InvalidArgument, "patch size " + std::to_string(patch_size) +
                                         " does not tile " + std::to_string(image_width) + "x" +
                                         std::to_string(image_height));
  }
  return PatchGrid{image_width, image_height, patch_size};
}

std::size_t BinaryMatrix::count() const {
  std::size_t n = 0;
  for (const auto b : bits_) n += b;
  return n;
}

bool BinaryMatrix::row_empty(std::size_t r) const {
  for (std::size_t c = 0; c < cols_; ++c) {
    if (bits_[r * cols_ + c]) return false;
  }
  return true;
}

bool BinaryMatrix::col_empty(std::size_t c) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    if (bits_[r * cols_ + c]) return false;
  }
  return true;
}

EpipolarMaskSet::EpipolarMaskSet(std::size_t views, std::size_t tokens, double delta_patches)
    : views_(views), tokens_(tokens), delta_(delta_patches), masks_(views * views) {}

bool EpipolarMaskSet::has(std::size_t a, std::size_t b) const {
  return a < views_ && b < views_ && masks_[a * views_ + b].has_value();
}

const BinaryMatrix& EpipolarMaskSet::at(std::size_t a, std::size_t b) const {
  if (!has(a, b)) {
    fail(ErrorCode::MissingMaskPair,
         "no mask for view pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  return *masks_[a * views_ + b];
}

void EpipolarMaskSet::set(std::size_t a, std::size_t b, BinaryMatrix mask) {
  if (a >= views_ || b >= views_ || a == b) {
    fail(ErrorCode::InvalidArgument, "mask pair must name two distinct views");
  }
  if (mask.rows() != tokens_ || mask.cols() != tokens_) {
    fail(ErrorCode::ShapeMismatch, "mask must be T x T");
  }
  masks_[a * views_ + b] = std::move(mask);
}

EpipolarMaskSet EpipolarMaskSet::all_ones(std::size_t views, std::size_t tokens) {
  EpipolarMaskSet set(views, tokens, std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t b = 0; b < views; ++b) {
      if (a != b) set.set(a, b, BinaryMatrix(tokens, tokens, 1));
    }
  }
  return set;
}

EpipolarMaskSet EpipolarMaskSet::all_zeros(std::size_t views, std::size_t tokens) {
  EpipolarMaskSet set(views, tokens, 0.0);
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t b = 0; b < views; ++b) {
      if (a != b) set.set(a, b, BinaryMatrix(tokens, tokens, 0));
    }
  }
  return set;
}

namespace {

// Translate centroid to the origin and scale the mean distance to sqrt(2).
Eigen::Matrix3d isotropic_normalization(std::span<const Correspondence> corr, bool second) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& c : corr) {
    const PixelPoint& p = second ? c.second : c.first;
    centroid += Eigen::Vector2d(p.u / p.w, p.v / p.w);
  }
  centroid /= static_cast<double>(corr.size());
  double mean_dist = 0.0;
  for (const auto& c : corr) {
    const PixelPoint& p = second ? c.second : c.first;
    mean_dist += (Eigen::Vector2d(p.u / p.w, p.v / p.w) - centroid).norm();
  }
  mean_dist /= static_cast<double>(corr.size());
  if (!(mean_dist > 0.0)) {
    fail(ErrorCode::DegenerateConfiguration, "all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return t;
}

void check_not_collinear(std::span<const Correspondence> corr, const Eigen::Matrix3d& t,
                         bool second) {
  Eigen::MatrixX3d pts(static_cast<Eigen::Index>(corr.size()), 3);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const PixelPoint& p = second ? corr[i].second : corr[i].first;
    pts.row(static_cast<Eigen::Index>(i)) = (t * p.vec()).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixX3d> svd(pts);
  const auto& s = svd.singularValues();
  if (s(2) <= 1e-12 * s(0)) {
    fail(ErrorCode::DegenerateConfiguration, "points are collinear in one view");
  }
}

}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& t) {
  Eigen::Matrix3d s;
  s << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return s;
}

FundamentalMatrix normalize_fundamental(const Eigen::Matrix3d& m, int src_view, int dst_view) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0.0;
  Eigen::Matrix3d r = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  const double norm = r.norm();
  if (!(norm > 0.0)) fail(ErrorCode::DegenerateConfiguration, "zero fundamental matrix");
  r /= norm;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < 9; ++i) {
    if (std::abs(r.data()[i]) > std::abs(r.data()[best])) best = i;
  }
  if (r.data()[best] < 0.0) r = -r;
  return FundamentalMatrix{r, src_view, dst_view};
}

FundamentalMatrix estimate_fundamental_8pt(std::span<const Correspondence> correspondences,
                                           int src_view, int dst_view) {
  const std::size_t n = correspondences.size();
  if (n < 8) {
    fail(ErrorCode::TooFewCorrespondences,
         "eight-point estimation needs >= 8 correspondences, got " + std::to_string(n));
  }
  const Eigen::Matrix3d t_a = isotropic_normalization(correspondences, false);
  const Eigen::Matrix3d t_b = isotropic_normalization(correspondences, true);
  check_not_collinear(correspondences, t_a, false);
  check_not_collinear(correspondences, t_b, true);

  // Row i: kron(p_a, p_b), so that row . vec_rowmajor(F) = p_a^T F p_b.
  Eigen::MatrixXd design(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  design.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = t_a * correspondences[i].first.vec();
    const Eigen::Vector3d pb = t_b * correspondences[i].second.vec();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) design(static_cast<Eigen::Index>(i), r * 3 + c) = pa(r) * pb(c);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(7) > 0.0) || sv(0) / sv(7) > 1e12) {
    fail(ErrorCode::DegenerateConfiguration, "design matrix is ill-conditioned");
  }
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d f_hat;
  f_hat << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  const FundamentalMatrix rank2 = normalize_fundamental(f_hat, src_view, dst_view);
  const Eigen::Matrix3d denorm = t_a.transpose() * rank2.m * t_b;
  return normalize_fundamental(denorm, src_view, dst_view);
}

FundamentalMatrix fundamental_from_cameras(const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& r_a,
                                           const Eigen::Vector3d& t_a, const Eigen::Matrix3d& k_b,
                                           const Eigen::Matrix3d& r_b, const Eigen::Vector3d& t_b,
                                           int src_view, int dst_view) {
  const Eigen::Matrix3d r_ab = r_b * r_a.transpose();
  const Eigen::Vector3d t_ab = t_b - r_ab * t_a;
  if (t_ab.norm() < 1e-12) {
    fail(ErrorCode::DegenerateRig, "camera centers coincide");
  }
  // Standard form satisfies p_b^T F p_a = 0; transpose for p_a^T F p_b = 0.
  const Eigen::Matrix3d f_std =
      k_b.inverse().transpose() * skew(t_ab) * r_ab * k_a.inverse();
  return normalize_fundamental(f_std.transpose(), src_view, dst_view);
}

PixelPoint patch_center(std::size_t j, const PatchGrid& grid) {
  if (j >= grid.token_count()) {
    fail(ErrorCode::IndexOutOfRange, "token index " + std::to_string(j) + " >= " +
                                         std::to_string(grid.token_count()));
  }
  const auto gw = static_cast<std::size_t>(grid.grid_w());
  const double p = grid.patch_size;
  return PixelPoint{(static_cast<double>(j % gw) + 0.5) * p,
                    (static_cast<double>(j / gw) + 0.5) * p, 1.0};
}

EpipolarLine epipolar_line(const PixelPoint& p, const FundamentalMatrix& f) {
  const Eigen::Vector3d l = f.m.transpose() * p.vec();
  if (std::abs(l(0)) < 1e-15 && std::abs(l(1)) < 1e-15) {
    fail(ErrorCode::DegenerateLine, "point coincides with the epipole");
  }
  return EpipolarLine{l(0), l(1), l(2)};
}

double point_line_distance(const PixelPoint& p, const EpipolarLine& l) {
  const double n = std::sqrt(l.a * l.a + l.b * l.b);
  if (!(n > 0.0)) fail(ErrorCode::DegenerateLine, "line has zero normal");
  return std::abs(l.a * p.u + l.b * p.v + l.c * p.w) / n;
}

double fundamental_angle_sine(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Map<const Eigen::Matrix<double, 9, 1>> va(a.data());
  const Eigen::Map<const Eigen::Matrix<double, 9, 1>> vb(b.data());
  const double cos = std::abs(va.dot(vb)) / (va.norm() * vb.norm());
  return std::sqrt(std::max(0.0, 1.0 - std::min(1.0, cos * cos)));
}

BinaryMatrix build_epipolar_mask(const PatchGrid& grid, const FundamentalMatrix& f,
                                 double delta_patches, unsigned threads) {
  if (!(delta_patches >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "delta must be non-negative");
  }
  const std::size_t t = grid.token_count();
  std::vector<PixelPoint> centers(t);
  for (std::size_t j = 0; j < t; ++j) centers[j] = patch_center(j, grid);
  const double threshold =
      delta_patches * grid.patch_size + kMaskBoundaryTolerance * grid.patch_size;

  BinaryMatrix mask(t, t, 0);
  parallel_for(t, threads, [&](std::size_t j) {
    EpipolarLine line;
    try {
      line = epipolar_line(centers[j], f);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateLine) throw;
      for (std::size_t k = 0; k < t; ++k) mask(j, k) = 1;
      return;
    }
    for (std::size_t k = 0; k < t; ++k) {
      mask(j, k) = point_line_distance(centers[k], line) <= threshold ? 1 : 0;
    }
  });
  return mask;
}

}  // namespace epiview
