// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "epiview/error.hpp"
#include "epiview/geometry.hpp"
#include "geometry_oracle.hpp"
#include "test_util.hpp"

using namespace epiview;

namespace {

const PatchGrid kGrid = PatchGrid::make(224, 224, 28);

struct TwoViews {
  CameraPose a, b;
  Eigen::Matrix3d f_truth;
};

TwoViews random_pair(std::uint64_t seed) {
  CounterRng rng(seed, 0, "geometry-test");
  TwoViews p{testutil::random_camera(rng), testutil::random_camera(rng), {}};
  p.f_truth = oracle::fundamental_from_projections(oracle::projection(p.a.k, p.a.r, p.a.t),
                                                   oracle::projection(p.b.k, p.b.r, p.b.t));
  return p;
}

std::vector<Correspondence> correspondences(const TwoViews& p, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 1, "points");
  std::vector<Correspondence> out;
  while (out.size() < n) {
    const Eigen::Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Eigen::Vector3d pa = testutil::project(p.a, x), pb = testutil::project(p.b, x);
    out.push_back({PixelPoint{pa.x(), pa.y(), 1.0}, PixelPoint{pb.x(), pb.y(), 1.0}});
  }
  return out;
}

FundamentalMatrix rectified() {
  // Pure horizontal translation between identical cameras: F = [t]x.
  return normalize_fundamental(skew(Eigen::Vector3d(1.0, 0.0, 0.0)));
}

}  // namespace

TEST(PatchCenter, Corners) {
  const PixelPoint first = patch_center(0, kGrid);
  EXPECT_EQ(first.u, 14.0);
  EXPECT_EQ(first.v, 14.0);
  EXPECT_EQ(first.w, 1.0);
  const PixelPoint top_right = patch_center(7, kGrid);
  EXPECT_EQ(top_right.u, 210.0);
  EXPECT_EQ(top_right.v, 14.0);
  const PixelPoint last = patch_center(63, kGrid);
  EXPECT_EQ(last.u, 224.0 - 14.0);
  EXPECT_EQ(last.v, 224.0 - 14.0);
}

TEST(PatchCenter, RejectsOutOfRange) {
  try {
    patch_center(64, kGrid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
}

TEST(PatchGrid, RejectsNonTilingPatch) {
  EXPECT_THROW(PatchGrid::make(224, 224, 30), Error);
  EXPECT_EQ(PatchGrid::make(224, 112, 28).token_count(), 32u);
}

TEST(PointLineDistance, HandCases) {
  EXPECT_DOUBLE_EQ(point_line_distance({5, 14, 1}, {0, 1, -10}), 4.0);
  EXPECT_DOUBLE_EQ(point_line_distance({3, 10, 1}, {0, 1, -10}), 0.0);
  EXPECT_THROW(point_line_distance({1, 1, 1}, {0, 0, 1}), Error);
}

TEST(PointLineDistance, MatchesExtendedPrecision) {
  CounterRng rng(7, 0, "lines");
  for (int i = 0; i < 500; ++i) {
    const EpipolarLine l{rng.normal(), rng.normal(), 100 * rng.normal()};
    const PixelPoint p{rng.uniform(0, 224), rng.uniform(0, 224), 1};
    const long double num = std::fabs(static_cast<long double>(l.a) * p.u + static_cast<long double>(l.b) * p.v + l.c);
    const long double den = std::sqrt(static_cast<long double>(l.a) * l.a + static_cast<long double>(l.b) * l.b);
    EXPECT_NEAR(point_line_distance(p, l), static_cast<double>(num / den), 1e-12);
  }
}

TEST(EpipolarLine, ContainsTrueCorrespondence) {
  const TwoViews p = random_pair(3);
  const FundamentalMatrix f = normalize_fundamental(p.f_truth);
  for (const auto& [pa, pb] : correspondences(p, 50, 3)) {
    const EpipolarLine l = epipolar_line(pa, f);
    EXPECT_LT(std::abs(l.a * pb.u + l.b * pb.v + l.c), 1e-9 * std::hypot(l.a, l.b) * 1e3);
  }
}

TEST(EpipolarLine, EpipoleIsDegenerate) {
  const TwoViews p = random_pair(11);
  const FundamentalMatrix f = normalize_fundamental(p.f_truth);
  // l = F^T p vanishes at the null vector of F^T.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f.m.transpose(), Eigen::ComputeFullV);
  const Eigen::Vector3d e = svd.matrixV().col(2);
  ASSERT_GT(std::abs(e.z()), 1e-12);
  const PixelPoint epipole{e.x() / e.z(), e.y() / e.z(), 1.0};
  try {
    // Rounding may leave a tiny normal; it must at least be negligible.
    const EpipolarLine l = epipolar_line(epipole, f);
    EXPECT_LT(std::hypot(l.a, l.b), 1e-12);
  } catch (const Error& e2) {
    EXPECT_EQ(e2.code(), ErrorCode::DegenerateLine);
  }
  FundamentalMatrix exact;
  exact.m << 0, 0, 0, 0, 0, 0, 0, 0, 1;  // every line has a = b = 0
  EXPECT_THROW(epipolar_line({1, 2, 1}, exact), Error);
}

TEST(EpipolarLine, RectifiedPairGivesHorizontalLines) {
  const FundamentalMatrix f = rectified();
  for (std::size_t j = 0; j < kGrid.token_count(); ++j) {
    const EpipolarLine l = epipolar_line(patch_center(j, kGrid), f);
    EXPECT_LT(std::abs(l.a), 1e-12);
  }
}

TEST(EightPoint, RecoversGroundTruth) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TwoViews p = random_pair(100 + s);
    const auto corr = correspondences(p, 20, s);
    const FundamentalMatrix f = estimate_fundamental_8pt(corr);
    EXPECT_LT(fundamental_angle_sine(f.m, p.f_truth), 1e-6) << "seed " << s;
    EXPECT_NEAR(f.m.norm(), 1.0, 1e-12);
    EXPECT_NEAR(f.m.determinant(), 0.0, 1e-9);
    for (const auto& [pa, pb] : corr) EXPECT_LT(std::abs(pa.vec().dot(f.m * pb.vec())), 1e-9);
  }
}

TEST(EightPoint, ExactlyConsistentCorrespondences) {
  // Points satisfying a given rank-2 F exactly: p_b on the line F^T p_a.
  const FundamentalMatrix truth = normalize_fundamental(random_pair(5).f_truth);
  CounterRng rng(5, 2, "exact");
  std::vector<Correspondence> corr;
  for (int i = 0; i < 16; ++i) {
    const PixelPoint pa{rng.uniform(0, 224), rng.uniform(0, 224), 1};
    const EpipolarLine l = epipolar_line(pa, truth);
    const double u = rng.uniform(0, 224);
    corr.push_back({pa, PixelPoint{u, -(l.a * u + l.c) / l.b, 1}});
  }
  const FundamentalMatrix f = estimate_fundamental_8pt(corr);
  for (const auto& [pa, pb] : corr) EXPECT_LT(std::abs(pa.vec().dot(f.m * pb.vec())), 1e-9);
}

TEST(EightPoint, Preconditions) {
  const auto corr = correspondences(random_pair(1), 7, 1);
  try {
    estimate_fundamental_8pt(corr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewCorrespondences);
  }
  std::vector<Correspondence> line;
  for (int i = 0; i < 12; ++i) line.push_back({PixelPoint{1.0 * i, 2.0 * i, 1}, PixelPoint{3.0 * i, 1.0 * i + 5, 1}});
  try {
    estimate_fundamental_8pt(line);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateConfiguration);
  }
}

TEST(AnalyticFundamental, MatchesProjectionConstruction) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TwoViews p = random_pair(200 + s);
    const FundamentalMatrix f = fundamental_from_cameras(p.a.k, p.a.r, p.a.t, p.b.k, p.b.r, p.b.t);
    EXPECT_LT(fundamental_angle_sine(f.m, p.f_truth), 1e-7);  // sine of a tiny angle sits near sqrt(eps)
    EXPECT_NEAR(f.m.norm(), 1.0, 1e-12);
  }
  const TwoViews p = random_pair(1);
  EXPECT_THROW(fundamental_from_cameras(p.a.k, p.a.r, p.a.t, p.a.k, p.a.r, p.a.t), Error);
}

TEST(EpipolarMask, InfiniteThresholdIsAllOnes) {
  const BinaryMatrix m = build_epipolar_mask(kGrid, normalize_fundamental(random_pair(2).f_truth),
                                             std::numeric_limits<double>::infinity());
  EXPECT_EQ(m.count(), kGrid.token_count() * kGrid.token_count());
}

TEST(EpipolarMask, RectifiedBands) {
  const BinaryMatrix m = build_epipolar_mask(kGrid, rectified(), 1.0);
  EXPECT_EQ(m, oracle::brute_force_mask(kGrid, rectified().m, 1.0));
  const int gw = kGrid.grid_w();
  for (std::size_t j = 0; j < kGrid.token_count(); ++j) {
    const int row = static_cast<int>(j) / gw;
    for (std::size_t k = 0; k < kGrid.token_count(); ++k) {
      const int other = static_cast<int>(k) / gw;
      EXPECT_EQ(m(j, k), std::abs(row - other) <= 1 ? 1 : 0) << j << "," << k;
    }
  }
}

TEST(EpipolarMask, MatchesBruteForce) {
  const PatchGrid grids[] = {kGrid, PatchGrid::make(224, 112, 14), PatchGrid::make(256, 256, 8),
                             PatchGrid::make(64, 48, 16)};
  std::uint64_t seed = 0;
  for (const auto& g : grids) {
    for (const double delta : {0.0, 0.5, 1.0, 2.5}) {
      const FundamentalMatrix f = normalize_fundamental(random_pair(seed++).f_truth);
      EXPECT_EQ(build_epipolar_mask(g, f, delta, 2), oracle::brute_force_mask(g, f.m, delta));
    }
  }
}

TEST(EpipolarMask, MonotoneInDelta) {
  const FundamentalMatrix f = normalize_fundamental(random_pair(9).f_truth);
  BinaryMatrix prev = build_epipolar_mask(kGrid, f, 0.0);
  for (const double delta : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    const BinaryMatrix cur = build_epipolar_mask(kGrid, f, delta);
    for (std::size_t i = 0; i < cur.bits().size(); ++i) EXPECT_LE(prev.bits()[i], cur.bits()[i]);
    prev = cur;
  }
}

TEST(EpipolarMask, ExactCorrespondingCentersSurviveBothDirections) {
  // With the rectified pair, centers on the same row are exact correspondences.
  const FundamentalMatrix f = rectified();
  FundamentalMatrix back = f;
  back.m = f.m.transpose();
  for (const double delta : {0.0, 0.3}) {
    const BinaryMatrix ab = build_epipolar_mask(kGrid, f, delta);
    const BinaryMatrix ba = build_epipolar_mask(kGrid, back, delta);
    for (std::size_t j = 0; j < kGrid.token_count(); ++j) {
      for (std::size_t k = 0; k < kGrid.token_count(); ++k) {
        if (std::abs(patch_center(j, kGrid).vec().dot(f.m * patch_center(k, kGrid).vec())) == 0.0) {
          EXPECT_EQ(ab(j, k), 1);
          EXPECT_EQ(ba(k, j), 1);
        }
      }
    }
  }
}

TEST(EpipolarMask, EpipoleRowIsAllOnes) {
  // Epipole placed exactly at the center of token 0: F^T (14, 14, 1) = 0.
  Eigen::Matrix3d m;
  m << 1, 0, -14, 0, 1, -14, 0, 0, 0;  // columns make l = F^T p vanish at (14, 14)
  FundamentalMatrix f;
  f.m = m.transpose();
  const BinaryMatrix mask = build_epipolar_mask(kGrid, f, 1.0);
  for (std::size_t k = 0; k < kGrid.token_count(); ++k) EXPECT_EQ(mask(0, k), 1);
  EXPECT_EQ(mask, oracle::brute_force_mask(kGrid, f.m, 1.0));
}

TEST(EpipolarMask, NegativeDeltaRejected) {
  EXPECT_THROW(build_epipolar_mask(kGrid, rectified(), -1.0), Error);
}

TEST(MaskSet, MissingPair) {
  EpipolarMaskSet set(3, 4, 1.0);
  set.set(0, 1, BinaryMatrix(4, 4, 1));
  EXPECT_TRUE(set.has(0, 1));
  try {
    set.at(1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingMaskPair);
  }
  EXPECT_THROW(set.set(1, 1, BinaryMatrix(4, 4)), Error);
  EXPECT_THROW(set.set(1, 2, BinaryMatrix(3, 4)), Error);
}
