// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>

#include "epiview/error.hpp"
#include "epiview/synth.hpp"
#include "test_util.hpp"

using namespace epiview;

namespace {

SceneConfig scene_config(std::size_t views = 3) {
  SceneConfig cfg;
  cfg.views = views;
  cfg.seed = 4;
  return cfg;
}

double epipolar_residual(const CameraRig& rig, std::size_t a, std::size_t b, const Eigen::Vector3d& x) {
  const auto& cams = *rig.cameras;
  const Eigen::Vector3d pa = testutil::project(cams[a], x);
  const Eigen::Vector3d pb = testutil::project(cams[b], x);
  return std::abs(pa.dot(rig.f(a, b).m * pb));
}

}  // namespace

TEST(SynthRig, TwoViewsSatisfyEpipolarConstraint) {
  const CameraRig rig = make_rig(scene_config(2));
  CounterRng rng(0, 0, "rig-test");
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d x(rng.normal(), rng.normal(), rng.normal());
    x = x.normalized() * rng.uniform(0.2, 1.0);
    EXPECT_LT(epipolar_residual(rig, 0, 1, x), 1e-9);
  }
}

TEST(SynthRig, ZeroBaselineIsDegenerate) {
  SceneConfig cfg = scene_config(2);
  cfg.camera_baseline = 0.0;
  try {
    make_rig(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateRig);
  }
}

TEST(SynthRig, FiveViewsHaveTwentyRankTwoPairs) {
  const CameraRig rig = make_rig(scene_config(5));
  int pairs = 0;
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t b = 0; b < 5; ++b) {
      if (a == b) continue;
      ++pairs;
      const Eigen::JacobiSVD<Eigen::Matrix3d> svd(rig.f(a, b).m);
      EXPECT_LT(svd.singularValues()(2), 1e-12);
      EXPECT_GT(svd.singularValues()(1), 1e-6);
      EXPECT_NEAR(rig.f(a, b).m.norm(), 1.0, 1e-12);
    }
  }
  EXPECT_EQ(pairs, 20);
  rig.validate();
}

TEST(SynthScene, VisibleAnchorsAreEpipolarConsistent) {
  const SyntheticScene scene = make_scene(scene_config());
  int checked = 0;
  for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        if (a == b || !scene.visible_in(i, a) || !scene.visible_in(i, b)) continue;
        EXPECT_LT(epipolar_residual(scene.rig, a, b, scene.anchors[i]), 1e-9);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(SynthSample, NormalSamplesHaveEmptyMasks) {
  const SyntheticScene scene = make_scene(scene_config());
  const SyntheticSample s = synth_sample(scene, 3, false);
  for (const auto& m : s.patch_masks) {
    for (const auto b : m) EXPECT_EQ(b, 0);
  }
}

TEST(SynthSample, DefectCanBeInvisibleInAnotherView) {
  const SyntheticScene scene = make_scene(scene_config());
  // Anchor seen by view 0 only; a tiny radius keeps the defect local.
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < scene.anchors.size() && !pick; ++i) {
    if (scene.visible_in(i, 0) && !scene.visible_in(i, 1)) pick = i;
  }
  ASSERT_TRUE(pick.has_value());
  DefectSpec defect;
  defect.center = scene.anchors[*pick];
  defect.radius = 1e-6;
  defect.direction = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(scene.cfg.feature_dims));
  const SyntheticSample s = render_sample(scene, 9, defect);
  int in0 = 0, in1 = 0;
  for (const auto b : s.patch_masks[0]) in0 += b;
  for (const auto b : s.patch_masks[1]) in1 += b;
  EXPECT_GT(in0, 0);
  EXPECT_EQ(in1, 0);
}

TEST(SynthSample, Deterministic) {
  const SyntheticScene scene = make_scene(scene_config());
  const SyntheticSample a = synth_sample(scene, 17, true);
  const SyntheticSample b = synth_sample(make_scene(scene_config()), 17, true);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.patch_masks, b.patch_masks);
}

TEST(SynthSample, CorrespondingPatchesAreClose) {
  const SceneConfig cfg = scene_config();
  const SyntheticScene scene = make_scene(cfg);
  const SyntheticSample s = synth_sample(scene, 0, false);
  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < scene.anchors.size() && n < 1000; ++i) {
    if (!scene.visible_in(i, 0) || !scene.visible_in(i, 1)) continue;
    const auto j = static_cast<std::size_t>(scene.anchor_patch[0][i]);
    const auto k = static_cast<std::size_t>(scene.anchor_patch[1][i]);
    double d2 = 0.0;
    for (std::size_t c = 0; c < cfg.feature_dims; ++c) {
      const double diff = s.features.at(0, j, c) - s.features.at(1, k, c);
      d2 += diff * diff;
    }
    total += std::sqrt(d2);
    ++n;
  }
  ASSERT_EQ(n, 1000);
  EXPECT_LE(total / n, 3.0 * cfg.noise_sigma * std::sqrt(2.0 * static_cast<double>(cfg.feature_dims)));
}

TEST(SynthSample, DefectivePatchesDeviateMore) {
  const SceneConfig cfg = scene_config();
  const SyntheticScene scene = make_scene(cfg);
  double dev[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (std::uint64_t idx = 0; idx < 40; ++idx) {
    const SyntheticSample s = synth_sample(scene, idx, true);
    const SyntheticSample clean = render_sample(scene, idx, std::nullopt, false);
    for (std::size_t v = 0; v < cfg.views; ++v) {
      for (std::size_t j = 0; j < cfg.grid.token_count(); ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < cfg.feature_dims; ++c) {
          const double diff = s.features.at(v, j, c) - clean.features.at(v, j, c);
          d2 += diff * diff;
        }
        const int m = s.patch_masks[v][j];
        dev[m] += std::sqrt(d2);
        ++count[m];
      }
    }
  }
  ASSERT_GE(count[0] + count[1], 1000);
  ASSERT_GT(count[1], 50);
  EXPECT_GT(dev[1] / count[1] - dev[0] / count[0], cfg.noise_sigma);
}

TEST(SynthDataset, CountsAndDeterminism) {
  SceneConfig cfg = scene_config();
  cfg.feature_dims = 8;
  testutil::TempDir a, b;
  const DatasetManifest m = synth_dataset(cfg, 200, 100, a.path());
  synth_dataset(cfg, 200, 100, b.path(), 2);
  std::size_t train = 0, anomalous = 0;
  for (const auto& s : m.samples) {
    if (s.split == Split::Train) {
      ++train;
      EXPECT_EQ(s.label, Label::Normal);
    } else if (s.label == Label::Anomalous) {
      ++anomalous;
    }
  }
  EXPECT_EQ(train, 200u);
  EXPECT_GT(anomalous, 30u);
  EXPECT_LT(anomalous, 70u);
  for (const auto& entry : testutil::fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = testutil::fs::relative(entry.path(), a.path());
    ASSERT_EQ(testutil::read_bytes(entry.path()), testutil::read_bytes(b.path() / rel)) << rel;
  }
  const DatasetManifest loaded = load_manifest(a / "manifest.json");
  EXPECT_EQ(loaded.samples.size(), 300u);
}

TEST(SynthConfig, Validation) {
  SceneConfig cfg;
  cfg.views = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = SceneConfig{};
  cfg.anomaly_rate = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = SceneConfig{};
  cfg.noise_sigma = -0.1;
  EXPECT_THROW(cfg.validate(), Error);
}
