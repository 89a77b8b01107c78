// SPDX-License-Identifier: Apache-2.0

#include "epiview/synth.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "epiview/error.hpp"
#include "epiview/parallel.hpp"
#include "epiview/rng.hpp"

namespace epiview {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (views < 2) fail(ErrorCode::InvalidArgument, "scene needs at least two views");
  if (feature_dims == 0) fail(ErrorCode::InvalidArgument, "feature_dims must be positive");
  if (surface_points == 0) fail(ErrorCode::InvalidArgument, "surface_points must be positive");
  if (!(anomaly_rate >= 0.0 && anomaly_rate <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "anomaly_rate must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  if (!(nuisance_sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "nuisance_sigma must be >= 0");
  if (!(anomaly_radius >= 0.0)) fail(ErrorCode::InvalidArgument, "anomaly_radius must be >= 0");
  if (!(camera_baseline >= 0.0)) fail(ErrorCode::InvalidArgument, "camera_baseline must be >= 0");
  if (!(camera_distance > 1.0)) {
    fail(ErrorCode::InvalidArgument, "camera_distance must exceed the unit sphere radius");
  }
  if (!(focal_length > 0.0)) fail(ErrorCode::InvalidArgument, "focal_length must be positive");
  if (appearance_modes == 0) fail(ErrorCode::InvalidArgument, "appearance_modes must be positive");
  if (nuisance_rank > feature_dims) {
    fail(ErrorCode::InvalidArgument, "nuisance_rank exceeds feature_dims");
  }
  (void)PatchGrid::make(grid.image_width, grid.image_height, grid.patch_size);
}

namespace {

CameraPose look_at_origin(const Eigen::Vector3d& center, const Eigen::Matrix3d& k) {
  const Eigen::Vector3d forward = (-center).normalized();
  const Eigen::Vector3d up(0.0, 1.0, 0.0);
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  CameraPose pose;
  pose.k = k;
  pose.r.row(0) = right.transpose();
  pose.r.row(1) = down.transpose();
  pose.r.row(2) = forward.transpose();
  pose.t = -pose.r * center;
  return pose;
}

std::vector<CameraPose> make_cameras(const SceneConfig& cfg) {
  const double elev = cfg.camera_elevation;
  const double ring = cfg.camera_distance * std::cos(elev);
  const double half_chord = cfg.camera_baseline / 2.0;
  if (half_chord > ring) {
    fail(ErrorCode::InvalidArgument, "camera_baseline too large for the camera ring");
  }
  const double step = 2.0 * std::asin(half_chord / ring);
  Eigen::Matrix3d k;
  k << cfg.focal_length, 0, cfg.grid.image_width / 2.0, 0, cfg.focal_length,
      cfg.grid.image_height / 2.0, 0, 0, 1;
  std::vector<CameraPose> cams;
  for (std::size_t v = 0; v < cfg.views; ++v) {
    const double theta = (static_cast<double>(v) - (cfg.views - 1) / 2.0) * step;
    const Eigen::Vector3d center(cfg.camera_distance * std::cos(elev) * std::sin(theta),
                                 cfg.camera_distance * std::sin(elev),
                                 cfg.camera_distance * std::cos(elev) * std::cos(theta));
    cams.push_back(look_at_origin(center, k));
  }
  return cams;
}

std::string view_name(std::size_t v) { return "view" + std::to_string(v); }

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", i);
  return buf;
}

}  // namespace

CameraRig make_rig(const SceneConfig& cfg) {
  cfg.validate();
  const auto cams = make_cameras(cfg);
  for (std::size_t a = 0; a < cams.size(); ++a) {
    for (std::size_t b = a + 1; b < cams.size(); ++b) {
      if ((cams[a].center() - cams[b].center()).norm() < 1e-9) {
        fail(ErrorCode::DegenerateRig, "camera centers " + std::to_string(a) + " and " +
                                           std::to_string(b) + " coincide");
      }
    }
  }
  CameraRig rig;
  const std::size_t v = cfg.views;
  for (std::size_t i = 0; i < v; ++i) rig.view_ids.push_back(view_name(i));
  rig.fundamental.assign(v * v, FundamentalMatrix{});
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < v; ++b) {
      if (a == b) continue;
      rig.fundamental[a * v + b] =
          fundamental_from_cameras(cams[a].k, cams[a].r, cams[a].t, cams[b].k, cams[b].r,
                                   cams[b].t, static_cast<int>(a), static_cast<int>(b));
    }
  }
  rig.cameras = cams;
  return rig;
}

Eigen::VectorXd SyntheticScene::appearance(std::size_t anchor) const {
  return (mode_weights.row(static_cast<Eigen::Index>(anchor)) * mode_appearance).transpose();
}

SyntheticScene make_scene(const SceneConfig& cfg) {
  SyntheticScene scene;
  scene.cfg = cfg;
  scene.rig = make_rig(cfg);
  const std::size_t d = cfg.feature_dims;
  const std::size_t m = cfg.appearance_modes;
  CounterRng rng(cfg.seed, 0, "scene");

  auto random_unit = [&rng]() {
    Eigen::Vector3d x;
    do {
      x = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    } while (x.norm() < 1e-9);
    return x.normalized();
  };

  scene.anchors.resize(cfg.surface_points);
  for (auto& a : scene.anchors) a = random_unit();

  std::vector<Eigen::Vector3d> mode_centers(m);
  for (auto& c : mode_centers) c = random_unit();
  scene.mode_appearance.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < scene.mode_appearance.size(); ++i) {
    scene.mode_appearance.data()[i] = rng.normal();
  }
  scene.background.resize(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < scene.background.size(); ++i) scene.background(i) = rng.normal();

  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(cfg.nuisance_rank));
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
  if (cfg.nuisance_rank > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(basis.rows(), basis.cols());
  }
  scene.nuisance_basis = basis;

  // Soft partition of the surface into appearance modes.
  const double inv_two_s2 = 1.0 / (2.0 * cfg.appearance_bandwidth * cfg.appearance_bandwidth);
  scene.mode_weights.resize(static_cast<Eigen::Index>(cfg.surface_points), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < cfg.surface_points; ++i) {
    double max_logit = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(m);
    for (std::size_t k = 0; k < m; ++k) {
      logits[k] = -(scene.anchors[i] - mode_centers[k]).squaredNorm() * inv_two_s2;
      max_logit = std::max(max_logit, logits[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k) total += std::exp(logits[k] - max_logit);
    for (std::size_t k = 0; k < m; ++k) {
      scene.mode_weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          std::exp(logits[k] - max_logit) / total;
    }
  }

  // Frustum clipping plus a hemisphere test; no z-buffer.
  const auto& cams = *scene.rig.cameras;
  const int gw = cfg.grid.grid_w();
  scene.anchor_patch.assign(cfg.views, std::vector<int>(cfg.surface_points, -1));
  for (std::size_t v = 0; v < cfg.views; ++v) {
    const Eigen::Vector3d c = cams[v].center();
    for (std::size_t i = 0; i < cfg.surface_points; ++i) {
      const Eigen::Vector3d& x = scene.anchors[i];
      if (x.dot(c - x) <= 0.0) continue;
      const Eigen::Vector3d xc = cams[v].r * x + cams[v].t;
      if (xc.z() <= 0.0) continue;
      const Eigen::Vector3d p = cams[v].k * (xc / xc.z());
      if (p.x() < 0.0 || p.y() < 0.0 || p.x() >= cfg.grid.image_width ||
          p.y() >= cfg.grid.image_height) {
        continue;
      }
      const int col = static_cast<int>(p.x()) / cfg.grid.patch_size;
      const int row = static_cast<int>(p.y()) / cfg.grid.patch_size;
      scene.anchor_patch[v][i] = row * gw + col;
    }
  }
  return scene;
}

SyntheticSample render_sample(const SyntheticScene& scene, std::uint64_t sample_index,
                              const std::optional<DefectSpec>& defect, bool with_noise) {
  const SceneConfig& cfg = scene.cfg;
  const std::size_t d = cfg.feature_dims;
  const std::size_t t = cfg.grid.token_count();
  const std::size_t m = cfg.appearance_modes;

  // Per-sample drift of each appearance mode inside the nuisance subspace.
  CounterRng drift_rng(cfg.seed, sample_index, "nuisance");
  MatrixD mode_drift = MatrixD::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < m; ++k) {
    Eigen::VectorXd xi(static_cast<Eigen::Index>(cfg.nuisance_rank));
    for (Eigen::Index r = 0; r < xi.size(); ++r) xi(r) = cfg.nuisance_sigma * drift_rng.normal();
    if (cfg.nuisance_rank > 0) {
      mode_drift.row(static_cast<Eigen::Index>(k)) = (scene.nuisance_basis * xi).transpose();
    }
  }
  const MatrixD field = scene.mode_appearance + mode_drift;

  std::vector<std::uint8_t> defective(cfg.surface_points, 0);
  if (defect) {
    for (std::size_t i = 0; i < cfg.surface_points; ++i) {
      if ((scene.anchors[i] - defect->center).norm() <= defect->radius) defective[i] = 1;
    }
  }

  SyntheticSample out;
  out.features = FeatureTensor(cfg.views, t, d);
  out.patch_masks.assign(cfg.views, std::vector<std::uint8_t>(t, 0));
  CounterRng noise_rng(cfg.seed, sample_index, "noise");
  for (std::size_t v = 0; v < cfg.views; ++v) {
    MatrixD sum = MatrixD::Zero(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
    std::vector<std::size_t> count(t, 0);
    for (std::size_t i = 0; i < cfg.surface_points; ++i) {
      const int patch = scene.anchor_patch[v][i];
      if (patch < 0) continue;
      const auto pi = static_cast<Eigen::Index>(patch);
      sum.row(pi) += scene.mode_weights.row(static_cast<Eigen::Index>(i)) * field;
      if (defective[i]) {
        sum.row(pi) += defect->direction.transpose();
        out.patch_masks[v][static_cast<std::size_t>(patch)] = 1;
      }
      ++count[static_cast<std::size_t>(patch)];
    }
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        const auto jj = static_cast<Eigen::Index>(j);
        const auto cc = static_cast<Eigen::Index>(c);
        double x = count[j] > 0 ? sum(jj, cc) / static_cast<double>(count[j]) : scene.background(cc);
        if (with_noise) x += cfg.noise_sigma * noise_rng.normal();
        out.features.at(v, j, c) = static_cast<float>(x);
      }
    }
  }
  return out;
}

SyntheticSample synth_sample(const SyntheticScene& scene, std::uint64_t sample_index, bool anomalous) {
  if (!anomalous) return render_sample(scene, sample_index, std::nullopt);
  const SceneConfig& cfg = scene.cfg;
  CounterRng rng(cfg.seed, sample_index, "defect");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < cfg.surface_points; ++i) {
    for (std::size_t v = 0; v < cfg.views; ++v) {
      if (scene.visible_in(i, v)) {
        candidates.push_back(i);
        break;
      }
    }
  }
  if (candidates.empty()) fail(ErrorCode::DegenerateRig, "no anchor is visible in any view");
  DefectSpec defect;
  defect.center = scene.anchors[candidates[rng.index(candidates.size())]];
  defect.radius = cfg.anomaly_radius;
  Eigen::VectorXd dir(static_cast<Eigen::Index>(cfg.feature_dims));
  for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
  defect.direction = cfg.anomaly_strength * dir.normalized();
  return render_sample(scene, sample_index, defect);
}

SyntheticDataset generate_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                                  unsigned threads) {
  const SyntheticScene scene = make_scene(cfg);
  SyntheticDataset out;
  out.rig = scene.rig;
  DatasetManifest& manifest = out.manifest;
  manifest.grid = cfg.grid;
  manifest.rig_path = "rig.json";
  manifest.views = cfg.views;
  manifest.tokens = cfg.grid.token_count();
  manifest.dims = cfg.feature_dims;
  const std::size_t n = n_train + n_test;
  manifest.samples.resize(n);
  out.features.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    SampleRecord& r = manifest.samples[i];
    r.sample_id = sample_name(i);
    r.split = i < n_train ? Split::Train : Split::Test;
    bool anomalous = false;
    if (r.split == Split::Test) {
      CounterRng label_rng(cfg.seed, i, "label");
      anomalous = label_rng.bernoulli(cfg.anomaly_rate);
    }
    r.label = anomalous ? Label::Anomalous : Label::Normal;
    SyntheticSample s = synth_sample(scene, i, anomalous);
    for (std::size_t v = 0; v < cfg.views; ++v) {
      r.view_feature_paths.push_back("features/" + r.sample_id + "_" + view_name(v) + ".mvft");
      int any = 0;
      for (const auto bit : s.patch_masks[v]) any |= bit;
      r.view_labels.push_back(any);
    }
    r.patch_masks = std::move(s.patch_masks);
    out.features[i] = std::move(s.features);
  });
  return out;
}

DatasetManifest synth_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                              const fs::path& out_dir, unsigned threads) {
  SyntheticDataset data = generate_dataset(cfg, n_train, n_test, threads);
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + (out_dir / "features").string());

  write_rig(data.rig, out_dir / "rig.json");
  DatasetManifest& manifest = data.manifest;
  manifest.base_dir = out_dir;
  const std::size_t per_view = manifest.tokens * manifest.dims;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const SampleRecord& r = manifest.samples[i];
    for (std::size_t v = 0; v < manifest.views; ++v) {
      FeatureTensor one(1, manifest.tokens, manifest.dims);
      const auto begin = data.features[i].data().begin() + static_cast<std::ptrdiff_t>(v * per_view);
      std::copy(begin, begin + static_cast<std::ptrdiff_t>(per_view), one.data().begin());
      write_feature_tensor(one, out_dir / r.view_feature_paths[v]);
    }
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace epiview
