// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit tests.

#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "epiview/features.hpp"
#include "epiview/rng.hpp"
#include "epiview/tensor.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "epiview") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline epiview::FeatureTensor64 random_tensor(std::size_t v, std::size_t t, std::size_t d, epiview::CounterRng& rng,
                                              double scale = 1.0) {
  epiview::FeatureTensor64 z(v, t, d);
  for (auto& x : z.data()) x = scale * rng.normal();
  return z;
}

inline epiview::MatrixD random_matrix(Eigen::Index rows, Eigen::Index cols, epiview::CounterRng& rng) {
  epiview::MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Camera looking at the origin from a random direction at the given distance.
inline epiview::CameraPose random_camera(epiview::CounterRng& rng, double distance = 5.0) {
  Eigen::Vector3d c(rng.normal(), rng.normal(), rng.normal());
  c = distance * c.normalized();
  const Eigen::Vector3d forward = (-c).normalized();
  Eigen::Vector3d up(rng.normal(), rng.normal(), rng.normal());
  Eigen::Vector3d right = up.cross(forward).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  epiview::CameraPose cam;
  cam.r.row(0) = right;
  cam.r.row(1) = down;
  cam.r.row(2) = forward;
  cam.t = -cam.r * c;
  const double f = rng.uniform(300.0, 600.0);
  cam.k << f, 0, rng.uniform(100.0, 124.0), 0, f * rng.uniform(0.95, 1.05), rng.uniform(100.0, 124.0), 0, 0, 1;
  return cam;
}

inline Eigen::Vector3d project(const epiview::CameraPose& cam, const Eigen::Vector3d& x) {
  const Eigen::Vector3d p = cam.k * (cam.r * x + cam.t);
  return p / p.z();
}

}  // namespace testutil
