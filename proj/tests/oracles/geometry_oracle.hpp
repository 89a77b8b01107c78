// SPDX-License-Identifier: Apache-2.0
// Slow reference implementations used only by the tests.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "epiview/geometry.hpp"

namespace oracle {

// 3x4 projection K [R | t].
inline Eigen::Matrix<double, 3, 4> projection(const Eigen::Matrix3d& k, const Eigen::Matrix3d& r,
                                               const Eigen::Vector3d& t) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = r;
  rt.col(3) = t;
  return k * rt;
}

// F via the camera-center / pseudo-inverse construction: x_b^T G x_a = 0 with
// G = [P_b C_a]_x P_b P_a^+. Returned transposed so that p_a^T F p_b = 0.
inline Eigen::Matrix3d fundamental_from_projections(const Eigen::Matrix<double, 3, 4>& pa,
                                                    const Eigen::Matrix<double, 3, 4>& pb) {
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(pa, Eigen::ComputeFullV);
  const Eigen::Vector4d center = svd.matrixV().col(3);
  const Eigen::Vector3d e = pb * center;
  Eigen::Matrix3d ex;
  ex << 0, -e.z(), e.y(), e.z(), 0, -e.x(), -e.y(), e.x(), 0;
  const Eigen::Matrix<double, 4, 3> pinv = pa.completeOrthogonalDecomposition().pseudoInverse();
  const Eigen::Matrix3d g = ex * pb * pinv;
  return g.transpose();
}

inline double center_u(std::size_t j, const epiview::PatchGrid& g) {
  const double p = g.patch_size;
  return static_cast<double>(j % static_cast<std::size_t>(g.grid_w())) * p + p / 2.0;
}

inline double center_v(std::size_t j, const epiview::PatchGrid& g) {
  const double p = g.patch_size;
  return static_cast<double>(j / static_cast<std::size_t>(g.grid_w())) * p + p / 2.0;
}

// Every (j, k) pair evaluated from the definition.
inline epiview::BinaryMatrix brute_force_mask(const epiview::PatchGrid& g, const Eigen::Matrix3d& f,
                                              double delta_patches) {
  const std::size_t t = g.token_count();
  epiview::BinaryMatrix m(t, t);
  const double limit = delta_patches * g.patch_size;
  for (std::size_t j = 0; j < t; ++j) {
    const double uj = center_u(j, g), vj = center_v(j, g);
    // l = F^T p
    const double a = f(0, 0) * uj + f(1, 0) * vj + f(2, 0);
    const double b = f(0, 1) * uj + f(1, 1) * vj + f(2, 1);
    const double c = f(0, 2) * uj + f(1, 2) * vj + f(2, 2);
    const bool epipole = std::abs(a) < 1e-15 && std::abs(b) < 1e-15;
    for (std::size_t k = 0; k < t; ++k) {
      if (epipole || std::isinf(limit)) {
        m(j, k) = 1;
        continue;
      }
      const double d = std::abs(a * center_u(k, g) + b * center_v(k, g) + c) / std::sqrt(a * a + b * b);
      m(j, k) = d <= limit + epiview::kMaskBoundaryTolerance * g.patch_size ? 1 : 0;
    }
  }
  return m;
}

}  // namespace oracle
