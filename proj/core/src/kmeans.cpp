// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "epiview/error.hpp"
#include "epiview/pretrain.hpp"
#include "epiview/rng.hpp"

namespace epiview {

ClusterCenters kmeans_init(const MatrixD& features, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k == 0) fail(ErrorCode::InvalidArgument, "k-means needs K >= 1");
  if (n < k) {
    fail(ErrorCode::TooFewPoints,
         "k-means with K = " + std::to_string(k) + " needs at least K points, got " + std::to_string(n));
  }
  const Eigen::Index d = features.cols();
  const auto kk = static_cast<Eigen::Index>(k);
  CounterRng rng(seed, k, "kmeans++");

  // k-means++ seeding
  MatrixD centers(kk, d);
  std::size_t first = rng.index(n);
  centers.row(0) = features.row(static_cast<Eigen::Index>(first));
  Eigen::VectorXd min_d2(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    min_d2(static_cast<Eigen::Index>(i)) =
        (features.row(static_cast<Eigen::Index>(i)) - centers.row(0)).squaredNorm();
  }
  for (Eigen::Index c = 1; c < kk; ++c) {
    const double total = min_d2.sum();
    if (!(total > 0.0)) {
      fail(ErrorCode::TooFewPoints, "fewer than K distinct points for k-means");
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      if (min_d2(i) <= 0.0) continue;
      acc += min_d2(i);
      pick = i;
      if (acc > target) break;
    }
    centers.row(c) = features.row(pick);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      min_d2(i) = std::min(min_d2(i), (features.row(i) - centers.row(c)).squaredNorm());
    }
  }

  return kmeans_refine(features, std::move(centers), options);
}

// Lloyd iterations with Hamerly's bounds: each point keeps an upper bound on
// the distance to its own center and a lower bound on the distance to every
// other center. A point whose bounds prove that its nearest center cannot
// have changed skips the full scan. Assignments, and hence centers, match
// plain Lloyd; late warm-started iterations touch only a few points.
ClusterCenters kmeans_refine(const MatrixD& features, MatrixD centers, const KMeansOptions& options) {
  const auto n = static_cast<std::size_t>(features.rows());
  const Eigen::Index d = features.cols();
  const Eigen::Index kk = centers.rows();
  const auto k = static_cast<std::size_t>(kk);
  if (kk == 0 || centers.cols() != d) fail(ErrorCode::ShapeMismatch, "initial centers do not match the features");
  if (n < k) fail(ErrorCode::TooFewPoints, "k-means needs at least K points");
  const double inf = std::numeric_limits<double>::infinity();
  // Slack on every bound test so rounding in the distances never skips a
  // point that a full scan would reassign.
  const double margin = 1e-9 * (1.0 + std::sqrt(features.rowwise().squaredNorm().maxCoeff()));

  const auto dist2 = [&](std::size_t i, Eigen::Index c) {
    const double* x = features.data() + static_cast<Eigen::Index>(i) * d;
    const double* m = centers.data() + c * d;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = x[j] - m[j];
      acc += diff * diff;
    }
    return acc;
  };
  std::vector<Eigen::Index> assignment(n, 0);
  std::vector<double> upper(n, inf), lower(n, 0.0);
  const auto full_scan = [&](std::size_t i) {
    double best = inf, second = inf;
    Eigen::Index arg = 0;
    for (Eigen::Index c = 0; c < kk; ++c) {
      const double d2 = dist2(i, c);
      if (d2 < best) {
        second = best;
        best = d2;
        arg = c;
      } else if (d2 < second) {
        second = d2;
      }
    }
    assignment[i] = arg;
    upper[i] = std::sqrt(best);
    lower[i] = std::sqrt(second);
  };

  MatrixD sums(kk, d);
  std::vector<std::size_t> counts(k);
  Eigen::VectorXd half_gap(kk), moved(kk);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (iter == 0) {
      for (std::size_t i = 0; i < n; ++i) full_scan(i);
    } else {
      for (Eigen::Index c = 0; c < kk; ++c) {
        double nearest = inf;
        for (Eigen::Index o = 0; o < kk; ++o) {
          if (o != c) nearest = std::min(nearest, (centers.row(c) - centers.row(o)).norm());
        }
        half_gap(c) = 0.5 * nearest;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double bound = std::max(half_gap(assignment[i]), lower[i]);
        if (upper[i] + margin < bound) continue;
        upper[i] = std::sqrt(dist2(i, assignment[i]));
        if (upper[i] + margin < bound) continue;
        full_scan(i);
      }
    }

    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = features.data() + static_cast<Eigen::Index>(i) * d;
      double* acc = sums.data() + assignment[i] * d;
      for (Eigen::Index j = 0; j < d; ++j) acc[j] += x[j];
      ++counts[static_cast<std::size_t>(assignment[i])];
    }
    double shift = 0.0;
    for (Eigen::Index c = 0; c < kk; ++c) {
      moved(c) = 0.0;
      if (counts[static_cast<std::size_t>(c)] == 0) continue;  // keep an orphaned center in place
      const Eigen::RowVectorXd updated = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      moved(c) = (updated - centers.row(c)).norm();
      shift = std::max(shift, moved(c));
      centers.row(c) = updated;
    }
    if (shift < options.tolerance) break;
    for (std::size_t i = 0; i < n; ++i) {
      upper[i] += moved(assignment[i]);
      lower[i] -= shift;
    }
  }
  return ClusterCenters{std::move(centers), false};
}

std::size_t assign_nearest(std::span<const double> z, const ClusterCenters& centers) {
  const auto d = static_cast<Eigen::Index>(z.size());
  if (centers.centers.cols() != d) fail(ErrorCode::ShapeMismatch, "center dimension differs from z");
  if (centers.count() == 0) fail(ErrorCode::InvalidArgument, "no centers");
  std::size_t best_k = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centers.centers.rows(); ++k) {
    double d2 = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double diff = z[static_cast<std::size_t>(c)] - centers.centers(k, c);
      d2 += diff * diff;
    }
    if (d2 < best) {
      best = d2;
      best_k = static_cast<std::size_t>(k);
    }
  }
  return best_k;
}

}  // namespace epiview
