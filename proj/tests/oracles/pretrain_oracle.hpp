// SPDX-License-Identifier: Apache-2.0
// Reference versions of the pretraining building blocks.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "epiview/geometry.hpp"
#include "epiview/tensor.hpp"

namespace oracle {

// Repeated argmax over the candidates of each reference view: largest change
// first, lower token index on ties.
inline std::vector<std::pair<std::size_t, std::size_t>> top_altered(const epiview::FeatureTensor64& before,
                                                                    const epiview::FeatureTensor64& after,
                                                                    const epiview::EpipolarMaskSet& masks,
                                                                    std::size_t b, std::size_t k,
                                                                    std::size_t n_k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < before.views(); ++a) {
    if (a == b) continue;
    std::vector<bool> taken(before.tokens(), false);
    for (std::size_t round = 0; round < n_k; ++round) {
      double best = -1.0;
      std::size_t arg = before.tokens();
      for (std::size_t j = 0; j < before.tokens(); ++j) {
        if (taken[j] || masks.at(a, b)(j, k) == 0) continue;
        double d2 = 0.0;
        for (std::size_t c = 0; c < before.dims(); ++c) {
          const double diff = after.at(a, j, c) - before.at(a, j, c);
          d2 += diff * diff;
        }
        const double d = std::sqrt(d2);
        if (d > best) {
          best = d;
          arg = j;
        }
      }
      if (arg == before.tokens()) break;
      taken[arg] = true;
      out.emplace_back(a, arg);
    }
  }
  return out;
}

// First Adam step with decoupled decay, written per scalar.
// Textbook Lloyd: full scan of every point against every center each step,
// lowest center index on ties, orphaned centers stay put.
inline epiview::MatrixD lloyd(const epiview::MatrixD& x, epiview::MatrixD c, int max_iterations, double tolerance) {
  const Eigen::Index n = x.rows(), k = c.rows();
  for (int iter = 0; iter < max_iterations; ++iter) {
    epiview::MatrixD sums = epiview::MatrixD::Zero(k, x.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k; ++j) {
        const double d2 = (x.row(i) - c.row(j)).squaredNorm();
        if (d2 < best) {
          best = d2;
          arg = j;
        }
      }
      sums.row(arg) += x.row(i);
      counts[static_cast<std::size_t>(arg)] += 1.0;
    }
    double shift = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0.0) continue;
      const Eigen::RowVectorXd updated = sums.row(j) / counts[static_cast<std::size_t>(j)];
      shift = std::max(shift, (updated - c.row(j)).norm());
      c.row(j) = updated;
    }
    if (shift < tolerance) break;
  }
  return c;
}

inline double adamw_first_step(double w, double g, double lr, double wd, double eps) {
  const double m_hat = g;        // (1 - b1) g / (1 - b1)
  const double v_hat = g * g;    // (1 - b2) g^2 / (1 - b2)
  return w * (1.0 - lr * wd) - lr * m_hat / (std::sqrt(v_hat) + eps);
}

}  // namespace oracle
