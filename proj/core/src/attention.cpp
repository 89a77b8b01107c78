// SPDX-License-Identifier: Apache-2.0

#include "epiview/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "epiview/error.hpp"
#include "epiview/rng.hpp"

namespace epiview {

ProjectionWeights ProjectionWeights::zeros(std::size_t dims) {
  const auto d = static_cast<Eigen::Index>(dims);
  return {MatrixD::Zero(d, d), MatrixD::Zero(d, d), MatrixD::Zero(d, d), MatrixD::Zero(d, d)};
}

ProjectionWeights ProjectionWeights::random(std::size_t dims, std::uint64_t seed, double scale) {
  ProjectionWeights w = zeros(dims);
  CounterRng rng(seed, 0, "projection-init");
  const double sigma = scale / std::sqrt(static_cast<double>(dims));
  for (std::size_t m = 0; m < 4; ++m) {
    for (Eigen::Index i = 0; i < w[m].size(); ++i) w[m].data()[i] = sigma * rng.normal();
  }
  return w;
}

bool ProjectionWeights::all_finite() const {
  return w_q.allFinite() && w_k.allFinite() && w_v.allFinite() && w_o.allFinite();
}

bool ProjectionWeights::same_shape(const ProjectionWeights& other) const {
  for (std::size_t m = 0; m < 4; ++m) {
    if ((*this)[m].rows() != other[m].rows() || (*this)[m].cols() != other[m].cols()) return false;
  }
  return true;
}

MatrixD& ProjectionWeights::operator[](std::size_t i) {
  switch (i) {
    case 0: return w_q;
    case 1: return w_k;
    case 2: return w_v;
    default: return w_o;
  }
}

const MatrixD& ProjectionWeights::operator[](std::size_t i) const {
  return const_cast<ProjectionWeights&>(*this)[i];
}

ProjectionWeights& ProjectionWeights::operator+=(const ProjectionWeights& other) {
  for (std::size_t m = 0; m < 4; ++m) (*this)[m] += other[m];
  return *this;
}

ProjectionWeights& ProjectionWeights::operator*=(double s) {
  for (std::size_t m = 0; m < 4; ++m) (*this)[m] *= s;
  return *this;
}

FeatureTensor ProjectionWeights::to_tensor() const {
  const std::size_t d = dims();
  FeatureTensor t(4, d, d);
  for (std::size_t m = 0; m < 4; ++m) {
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        t.at(m, r, c) = static_cast<float>((*this)[m](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
      }
    }
  }
  return t;
}

ProjectionWeights ProjectionWeights::from_tensor(const FeatureTensor& t) {
  if (t.views() != 4 || t.tokens() != t.dims()) {
    fail(ErrorCode::ShapeMismatch, "weights tensor must be 4 x D x D");
  }
  ProjectionWeights w = zeros(t.dims());
  for (std::size_t m = 0; m < 4; ++m) w[m] = t.view(m).cast<double>();
  return w;
}

namespace {

void check_inputs(const FeatureTensor64& z, const EpipolarMaskSet& masks, const ProjectionWeights& w) {
  const std::size_t d = z.dims();
  for (std::size_t m = 0; m < 4; ++m) {
    if (w[m].rows() != static_cast<Eigen::Index>(d) || w[m].cols() != static_cast<Eigen::Index>(d)) {
      fail(ErrorCode::ShapeMismatch, "projection weights are not D x D for D = " + std::to_string(d));
    }
  }
  if (masks.views() != z.views() || masks.tokens() != z.tokens()) {
    fail(ErrorCode::ShapeMismatch, "mask set shape (" + std::to_string(masks.views()) + ", " +
                                       std::to_string(masks.tokens()) + ") differs from features (" +
                                       std::to_string(z.views()) + ", " + std::to_string(z.tokens()) + ")");
  }
  for (std::size_t a = 0; a < z.views(); ++a) {
    for (std::size_t b = 0; b < z.views(); ++b) {
      if (a != b && !masks.has(a, b)) {
        fail(ErrorCode::MissingMaskPair,
             "missing mask (" + std::to_string(a) + ", " + std::to_string(b) + ")");
      }
    }
  }
}

}  // namespace

AttentionResult eam_forward(const FeatureTensor64& z, const EpipolarMaskSet& masks,
                            const ProjectionWeights& w, const AttentionOptions& options) {
  check_inputs(z, masks, w);
  const std::size_t nv = z.views();
  const std::size_t nt = z.tokens();
  const std::size_t nd = z.dims();
  const auto t = static_cast<Eigen::Index>(nt);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(nd));

  AttentionResult out;
  AttentionCache& c = out.cache;
  c.views = nv;
  c.tokens = nt;
  c.dims = nd;
  c.aggregation = options.aggregation;
  c.w_q = w.w_q;
  c.w_k = w.w_k;
  c.w_v = w.w_v;
  c.w_o = w.w_o;
  c.inputs.resize(nv);
  c.queries.resize(nv);
  c.keys.resize(nv);
  c.values.resize(nv);
  c.attended.resize(nv);
  c.logits.resize(nv * nv);
  c.weights.resize(nv * nv);
  for (std::size_t v = 0; v < nv; ++v) {
    c.inputs[v] = z.view(v);
    c.queries[v] = c.inputs[v] * w.w_q.transpose();
    c.keys[v] = c.inputs[v] * w.w_k.transpose();
    c.values[v] = c.inputs[v] * w.w_v.transpose();
  }

  out.fused = FeatureTensor64(nv, nt, nd);
  for (std::size_t a = 0; a < nv; ++a) {
    MatrixD attended = MatrixD::Zero(t, static_cast<Eigen::Index>(nd));
    for (std::size_t b = 0; b < nv; ++b) {
      if (a == b) continue;
      const BinaryMatrix& mask = masks.at(a, b);
      MatrixD logits = (c.queries[a] * c.keys[b].transpose()) * inv_sqrt_d;
      MatrixD probs = MatrixD::Zero(t, t);
      for (Eigen::Index j = 0; j < t; ++j) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < t; ++k) {
          if (mask(static_cast<std::size_t>(j), static_cast<std::size_t>(k))) {
            row_max = std::max(row_max, logits(j, k));
          }
        }
        if (row_max == -std::numeric_limits<double>::infinity()) continue;
        double total = 0.0;
        for (Eigen::Index k = 0; k < t; ++k) {
          if (mask(static_cast<std::size_t>(j), static_cast<std::size_t>(k))) {
            probs(j, k) = std::exp(logits(j, k) - row_max);
            total += probs(j, k);
          }
        }
        probs.row(j) /= total;
      }
      attended.noalias() += probs * c.values[b];
      c.logits[a * nv + b] = std::move(logits);
      c.weights[a * nv + b] = std::move(probs);
    }
    if (options.aggregation == Aggregation::Mean && nv > 1) {
      attended /= static_cast<double>(nv - 1);
    }
    out.fused.view(a) = attended * w.w_o.transpose() + c.inputs[a];
    c.attended[a] = std::move(attended);
  }
  return out;
}

ProjectionWeights eam_backward(const AttentionCache& c, const FeatureTensor64& grad_fused) {
  if (grad_fused.views() != c.views || grad_fused.tokens() != c.tokens ||
      grad_fused.dims() != c.dims || c.inputs.size() != c.views) {
    fail(ErrorCode::StaleCache, "gradient shape does not match the cached forward pass");
  }
  const std::size_t nv = c.views;
  const auto d = static_cast<Eigen::Index>(c.dims);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.dims));
  const double agg = (c.aggregation == Aggregation::Mean && nv > 1) ? 1.0 / static_cast<double>(nv - 1) : 1.0;

  ProjectionWeights g = ProjectionWeights::zeros(c.dims);
  std::vector<MatrixD> d_queries(nv), d_keys(nv), d_values(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    d_queries[v] = MatrixD::Zero(static_cast<Eigen::Index>(c.tokens), d);
    d_keys[v] = MatrixD::Zero(static_cast<Eigen::Index>(c.tokens), d);
    d_values[v] = MatrixD::Zero(static_cast<Eigen::Index>(c.tokens), d);
  }

  for (std::size_t a = 0; a < nv; ++a) {
    const auto grad = grad_fused.view(a);
    if (grad.isZero(0.0)) continue;
    // fused_a = attended_a * w_o^T + z_a
    g.w_o.noalias() += grad.transpose() * c.attended[a];
    const MatrixD d_attended = (grad * c.w_o) * agg;
    for (std::size_t b = 0; b < nv; ++b) {
      if (a == b) continue;
      const MatrixD& probs = c.weights[a * nv + b];
      d_values[b].noalias() += probs.transpose() * d_attended;
      const MatrixD d_probs = d_attended * c.values[b].transpose();
      // softmax Jacobian, row-wise: dS = P .* (dP - sum(dP .* P))
      const Eigen::VectorXd row_dot = (d_probs.array() * probs.array()).rowwise().sum();
      MatrixD d_logits = probs.array() * (d_probs.colwise() - row_dot).array();
      d_logits *= inv_sqrt_d;
      d_queries[a].noalias() += d_logits * c.keys[b];
      d_keys[b].noalias() += d_logits.transpose() * c.queries[a];
    }
  }
  for (std::size_t v = 0; v < nv; ++v) {
    g.w_q.noalias() += d_queries[v].transpose() * c.inputs[v];
    g.w_k.noalias() += d_keys[v].transpose() * c.inputs[v];
    g.w_v.noalias() += d_values[v].transpose() * c.inputs[v];
  }
  return g;
}

AttentionResult unmasked_mode(const FeatureTensor64& z, const ProjectionWeights& w,
                              const AttentionOptions& options) {
  return eam_forward(z, EpipolarMaskSet::all_ones(z.views(), z.tokens()), w, options);
}

}  // namespace epiview
