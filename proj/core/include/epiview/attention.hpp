// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "epiview/geometry.hpp"
#include "epiview/tensor.hpp"

namespace epiview {

/// The four D x D projections of the attention module. Projections act on
/// column vectors: q = w_q * z.
struct ProjectionWeights {
  MatrixD w_q;
  MatrixD w_k;
  MatrixD w_v;
  MatrixD w_o;

  static ProjectionWeights zeros(std::size_t dims);
  /// Entries drawn from N(0, (scale / sqrt(D))^2), keyed by seed.
  static ProjectionWeights random(std::size_t dims, std::uint64_t seed, double scale = 1.0);

  std::size_t dims() const { return static_cast<std::size_t>(w_q.rows()); }
  bool all_finite() const;
  bool same_shape(const ProjectionWeights& other) const;

  MatrixD& operator[](std::size_t i);
  const MatrixD& operator[](std::size_t i) const;

  ProjectionWeights& operator+=(const ProjectionWeights& other);
  ProjectionWeights& operator*=(double s);

  /// Packs the matrices (q, k, v, o) into a 4 x D x D tensor.
  FeatureTensor to_tensor() const;
  static ProjectionWeights from_tensor(const FeatureTensor& t);
};

enum class Aggregation {
  Sum,   // sum over support views
  Mean,  // divide the sum by V - 1
};

struct AttentionOptions {
  Aggregation aggregation = Aggregation::Sum;
};

/// Everything the backward pass needs from one forward call.
struct AttentionCache {
  std::size_t views = 0;
  std::size_t tokens = 0;
  std::size_t dims = 0;
  Aggregation aggregation = Aggregation::Sum;
  std::vector<MatrixD> inputs;     // per view, T x D
  std::vector<MatrixD> queries;    // per view, rows are (w_q z)^T
  std::vector<MatrixD> keys;
  std::vector<MatrixD> values;
  std::vector<MatrixD> attended;   // per reference view, input to w_o
  std::vector<MatrixD> logits;     // V*V entries, (a, b) at a*V+b; unused diagonal empty
  std::vector<MatrixD> weights;    // masked softmax, same indexing
  MatrixD w_o;                     // needed for the gradient of the attended output
  MatrixD w_q;
  MatrixD w_k;
  MatrixD w_v;

  const MatrixD& pair_weights(std::size_t a, std::size_t b) const { return weights[a * views + b]; }
};

struct AttentionResult {
  FeatureTensor64 fused;
  AttentionCache cache;
};

/// fused_a = w_o * sum_{b != a} softmax_M(q_a k_b^T / sqrt(D)) v_b + z_a,
/// with masked entries excluded from the softmax. Tokens whose mask rows are
/// empty in every support view are returned unchanged.
AttentionResult eam_forward(const FeatureTensor64& z, const EpipolarMaskSet& masks,
                            const ProjectionWeights& w, const AttentionOptions& options = {});

/// Weight gradients given dL/dfused. Input features are treated as constants.
ProjectionWeights eam_backward(const AttentionCache& cache, const FeatureTensor64& grad_fused);

/// eam_forward with every mask entry set.
AttentionResult unmasked_mode(const FeatureTensor64& z, const ProjectionWeights& w,
                              const AttentionOptions& options = {});

}  // namespace epiview
