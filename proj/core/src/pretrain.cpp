// SPDX-License-Identifier: Apache-2.0

#include "epiview/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "epiview/error.hpp"
#include "epiview/parallel.hpp"

namespace epiview {

// --------------------------------------------------------------------------- losses

double positive_loss(std::span<const FeatureTensor64> fused, const ClusterCenters& centers) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& z : fused) {
    for (std::size_t v = 0; v < z.views(); ++v) {
      for (std::size_t j = 0; j < z.tokens(); ++j) {
        const auto tok = z.token(v, j);
        const std::size_t k = assign_nearest(tok, centers);
        const Eigen::Map<const Eigen::RowVectorXd> row(tok.data(), static_cast<Eigen::Index>(tok.size()));
        sum += (row - centers.centers.row(static_cast<Eigen::Index>(k))).norm();
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

FeatureTensor64 erase_token(const FeatureTensor64& z, std::size_t view, std::size_t token, MaskFill fill) {
  if (view >= z.views() || token >= z.tokens()) {
    fail(ErrorCode::IndexOutOfRange, "erased token outside the tensor");
  }
  FeatureTensor64 out = z;
  auto tok = out.token(view, token);
  if (fill == MaskFill::Zeros) {
    std::fill(tok.begin(), tok.end(), 0.0);
  } else {
    const Eigen::RowVectorXd mean = z.view(view).colwise().mean();
    for (std::size_t c = 0; c < tok.size(); ++c) tok[c] = mean(static_cast<Eigen::Index>(c));
  }
  return out;
}

std::vector<std::size_t> eligible_support_tokens(const EpipolarMaskSet& masks, std::size_t support_view) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < masks.tokens(); ++k) {
    for (std::size_t a = 0; a < masks.views(); ++a) {
      if (a == support_view) continue;
      if (!masks.at(a, support_view).col_empty(k)) {
        out.push_back(k);
        break;
      }
    }
  }
  return out;
}

namespace {

Eigen::VectorXd token_vector(const FeatureTensor64& z, std::size_t v, std::size_t j) {
  const auto tok = z.token(v, j);
  return Eigen::Map<const Eigen::VectorXd>(tok.data(), static_cast<Eigen::Index>(tok.size()));
}

std::pair<std::size_t, std::size_t> draw_support(const EpipolarMaskSet& masks, CounterRng& rng) {
  const std::size_t b = rng.index(masks.views());
  const auto eligible = eligible_support_tokens(masks, b);
  if (eligible.empty()) {
    fail(ErrorCode::NoEligibleSupportToken,
         "support view " + std::to_string(b) + " has no token with an epipolar correspondent");
  }
  return {b, eligible[rng.index(eligible.size())]};
}

}  // namespace

NegativeSet select_negatives(const FeatureTensor64& original_fused, const FeatureTensor64& erased_fused,
                             const EpipolarMaskSet& masks, std::size_t support_view,
                             std::size_t support_token, std::size_t n_k) {
  NegativeSet out;
  out.selection.support_view = support_view;
  out.selection.support_token = support_token;
  for (std::size_t a = 0; a < original_fused.views(); ++a) {
    if (a == support_view) continue;
    const BinaryMatrix& mask = masks.at(a, support_view);
    std::vector<std::pair<double, std::size_t>> altered;
    for (std::size_t j = 0; j < original_fused.tokens(); ++j) {
      if (!mask(j, support_token)) continue;
      const double change =
          (token_vector(erased_fused, a, j) - token_vector(original_fused, a, j)).norm();
      altered.emplace_back(change, j);
    }
    std::stable_sort(altered.begin(), altered.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    const std::size_t keep = std::min(n_k, altered.size());
    for (std::size_t i = 0; i < keep; ++i) {
      const std::size_t j = altered[i].second;
      out.selection.reference.emplace_back(a, j);
      out.entries.push_back(NegativeEntry{a, j, token_vector(erased_fused, a, j), false});
    }
  }
  out.entries.push_back(NegativeEntry{support_view, support_token,
                                      token_vector(erased_fused, support_view, support_token), true});
  return out;
}

NegativeSet synthesize_negatives(const FeatureTensor64& z, const EpipolarMaskSet& masks,
                                 const ProjectionWeights& w, std::size_t n_k, CounterRng& rng,
                                 MaskFill fill, const AttentionOptions& options) {
  const auto [b, k] = draw_support(masks, rng);
  const AttentionResult original = eam_forward(z, masks, w, options);
  const AttentionResult erased = eam_forward(erase_token(z, b, k, fill), masks, w, options);
  return select_negatives(original.fused, erased.fused, masks, b, k, n_k);
}

namespace {

double mean_center_distance(const Eigen::VectorXd& f, const ClusterCenters& centers,
                            Eigen::VectorXd* direction) {
  double sum = 0.0;
  if (direction) direction->setZero(f.size());
  for (Eigen::Index k = 0; k < centers.centers.rows(); ++k) {
    const Eigen::VectorXd diff = f - centers.centers.row(k).transpose();
    const double dist = diff.norm();
    sum += dist;
    if (direction && dist > 0.0) *direction += diff / dist;
  }
  const double n = static_cast<double>(centers.count());
  if (direction) *direction /= n;
  return sum / n;
}

// Loss of one negative entry and, optionally, its gradient w.r.t. the feature.
double negative_entry_loss(const Eigen::VectorXd& f, const ClusterCenters& centers,
                           Eigen::VectorXd* gradient) {
  Eigen::VectorXd direction;
  const double mean = mean_center_distance(f, centers, gradient ? &direction : nullptr);
  if (mean > kNegativeLogFloor) {
    if (gradient) *gradient = -direction / mean;
    return -std::log(mean);
  }
  if (gradient) gradient->setZero(f.size());
  return -std::log(kNegativeLogFloor);
}

const ClusterCenters& centers_for_view(std::span<const ClusterCenters> per_view, std::size_t v) {
  if (v >= per_view.size()) {
    fail(ErrorCode::InvalidArgument, "no negative-loss centers for view " + std::to_string(v));
  }
  return per_view[v];
}

struct SampleTerms {
  double positive_sum = 0.0;
  std::size_t positive_count = 0;
  double negative = 0.0;
};

// Adds this sample's contribution to `gradient` with the given scales:
// d/dW [pos_scale * sum_tokens dist + neg_scale * L_neg].
SampleTerms accumulate_sample(const AttentionResult& original, const AttentionResult* erased,
                              const NegativeSet* negatives, const ClusterCenters& shared,
                              std::span<const ClusterCenters> per_view, double pos_scale,
                              double neg_scale, ProjectionWeights* gradient) {
  SampleTerms terms;
  const FeatureTensor64& f = original.fused;
  FeatureTensor64 grad_pos(f.views(), f.tokens(), f.dims());
  for (std::size_t v = 0; v < f.views(); ++v) {
    for (std::size_t j = 0; j < f.tokens(); ++j) {
      const auto tok = f.token(v, j);
      const std::size_t k = assign_nearest(tok, shared);
      const Eigen::Map<const Eigen::VectorXd> z(tok.data(), static_cast<Eigen::Index>(tok.size()));
      const Eigen::VectorXd diff = z - shared.centers.row(static_cast<Eigen::Index>(k)).transpose();
      const double dist = diff.norm();
      terms.positive_sum += dist;
      ++terms.positive_count;
      if (gradient && dist > 0.0) {
        auto g = grad_pos.token(v, j);
        for (std::size_t c = 0; c < g.size(); ++c) {
          g[c] = pos_scale * diff(static_cast<Eigen::Index>(c)) / dist;
        }
      }
    }
  }
  if (gradient && pos_scale != 0.0) *gradient += eam_backward(original.cache, grad_pos);

  if (negatives && erased) {
    const FeatureTensor64& fe = erased->fused;
    FeatureTensor64 grad_neg(fe.views(), fe.tokens(), fe.dims());
    for (const auto& entry : negatives->entries) {
      Eigen::VectorXd g;
      terms.negative += negative_entry_loss(entry.feature, centers_for_view(per_view, entry.view),
                                            gradient ? &g : nullptr);
      if (gradient) {
        auto slot = grad_neg.token(entry.view, entry.token);
        for (std::size_t c = 0; c < slot.size(); ++c) {
          slot[c] += neg_scale * g(static_cast<Eigen::Index>(c));
        }
      }
    }
    if (gradient && neg_scale != 0.0) *gradient += eam_backward(erased->cache, grad_neg);
  }
  return terms;
}

}  // namespace

double negative_loss(const NegativeSet& negatives, std::span<const ClusterCenters> per_view_centers) {
  double loss = 0.0;
  for (const auto& entry : negatives.entries) {
    loss += negative_entry_loss(entry.feature, centers_for_view(per_view_centers, entry.view), nullptr);
  }
  return loss;
}

BatchObjective batch_objective(std::span<const FeatureTensor64> batch, const EpipolarMaskSet& masks,
                               const ProjectionWeights& w, const ClusterCenters& shared_centers,
                               std::span<const ClusterCenters> per_view_centers, double lambda,
                               std::span<const NegativeSelection> selections, MaskFill fill,
                               const AttentionOptions& options, bool with_gradient) {
  if (!selections.empty() && selections.size() != batch.size()) {
    fail(ErrorCode::InvalidArgument, "one negative selection per batch sample is required");
  }
  std::size_t token_total = 0;
  for (const auto& z : batch) token_total += z.views() * z.tokens();
  const double pos_scale = token_total ? 1.0 / static_cast<double>(token_total) : 0.0;
  const double neg_scale = batch.empty() ? 0.0 : lambda / static_cast<double>(batch.size());

  BatchObjective out;
  out.gradient = ProjectionWeights::zeros(w.dims());
  double pos_sum = 0.0;
  double neg_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AttentionResult original = eam_forward(batch[i], masks, w, options);
    std::optional<AttentionResult> erased;
    std::optional<NegativeSet> negatives;
    if (!selections.empty()) {
      const NegativeSelection& sel = selections[i];
      erased = eam_forward(erase_token(batch[i], sel.support_view, sel.support_token, fill), masks, w,
                           options);
      NegativeSet set;
      set.selection = sel;
      for (const auto& [v, j] : sel.reference) {
        set.entries.push_back(NegativeEntry{v, j, token_vector(erased->fused, v, j), false});
      }
      set.entries.push_back(NegativeEntry{sel.support_view, sel.support_token,
                                          token_vector(erased->fused, sel.support_view, sel.support_token),
                                          true});
      negatives = std::move(set);
    }
    const SampleTerms terms =
        accumulate_sample(original, erased ? &*erased : nullptr, negatives ? &*negatives : nullptr,
                          shared_centers, per_view_centers, pos_scale, neg_scale,
                          with_gradient ? &out.gradient : nullptr);
    pos_sum += terms.positive_sum;
    neg_sum += terms.negative;
  }
  out.positive = pos_sum * pos_scale;
  out.negative = batch.empty() ? 0.0 : neg_sum / static_cast<double>(batch.size());
  out.total = total_loss(out.positive, out.negative, lambda);
  return out;
}

// --------------------------------------------------------------------------- optimizer

AdamW::AdamW(std::size_t dims, double learning_rate, double weight_decay, double beta1, double beta2,
             double epsilon)
    : lr_(learning_rate),
      wd_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(ProjectionWeights::zeros(dims)),
      v_(ProjectionWeights::zeros(dims)) {}

void AdamW::step(ProjectionWeights& w, const ProjectionWeights& gradient) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < 4; ++i) {
    MatrixD& p = w[i];
    const MatrixD& g = gradient[i];
    p *= (1.0 - lr_ * wd_);
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

// --------------------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidArgument, "learning_rate must be positive");
  if (!(weight_decay >= 0.0)) fail(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (epochs < 0) fail(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (!(lambda >= 0.0)) fail(ErrorCode::InvalidArgument, "lambda must be >= 0");
  if (n_k == 0) fail(ErrorCode::InvalidArgument, "n_k must be positive");
  if (k_centers == 0) fail(ErrorCode::InvalidArgument, "k_centers must be positive");
  if (!(delta_patches >= 0.0)) fail(ErrorCode::InvalidArgument, "delta_patches must be >= 0");
  if (batch_samples == 0) fail(ErrorCode::InvalidArgument, "batch_samples must be positive");
  if (!(init_scale >= 0.0)) fail(ErrorCode::InvalidArgument, "init_scale must be >= 0");
  if (refresh_iterations <= 0) fail(ErrorCode::InvalidArgument, "refresh_iterations must be positive");
}

MatrixD stack_tokens(std::span<const FeatureTensor64> samples) {
  if (samples.empty()) return {};
  const std::size_t per = samples[0].views() * samples[0].tokens();
  MatrixD out(static_cast<Eigen::Index>(per * samples.size()), static_cast<Eigen::Index>(samples[0].dims()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& z = samples[i];
    out.middleRows(static_cast<Eigen::Index>(i * per), static_cast<Eigen::Index>(per)) =
        Eigen::Map<const MatrixD>(z.data().data(), static_cast<Eigen::Index>(per),
                                  static_cast<Eigen::Index>(z.dims()));
  }
  return out;
}

MatrixD stack_view_tokens(std::span<const FeatureTensor64> samples, std::size_t view) {
  if (samples.empty()) return {};
  const std::size_t t = samples[0].tokens();
  MatrixD out(static_cast<Eigen::Index>(t * samples.size()), static_cast<Eigen::Index>(samples[0].dims()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i * t), static_cast<Eigen::Index>(t)) = samples[i].view(view);
  }
  return out;
}

double mean_pairwise_distance(const MatrixD& rows) {
  const Eigen::Index n = rows.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) sum += (rows.row(i) - rows.row(j)).norm();
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<FeatureTensor64> fuse_all(std::span<const FeatureTensor64> samples, const EpipolarMaskSet& masks,
                                      const ProjectionWeights& w, const AttentionOptions& options,
                                      unsigned threads) {
  std::vector<FeatureTensor64> out(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t i) { out[i] = eam_forward(samples[i], masks, w, options).fused; });
  return out;
}

namespace {

struct CenterSet {
  ClusterCenters shared;
  std::vector<ClusterCenters> per_view;
};

CenterSet fit_centers(std::span<const FeatureTensor64> fused, std::size_t k, std::uint64_t seed) {
  CenterSet out;
  const MatrixD all = stack_tokens(fused);
  out.shared = kmeans_init(all, std::min<std::size_t>(k, static_cast<std::size_t>(all.rows())), seed);
  for (std::size_t v = 0; v < fused[0].views(); ++v) {
    const MatrixD rows = stack_view_tokens(fused, v);
    ClusterCenters c =
        kmeans_init(rows, std::min<std::size_t>(k, static_cast<std::size_t>(rows.rows())), mix64(seed + v + 1));
    c.per_view = true;
    out.per_view.push_back(std::move(c));
  }
  return out;
}

// Re-clusters the current features starting from the previous centers.
CenterSet refit_centers(std::span<const FeatureTensor64> fused, const CenterSet& previous, int iterations) {
  KMeansOptions options;
  options.max_iterations = iterations;
  CenterSet out;
  out.shared = kmeans_refine(stack_tokens(fused), previous.shared.centers, options);
  for (std::size_t v = 0; v < previous.per_view.size(); ++v) {
    ClusterCenters c = kmeans_refine(stack_view_tokens(fused, v), previous.per_view[v].centers, options);
    c.per_view = true;
    out.per_view.push_back(std::move(c));
  }
  return out;
}

MatrixD gather_rows(const MatrixD& all, const std::vector<std::size_t>& idx) {
  MatrixD out(static_cast<Eigen::Index>(idx.size()), all.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

TrainResult train(std::span<const FeatureTensor64> train_samples, const EpipolarMaskSet& masks,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_samples.empty()) fail(ErrorCode::EmptyTrainSplit, "no training samples");
  const std::size_t dims = train_samples[0].dims();
  for (const auto& z : train_samples) {
    if (!z.same_shape(train_samples[0])) fail(ErrorCode::ShapeMismatch, "training samples differ in shape");
  }
  const AttentionOptions options{cfg.aggregation};

  TrainResult result;
  result.weights = ProjectionWeights::random(dims, cfg.seed, cfg.init_scale);
  AdamW optimizer(dims, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon);

  const std::size_t n = train_samples.size();
  const std::size_t total_tokens = n * train_samples[0].views() * train_samples[0].tokens();
  std::vector<std::size_t> collapse_idx(total_tokens);
  std::iota(collapse_idx.begin(), collapse_idx.end(), 0);
  {
    CounterRng rng(cfg.seed, 0, "collapse-sample");
    rng.shuffle(collapse_idx);
    collapse_idx.resize(std::min(cfg.collapse_samples, total_tokens));
    std::sort(collapse_idx.begin(), collapse_idx.end());
  }

  std::vector<FeatureTensor64> fused = fuse_all(train_samples, masks, result.weights, options);
  CenterSet centers = fit_centers(fused, cfg.k_centers, mix64(cfg.seed ^ 0x5EEDULL));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.center_refresh == CenterRefresh::PerEpoch && epoch > 1) {
      centers = refit_centers(fused, centers, cfg.refresh_iterations);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle_rng(cfg.seed, static_cast<std::uint64_t>(epoch), "shuffle");
    shuffle_rng.shuffle(order);

    double pos_acc = 0.0, neg_acc = 0.0, total_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_samples) {
      const std::size_t end = std::min(n, start + cfg.batch_samples);
      const std::size_t bsz = end - start;
      const double pos_scale =
          1.0 / static_cast<double>(bsz * train_samples[0].views() * train_samples[0].tokens());
      const double neg_scale = cfg.lambda / static_cast<double>(bsz);
      ProjectionWeights gradient = ProjectionWeights::zeros(dims);
      double pos_sum = 0.0, neg_sum = 0.0;
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t idx = order[s];
        const FeatureTensor64& z = train_samples[idx];
        CounterRng neg_rng(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) | idx, "negatives");
        const auto [b, k] = draw_support(masks, neg_rng);
        const AttentionResult original = eam_forward(z, masks, result.weights, options);
        const AttentionResult erased =
            eam_forward(erase_token(z, b, k, cfg.mask_fill), masks, result.weights, options);
        const NegativeSet negatives = select_negatives(original.fused, erased.fused, masks, b, k, cfg.n_k);
        const SampleTerms terms = accumulate_sample(original, &erased, &negatives, centers.shared,
                                                    centers.per_view, pos_scale, neg_scale, &gradient);
        pos_sum += terms.positive_sum;
        neg_sum += terms.negative;
      }
      if (!gradient.all_finite()) {
        fail(ErrorCode::NumericFailure, "non-finite gradient at epoch " + std::to_string(epoch));
      }
      optimizer.step(result.weights, gradient);
      if (!result.weights.all_finite()) {
        fail(ErrorCode::NumericFailure, "non-finite weights at epoch " + std::to_string(epoch));
      }
      const double pos = pos_sum * pos_scale;
      const double neg = neg_sum / static_cast<double>(bsz);
      pos_acc += pos;
      neg_acc += neg;
      total_acc += total_loss(pos, neg, cfg.lambda);
      ++batches;
    }

    fused = fuse_all(train_samples, masks, result.weights, options);
    EpochTrace row;
    row.epoch = epoch;
    row.positive = pos_acc / static_cast<double>(batches);
    row.negative = neg_acc / static_cast<double>(batches);
    row.total = total_acc / static_cast<double>(batches);
    row.collapse = mean_pairwise_distance(gather_rows(stack_tokens(fused), collapse_idx));
    result.trace.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace epiview
