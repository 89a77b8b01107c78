// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epiview/geometry.hpp"
#include "epiview/tensor.hpp"

namespace epiview {

enum class BankLayout { Shared, PerView };

std::string to_string(BankLayout layout);
BankLayout bank_layout_from_string(const std::string& s);

inline constexpr double kSingleClassCoresetRatio = 0.10;
inline constexpr double kMultiClassCoresetRatio = 0.0033;

/// Prototype sets. A shared bank has one set serving every view.
struct MemoryBank {
  BankLayout layout = BankLayout::PerView;
  std::size_t views = 0;
  double coreset_ratio = 1.0;
  std::uint64_t seed = 0;
  std::vector<MatrixD> prototypes;         // one per view, or a single shared set
  std::vector<std::size_t> source_counts;  // tokens each set was selected from
  std::vector<std::vector<std::size_t>> selected;  // row indices into the source, in pick order

  const MatrixD& for_view(std::size_t v) const;
};

/// max(1, ceil(ratio * n)).
std::size_t coreset_size(double ratio, std::size_t n);

/// Greedy farthest-point selection of `count` rows starting at `start`.
/// Ties go to the lowest row index.
std::vector<std::size_t> greedy_coreset(const MatrixD& points, std::size_t count, std::size_t start);

/// Builds the bank from fused training tensors (V x T x D each). The start
/// token of each set is drawn from a stream keyed by (seed, set index).
MemoryBank build_bank(std::span<const FeatureTensor64> train_fused, double ratio, std::uint64_t seed,
                      BankLayout layout = BankLayout::PerView, unsigned threads = 1);

struct ViewScore {
  std::vector<double> token_scores;
  double image_score = 0.0;
};

/// Nearest-prototype distance for every row of z_v (T x D).
ViewScore score_view(const MatrixD& z_v, const MatrixD& prototypes);

/// Max over views.
double sample_score(std::span<const double> image_scores);

/// alpha * own score + (1 - alpha) * mean score of every masked neighbor in
/// the other views; tokens without neighbors keep their score.
std::vector<std::vector<double>> refine_scores_epipolar(const std::vector<std::vector<double>>& token_scores,
                                                        const EpipolarMaskSet& masks, double alpha);

struct BankStats {
  std::vector<std::size_t> prototype_counts;
  std::vector<double> source_fractions;
  std::size_t total = 0;
};

BankStats bank_stats(const MemoryBank& bank);

/// Writes bank.json plus one MVFT per prototype set into dir.
void write_bank(const MemoryBank& bank, const std::filesystem::path& dir);
MemoryBank read_bank(const std::filesystem::path& dir);

struct ScoreRecord {
  std::string sample_id;
  std::vector<std::vector<double>> token_scores;  // V x T
  std::vector<double> image_scores;               // V
  double sample_score = 0.0;
};

struct ScoreReport {
  double delta_patches = 1.0;
  double alpha = 0.5;
  bool refine = false;
  std::string fusion;
  std::string bank_layout;
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
  std::vector<ScoreRecord> records;
};

struct ScoringOptions {
  bool refine = false;
  double alpha = 0.5;
};

/// Scores fused test tensors against the bank. `masks` is only consulted
/// when refinement is on.
std::vector<ScoreRecord> score_samples(std::span<const FeatureTensor64> test_fused,
                                       std::span<const std::string> sample_ids, const MemoryBank& bank,
                                       const EpipolarMaskSet* masks, const ScoringOptions& options,
                                       unsigned threads = 1);

void write_score_report(const ScoreReport& report, const std::filesystem::path& json_path);
ScoreReport read_score_report(const std::filesystem::path& json_path);
/// sample_id, sample_score, image_score_<v>...
void write_score_summary_csv(const ScoreReport& report, const std::filesystem::path& csv_path);

/// One 8-bit PGM per view, scaled so the report-wide maximum maps to 255.
void write_score_heatmaps(const ScoreReport& report, const ScoreRecord& record,
                          const std::filesystem::path& dir);

}  // namespace epiview
