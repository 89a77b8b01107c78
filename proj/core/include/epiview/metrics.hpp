// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epiview/features.hpp"
#include "epiview/membank.hpp"

namespace epiview {

/// Area under the ROC curve via the rank-sum statistic; tied scores get
/// their average rank.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Sum over descending distinct-score thresholds of (recall step) x precision.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct MetricRow {
  std::string level;   // image | sample | patch
  std::string metric;  // auroc | ap
  double value = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct LevelScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

struct EvaluationInputs {
  LevelScores image;
  LevelScores sample;
  LevelScores patch;  // empty when the manifest has no patch masks
};

/// Joins score records to the manifest's test samples by id. A view counts
/// as anomalous iff any of its patch-mask bits is set (view_labels when
/// masks are absent).
EvaluationInputs collect_labels(const DatasetManifest& manifest, const ScoreReport& report);

std::vector<MetricRow> evaluate(const EvaluationInputs& inputs);
std::vector<MetricRow> evaluate(const DatasetManifest& manifest, const ScoreReport& report);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);
void write_metrics_json(const std::vector<MetricRow>& rows, const std::filesystem::path& path);
std::string metrics_csv(const std::vector<MetricRow>& rows);

/// Returns the value of (level, metric) or throws InvalidArgument.
double metric_value(const std::vector<MetricRow>& rows, const std::string& level, const std::string& metric);

}  // namespace epiview
