// SPDX-License-Identifier: Apache-2.0

#include "epiview/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "epiview/error.hpp"
#include "json.hpp"

namespace epiview {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  for (const int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::SingleClass, "AUROC needs both classes");

  const auto idx = order_by_score(scores, false);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) fail(ErrorCode::NoPositives, "AP needs at least one positive");

  const auto idx = order_by_score(scores, true);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += static_cast<std::size_t>(labels[idx[j]]);
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(j);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

EvaluationInputs collect_labels(const DatasetManifest& manifest, const ScoreReport& report) {
  std::map<std::string, const SampleRecord*> by_id;
  for (const auto& s : manifest.samples) by_id[s.sample_id] = &s;
  EvaluationInputs in;
  for (const auto& r : report.records) {
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) fail(ErrorCode::SchemaError, "scored sample '" + r.sample_id + "' is not in the manifest");
    const SampleRecord& s = *it->second;
    if (r.image_scores.size() != s.view_feature_paths.size()) {
      fail(ErrorCode::ShapeMismatch, "view count of '" + r.sample_id + "' disagrees with the manifest");
    }
    in.sample.scores.push_back(r.sample_score);
    in.sample.labels.push_back(s.label == Label::Anomalous ? 1 : 0);
    for (std::size_t v = 0; v < r.image_scores.size(); ++v) {
      int label = 0;
      if (s.patch_masks) {
        const auto& m = (*s.patch_masks)[v];
        label = std::any_of(m.begin(), m.end(), [](std::uint8_t b) { return b != 0; }) ? 1 : 0;
        if (m.size() != r.token_scores[v].size()) {
          fail(ErrorCode::ShapeMismatch, "patch mask length of '" + r.sample_id + "' disagrees with the scores");
        }
        for (std::size_t j = 0; j < m.size(); ++j) {
          in.patch.scores.push_back(r.token_scores[v][j]);
          in.patch.labels.push_back(m[j] ? 1 : 0);
        }
      } else if (v < s.view_labels.size()) {
        label = s.view_labels[v] ? 1 : 0;
      } else {
        label = s.label == Label::Anomalous ? 1 : 0;
      }
      in.image.scores.push_back(r.image_scores[v]);
      in.image.labels.push_back(label);
    }
  }
  return in;
}

namespace {

void add_rows(std::vector<MetricRow>& rows, const std::string& level, const LevelScores& s, bool with_ap) {
  const auto n_pos = static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), 1));
  const std::size_t n_neg = s.labels.size() - n_pos;
  rows.push_back({level, "auroc", auroc(s.scores, s.labels), n_pos, n_neg});
  if (with_ap) rows.push_back({level, "ap", average_precision(s.scores, s.labels), n_pos, n_neg});
}

}  // namespace

std::vector<MetricRow> evaluate(const EvaluationInputs& inputs) {
  std::vector<MetricRow> rows;
  add_rows(rows, "image", inputs.image, true);
  add_rows(rows, "sample", inputs.sample, true);
  if (!inputs.patch.scores.empty()) add_rows(rows, "patch", inputs.patch, false);
  return rows;
}

std::vector<MetricRow> evaluate(const DatasetManifest& manifest, const ScoreReport& report) {
  return evaluate(collect_labels(manifest, report));
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17) << "level,metric,value,n_pos,n_neg\n";
  for (const auto& r : rows) os << r.level << ',' << r.metric << ',' << r.value << ',' << r.n_pos << ',' << r.n_neg << "\n";
  return os.str();
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << metrics_csv(rows);
}

void write_metrics_json(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"level", r.level}, {"metric", r.metric}, {"value", r.value}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << j.dump(2) << "\n";
}

double metric_value(const std::vector<MetricRow>& rows, const std::string& level, const std::string& metric) {
  for (const auto& r : rows) {
    if (r.level == level && r.metric == metric) return r.value;
  }
  fail(ErrorCode::InvalidArgument, "no " + level + " " + metric + " in the metric table");
}

}  // namespace epiview
