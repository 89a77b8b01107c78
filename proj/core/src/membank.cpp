// SPDX-License-Identifier: Apache-2.0

#include "epiview/membank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "epiview/error.hpp"
#include "epiview/features.hpp"
#include "epiview/parallel.hpp"
#include "epiview/pgm.hpp"
#include "epiview/rng.hpp"
#include "json.hpp"

namespace epiview {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(BankLayout layout) { return layout == BankLayout::Shared ? "shared" : "per-view"; }

BankLayout bank_layout_from_string(const std::string& s) {
  if (s == "shared") return BankLayout::Shared;
  if (s == "per-view") return BankLayout::PerView;
  fail(ErrorCode::InvalidArgument, "unknown bank layout '" + s + "'");
}

const MatrixD& MemoryBank::for_view(std::size_t v) const {
  if (prototypes.empty()) fail(ErrorCode::EmptyBank, "memory bank has no prototype sets");
  if (layout == BankLayout::Shared) return prototypes.front();
  if (v >= prototypes.size()) fail(ErrorCode::IndexOutOfRange, "no prototype set for view " + std::to_string(v));
  return prototypes[v];
}

std::size_t coreset_size(double ratio, std::size_t n) {
  if (!(ratio > 0.0 && ratio <= 1.0)) fail(ErrorCode::InvalidArgument, "coreset ratio must lie in (0, 1]");
  // The small slack keeps e.g. 0.1 * 640 from rounding up to 65.
  const double raw = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(n, 1));
}

namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> greedy_coreset(const MatrixD& points, std::size_t count, std::size_t start) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) fail(ErrorCode::EmptyView, "cannot select a coreset from zero points");
  if (start >= n) fail(ErrorCode::IndexOutOfRange, "coreset start index out of range");
  count = std::min(count, n);
  std::vector<std::size_t> picked{start};
  picked.reserve(count);
  Eigen::VectorXd nearest = (points.rowwise() - points.row(static_cast<Eigen::Index>(start))).rowwise().squaredNorm();
  while (picked.size() < count) {
    // maxCoeff is not guaranteed to pick the first maximum, so scan explicitly
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest(static_cast<Eigen::Index>(i)) > best_d) {
        best_d = nearest(static_cast<Eigen::Index>(i));
        best = i;
      }
    }
    picked.push_back(best);
    nearest = nearest.cwiseMin(
        (points.rowwise() - points.row(static_cast<Eigen::Index>(best))).rowwise().squaredNorm());
  }
  return picked;
}

MemoryBank build_bank(std::span<const FeatureTensor64> train_fused, double ratio, std::uint64_t seed,
                      BankLayout layout, unsigned threads) {
  if (train_fused.empty()) fail(ErrorCode::EmptyView, "no training features for the memory bank");
  coreset_size(ratio, 1);  // validates the ratio
  const std::size_t views = train_fused[0].views();
  const std::size_t tokens = train_fused[0].tokens();
  const std::size_t dims = train_fused[0].dims();
  if (tokens == 0 || dims == 0) fail(ErrorCode::EmptyView, "training tensors have no tokens");

  std::vector<MatrixD> sources;
  if (layout == BankLayout::Shared) {
    MatrixD all(static_cast<Eigen::Index>(train_fused.size() * views * tokens), static_cast<Eigen::Index>(dims));
    Eigen::Index row = 0;
    for (const auto& z : train_fused) {
      for (std::size_t v = 0; v < views; ++v) {
        all.middleRows(row, static_cast<Eigen::Index>(tokens)) = z.view(v);
        row += static_cast<Eigen::Index>(tokens);
      }
    }
    sources.push_back(std::move(all));
  } else {
    for (std::size_t v = 0; v < views; ++v) {
      MatrixD rows(static_cast<Eigen::Index>(train_fused.size() * tokens), static_cast<Eigen::Index>(dims));
      for (std::size_t i = 0; i < train_fused.size(); ++i) {
        rows.middleRows(static_cast<Eigen::Index>(i * tokens), static_cast<Eigen::Index>(tokens)) =
            train_fused[i].view(v);
      }
      sources.push_back(std::move(rows));
    }
  }

  MemoryBank bank;
  bank.layout = layout;
  bank.views = views;
  bank.coreset_ratio = ratio;
  bank.seed = seed;
  bank.prototypes.resize(sources.size());
  bank.selected.resize(sources.size());
  bank.source_counts.resize(sources.size());
  parallel_for(sources.size(), threads, [&](std::size_t s) {
    const MatrixD& src = sources[s];
    const auto n = static_cast<std::size_t>(src.rows());
    CounterRng rng(seed, s, "coreset");
    const std::size_t start = static_cast<std::size_t>(rng.index(n));
    auto picked = greedy_coreset(src, coreset_size(ratio, n), start);
    MatrixD protos(static_cast<Eigen::Index>(picked.size()), src.cols());
    for (std::size_t i = 0; i < picked.size(); ++i) {
      protos.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(picked[i]));
    }
    bank.prototypes[s] = std::move(protos);
    bank.selected[s] = std::move(picked);
    bank.source_counts[s] = n;
  });
  return bank;
}

ViewScore score_view(const MatrixD& z_v, const MatrixD& prototypes) {
  if (prototypes.rows() == 0) fail(ErrorCode::EmptyBank, "memory bank view has no prototypes");
  if (z_v.cols() != prototypes.cols()) fail(ErrorCode::ShapeMismatch, "feature and prototype dims differ");
  const auto d = static_cast<std::size_t>(z_v.cols());
  ViewScore out;
  out.token_scores.resize(static_cast<std::size_t>(z_v.rows()));
  for (Eigen::Index j = 0; j < z_v.rows(); ++j) {
    const double* z = z_v.data() + j * z_v.cols();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < prototypes.rows(); ++k) {
      best = std::min(best, squared_distance(z, prototypes.data() + k * prototypes.cols(), d));
    }
    out.token_scores[static_cast<std::size_t>(j)] = std::sqrt(best);
  }
  out.image_score = out.token_scores.empty()
                        ? 0.0
                        : *std::max_element(out.token_scores.begin(), out.token_scores.end());
  return out;
}

double sample_score(std::span<const double> image_scores) {
  if (image_scores.empty()) fail(ErrorCode::InvalidArgument, "no view scores to aggregate");
  return *std::max_element(image_scores.begin(), image_scores.end());
}

std::vector<std::vector<double>> refine_scores_epipolar(const std::vector<std::vector<double>>& token_scores,
                                                        const EpipolarMaskSet& masks, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  const std::size_t views = token_scores.size();
  std::vector<std::vector<double>> out = token_scores;
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t j = 0; j < token_scores[a].size(); ++j) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t b = 0; b < views; ++b) {
        if (b == a) continue;
        const auto row = masks.at(a, b).row(j);
        for (std::size_t k = 0; k < row.size(); ++k) {
          if (row[k]) {
            sum += token_scores[b][k];
            ++n;
          }
        }
      }
      if (n > 0) out[a][j] = alpha * token_scores[a][j] + (1.0 - alpha) * (sum / static_cast<double>(n));
    }
  }
  return out;
}

BankStats bank_stats(const MemoryBank& bank) {
  BankStats s;
  for (std::size_t i = 0; i < bank.prototypes.size(); ++i) {
    const auto n = static_cast<std::size_t>(bank.prototypes[i].rows());
    s.prototype_counts.push_back(n);
    const std::size_t src = i < bank.source_counts.size() ? bank.source_counts[i] : 0;
    s.source_fractions.push_back(src ? static_cast<double>(n) / static_cast<double>(src) : 0.0);
    s.total += n;
  }
  return s;
}

// --------------------------------------------------------------------------- bank files

namespace {

std::string set_file(const MemoryBank& bank, std::size_t s) {
  return bank.layout == BankLayout::Shared ? "shared.mvft" : "view_" + std::to_string(s) + ".mvft";
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace

void write_bank(const MemoryBank& bank, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string());
  json index;
  index["layout"] = to_string(bank.layout);
  index["views"] = bank.views;
  index["coreset_ratio"] = bank.coreset_ratio;
  index["seed"] = bank.seed;
  index["source_counts"] = bank.source_counts;
  index["selected"] = bank.selected;
  json files = json::array();
  for (std::size_t s = 0; s < bank.prototypes.size(); ++s) {
    const MatrixD& p = bank.prototypes[s];
    FeatureTensor t(1, static_cast<std::size_t>(p.rows()), static_cast<std::size_t>(p.cols()));
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        t.at(0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(p(r, c));
      }
    }
    write_feature_tensor(t, dir / set_file(bank, s));
    files.push_back(set_file(bank, s));
  }
  index["files"] = files;
  write_text(dir / "bank.json", index.dump(2) + "\n");
}

MemoryBank read_bank(const fs::path& dir) {
  const json index = read_json(dir / "bank.json");
  MemoryBank bank;
  try {
    bank.layout = bank_layout_from_string(index.at("layout").get<std::string>());
    bank.views = index.at("views").get<std::size_t>();
    bank.coreset_ratio = index.at("coreset_ratio").get<double>();
    bank.seed = index.at("seed").get<std::uint64_t>();
    bank.source_counts = index.at("source_counts").get<std::vector<std::size_t>>();
    bank.selected = index.at("selected").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& f : index.at("files")) {
      const FeatureTensor t = read_feature_tensor(dir / f.get<std::string>());
      if (t.views() != 1) fail(ErrorCode::ShapeMismatch, "bank file must hold a single prototype set");
      bank.prototypes.push_back(t.cast<double>().view(0));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, "bank.json: " + std::string(e.what()));
  }
  const std::size_t expected = bank.layout == BankLayout::Shared ? 1 : bank.views;
  if (bank.prototypes.size() != expected) fail(ErrorCode::SchemaError, "bank.json lists the wrong number of files");
  for (const auto& p : bank.prototypes) {
    if (p.rows() == 0) fail(ErrorCode::EmptyBank, "bank file holds no prototypes");
  }
  return bank;
}

// --------------------------------------------------------------------------- scoring

std::vector<ScoreRecord> score_samples(std::span<const FeatureTensor64> test_fused,
                                       std::span<const std::string> sample_ids, const MemoryBank& bank,
                                       const EpipolarMaskSet* masks, const ScoringOptions& options,
                                       unsigned threads) {
  if (sample_ids.size() != test_fused.size()) {
    fail(ErrorCode::InvalidArgument, "one sample id per test tensor is required");
  }
  if (options.refine && masks == nullptr) fail(ErrorCode::InvalidArgument, "refinement needs masks");
  std::vector<ScoreRecord> out(test_fused.size());
  parallel_for(test_fused.size(), threads, [&](std::size_t i) {
    const FeatureTensor64& z = test_fused[i];
    ScoreRecord& r = out[i];
    r.sample_id = sample_ids[i];
    for (std::size_t v = 0; v < z.views(); ++v) {
      r.token_scores.push_back(score_view(z.view(v), bank.for_view(v)).token_scores);
    }
    if (options.refine) r.token_scores = refine_scores_epipolar(r.token_scores, *masks, options.alpha);
    for (const auto& s : r.token_scores) r.image_scores.push_back(*std::max_element(s.begin(), s.end()));
    r.sample_score = sample_score(r.image_scores);
  });
  return out;
}

void write_score_report(const ScoreReport& report, const fs::path& json_path) {
  json j;
  j["delta_patches"] = std::isinf(report.delta_patches) ? json("inf") : json(report.delta_patches);
  j["alpha"] = report.alpha;
  j["refine"] = report.refine;
  j["fusion"] = report.fusion;
  j["bank_layout"] = report.bank_layout;
  j["grid_w"] = report.grid_w;
  j["grid_h"] = report.grid_h;
  json recs = json::array();
  for (const auto& r : report.records) {
    recs.push_back({{"sample_id", r.sample_id},
                    {"sample_score", r.sample_score},
                    {"image_scores", r.image_scores},
                    {"token_scores", r.token_scores}});
  }
  j["records"] = recs;
  write_text(json_path, j.dump(1) + "\n");
}

ScoreReport read_score_report(const fs::path& json_path) {
  const json j = read_json(json_path);
  ScoreReport report;
  try {
    const json& d = j.at("delta_patches");
    report.delta_patches = d.is_string() ? std::numeric_limits<double>::infinity() : d.get<double>();
    report.alpha = j.at("alpha").get<double>();
    report.refine = j.at("refine").get<bool>();
    report.fusion = j.at("fusion").get<std::string>();
    report.bank_layout = j.at("bank_layout").get<std::string>();
    report.grid_w = j.at("grid_w").get<std::size_t>();
    report.grid_h = j.at("grid_h").get<std::size_t>();
    for (const auto& r : j.at("records")) {
      ScoreRecord rec;
      rec.sample_id = r.at("sample_id").get<std::string>();
      rec.sample_score = r.at("sample_score").get<double>();
      rec.image_scores = r.at("image_scores").get<std::vector<double>>();
      rec.token_scores = r.at("token_scores").get<std::vector<std::vector<double>>>();
      report.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, json_path.string() + ": " + e.what());
  }
  return report;
}

void write_score_summary_csv(const ScoreReport& report, const fs::path& csv_path) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "sample_id,sample_score";
  const std::size_t views = report.records.empty() ? 0 : report.records.front().image_scores.size();
  for (std::size_t v = 0; v < views; ++v) os << ",image_score_" << v;
  os << "\n";
  for (const auto& r : report.records) {
    os << r.sample_id << ',' << r.sample_score;
    for (const double s : r.image_scores) os << ',' << s;
    os << "\n";
  }
  write_text(csv_path, os.str());
}

void write_score_heatmaps(const ScoreReport& report, const ScoreRecord& record, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string());
  double top = 0.0;
  for (const auto& r : report.records) top = std::max(top, r.sample_score);
  for (std::size_t v = 0; v < record.token_scores.size(); ++v) {
    const auto& s = record.token_scores[v];
    if (s.size() != report.grid_w * report.grid_h) fail(ErrorCode::ShapeMismatch, "token count does not match grid");
    std::vector<std::uint8_t> px(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      px[i] = top > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(s[i] / top, 0.0, 1.0))) : 0;
    }
    write_pgm(dir / (record.sample_id + "_view" + std::to_string(v) + ".pgm"), report.grid_w, report.grid_h, px);
  }
}

}  // namespace epiview
