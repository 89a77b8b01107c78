// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <vector>

#include "epiview/error.hpp"
#include "epiview/features.hpp"
#include "epiview/geometry.hpp"
#include "epiview/pgm.hpp"
#include "epiview/version.hpp"

namespace epiview::cli {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

// Artifact paths relative to the summary's directory, with a trailing '/'
// on directories, so that the same run written elsewhere records the same
// summary.
json relative_artifacts(const fs::path& summary, const std::vector<fs::path>& artifacts) {
  const fs::path base = fs::absolute(summary).parent_path().lexically_normal();
  json out = json::array();
  for (const auto& a : artifacts) {
    fs::path p = fs::absolute(a).lexically_normal();
    if (!p.has_filename()) p = p.parent_path();
    std::string rel = p.lexically_relative(base).generic_string();
    if (fs::is_directory(p)) rel += "/";
    out.push_back(rel);
  }
  return out;
}

// Run summary: the timestamp is the only field that changes between reruns.
void write_summary(const fs::path& path, const std::string& command, const RunConfig& cfg,
                   const std::vector<fs::path>& artifacts, const json& results) {
  json j;
  j["command"] = command;
  j["versions"] = {{"epiview", std::string(kVersion)}, {"mvft", kMvftVersion}};
  j["config_hash"] = config_hash(cfg);
  j["config"] = to_json(cfg);
  j["artifacts"] = relative_artifacts(path, artifacts);
  j["results"] = results;
  j["timestamp"] = utc_timestamp();
  write_text(path, j.dump(2) + "\n");
}

void maybe_summary(const SummaryTarget& target, const std::string& command, const RunConfig& cfg,
                   const std::vector<fs::path>& artifacts, const json& results) {
  if (target.path) write_summary(*target.path, command, cfg, artifacts, results);
}

PipelineData load_data(const DatasetArgs& args, const RunConfig& cfg) {
  return load_pipeline_data(args.manifest, args.rig, cfg.threads);
}

std::string trace_csv(const std::vector<EpochTrace>& trace) {
  std::ostringstream os;
  os << std::setprecision(17) << "epoch,pos_loss,neg_loss,total,collapse_indicator\n";
  for (const auto& t : trace) {
    os << t.epoch << ',' << t.positive << ',' << t.negative << ',' << t.total << ',' << t.collapse << "\n";
  }
  return os.str();
}

void write_weights(const ProjectionWeights& w, const fs::path& path) {
  if (path.has_parent_path()) make_dir(path.parent_path());
  write_feature_tensor(w.to_tensor(), path);
}

ProjectionWeights read_weights(const fs::path& path) {
  return ProjectionWeights::from_tensor(read_feature_tensor(path));
}

std::optional<ProjectionWeights> weights_for(const RunConfig& cfg, const std::optional<fs::path>& path) {
  if (cfg.fusion == Fusion::None) return std::nullopt;
  if (!path) fail(ErrorCode::InvalidArgument, "--weights is required unless fusion is none");
  return read_weights(*path);
}

ScoreReport report_header(const RunConfig& cfg, const PatchGrid& grid) {
  ScoreReport r;
  r.delta_patches = cfg.fusion == Fusion::Unmasked ? std::numeric_limits<double>::infinity()
                                                   : cfg.train.delta_patches;
  r.alpha = cfg.scoring.alpha;
  r.refine = cfg.scoring.refine;
  r.fusion = to_string(cfg.fusion);
  r.bank_layout = to_string(cfg.bank_layout);
  r.grid_w = static_cast<std::size_t>(grid.grid_w());
  r.grid_h = static_cast<std::size_t>(grid.grid_h());
  return r;
}

json metrics_json(const std::vector<MetricRow>& rows) {
  json j = json::object();
  for (const auto& r : rows) j[r.level + "_" + r.metric] = r.value;
  return j;
}

void print_metrics(const std::vector<MetricRow>& rows) {
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(8) << r.level << std::setw(7) << r.metric << std::fixed
              << std::setprecision(4) << r.value << "  (pos " << r.n_pos << ", neg " << r.n_neg << ")\n";
  }
  std::cout.unsetf(std::ios::fixed);
}

void write_heatmaps(const ScoreReport& report, const fs::path& dir) {
  for (const auto& rec : report.records) write_score_heatmaps(report, rec, dir);
}

std::pair<std::size_t, std::size_t> parse_pair(const CameraRig& rig, const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) fail(ErrorCode::InvalidArgument, "--pair expects 'a,b', got '" + text + "'");
  const std::size_t a = rig.view_index(text.substr(0, comma));
  const std::size_t b = rig.view_index(text.substr(comma + 1));
  if (a == b) fail(ErrorCode::InvalidArgument, "--pair needs two different views");
  return {a, b};
}

}  // namespace

// --------------------------------------------------------------------------- synth

void cmd_synth(const RunConfig& cfg, const fs::path& out_dir, const SummaryTarget& summary) {
  const DatasetManifest m = synth_dataset(cfg.scene, cfg.n_train, cfg.n_test, out_dir, cfg.threads);
  std::size_t anomalous = 0;
  for (const auto& s : m.samples) anomalous += s.label == Label::Anomalous ? 1 : 0;
  std::cout << "wrote " << m.samples.size() << " samples (" << cfg.n_train << " train, " << cfg.n_test
            << " test, " << anomalous << " anomalous) to " << out_dir.string() << "\n";
  maybe_summary(summary, "synth", cfg, {out_dir / "manifest.json", out_dir / "rig.json", out_dir / "features"},
                {{"samples", m.samples.size()}, {"anomalous", anomalous}});
}

// --------------------------------------------------------------------------- estimate-f

void cmd_estimate_f(const fs::path& correspondences, const fs::path& out, const std::optional<fs::path>& rig_path) {
  std::ifstream is(correspondences);
  if (!is) fail(ErrorCode::IoError, "cannot open " + correspondences.string());
  json j;
  std::vector<Correspondence> pairs;
  int src = 0, dst = 1;
  try {
    j = json::parse(is);
    src = j.value("src_view", 0);
    dst = j.value("dst_view", 1);
    for (const auto& p : j.at("pairs")) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 4) fail(ErrorCode::SchemaError, "each pair must be [u_src, v_src, u_dst, v_dst]");
      pairs.push_back({PixelPoint{v[0], v[1]}, PixelPoint{v[2], v[3]}});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, correspondences.string() + ": " + e.what());
  }
  const FundamentalMatrix f = estimate_fundamental_8pt(pairs, src, dst);
  json o;
  o["src_view"] = src;
  o["dst_view"] = dst;
  o["correspondences"] = pairs.size();
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({f.m(r, 0), f.m(r, 1), f.m(r, 2)});
  o["f"] = rows;
  std::cout << "estimated F(" << src << ", " << dst << ") from " << pairs.size() << " correspondences\n";
  if (rig_path) {
    const CameraRig rig = read_rig(*rig_path);
    const double sine = fundamental_angle_sine(
        f.m, rig.f(static_cast<std::size_t>(src), static_cast<std::size_t>(dst)).m);
    o["angle_sine_to_rig"] = sine;
    std::cout << "sine of the angle to the rig's F: " << std::setprecision(3) << sine << "\n";
  }
  write_text(out, o.dump(2) + "\n");
}

// --------------------------------------------------------------------------- mask

void cmd_mask(const RunConfig& cfg, const MaskArgs& args) {
  const CameraRig rig = read_rig(args.rig);
  const PatchGrid grid = args.manifest ? load_manifest(*args.manifest).grid : cfg.scene.grid;
  const auto [a, b] = parse_pair(rig, args.pair);
  const double delta = cfg.fusion == Fusion::Unmasked ? std::numeric_limits<double>::infinity()
                                                      : cfg.train.delta_patches;
  const BinaryMatrix m = build_epipolar_mask(grid, rig.f(a, b), delta, cfg.threads);
  const std::vector<std::uint8_t> pgm = mask_to_pgm(m);
  write_text(args.out, std::string(pgm.begin(), pgm.end()));
  std::cout << "mask (" << a << ", " << b << ") at delta " << delta_to_string(delta) << ": " << m.count() << " of "
            << m.rows() * m.cols() << " entries set\n";
}

// --------------------------------------------------------------------------- pretrain

void cmd_pretrain(const RunConfig& cfg, const PretrainArgs& args, const SummaryTarget& summary) {
  if (cfg.fusion == Fusion::None) fail(ErrorCode::InvalidArgument, "fusion none has no weights to pretrain");
  const PipelineData data = load_data(args.data, cfg);
  const TrainResult r = pretrain_arm(data, cfg.pipeline_options(), [](const EpochTrace& t) {
    std::cout << "epoch " << t.epoch << "  pos " << std::setprecision(5) << t.positive << "  neg " << t.negative
              << "  total " << t.total << "  collapse " << t.collapse << "\n";
  });
  write_weights(r.weights, args.out);
  const fs::path trace = args.trace ? *args.trace : fs::path(args.out).replace_extension(".trace.csv");
  write_text(trace, trace_csv(r.trace));
  json results = json::object();
  if (!r.trace.empty()) {
    results["first_collapse"] = r.trace.front().collapse;
    results["last_collapse"] = r.trace.back().collapse;
    results["last_total"] = r.trace.back().total;
  }
  maybe_summary(summary, "pretrain", cfg, {args.out, trace}, results);
}

// --------------------------------------------------------------------------- build-bank

void cmd_build_bank(const RunConfig& cfg, const BankArgs& args, const SummaryTarget& summary) {
  const PipelineData data = load_data(args.data, cfg);
  const PipelineOptions options = cfg.pipeline_options();
  const auto weights = weights_for(cfg, args.weights);
  const EpipolarMaskSet masks = fusion_masks(data, options);
  const auto features = pipeline_features(data.train, masks, weights, options);
  const MemoryBank bank = build_bank(features, options.coreset_ratio, cfg.seed, cfg.bank_layout, cfg.threads);
  write_bank(bank, args.out);
  const BankStats stats = bank_stats(bank);
  json sets = json::array();
  for (std::size_t s = 0; s < stats.prototype_counts.size(); ++s) {
    std::cout << (bank.layout == BankLayout::Shared ? std::string("shared") : "view " + std::to_string(s)) << ": "
              << stats.prototype_counts[s] << " prototypes from " << bank.source_counts[s] << " tokens ("
              << std::setprecision(4) << 100.0 * stats.source_fractions[s] << "%)\n";
    sets.push_back({{"prototypes", stats.prototype_counts[s]}, {"source_tokens", bank.source_counts[s]}});
  }
  maybe_summary(summary, "build-bank", cfg, {args.out},
                {{"sets", sets}, {"total_prototypes", stats.total}});
}

// --------------------------------------------------------------------------- score

void cmd_score(const RunConfig& cfg, const ScoreArgs& args, const SummaryTarget& summary) {
  const PipelineData data = load_data(args.data, cfg);
  const PipelineOptions options = cfg.pipeline_options();
  const auto weights = weights_for(cfg, args.weights);
  const MemoryBank bank = read_bank(args.bank);
  if (bank.views != data.manifest.views) fail(ErrorCode::ShapeMismatch, "bank and manifest disagree on views");
  const EpipolarMaskSet masks = fusion_masks(data, options);
  const auto features = pipeline_features(data.test, masks, weights, options);
  std::optional<EpipolarMaskSet> refine_masks;
  if (cfg.scoring.refine) {
    refine_masks = build_mask_set(data.rig, data.manifest.grid, cfg.train.delta_patches, cfg.threads);
  }
  ScoreReport report = report_header(cfg, data.manifest.grid);
  report.records = score_samples(features, data.test_ids, bank, refine_masks ? &*refine_masks : nullptr,
                                 cfg.scoring, cfg.threads);
  write_score_report(report, args.out);
  const fs::path csv = args.csv ? *args.csv : fs::path(args.out).replace_extension(".csv");
  write_score_summary_csv(report, csv);
  std::vector<fs::path> artifacts{args.out, csv};
  if (args.heatmaps) {
    write_heatmaps(report, *args.heatmaps);
    artifacts.push_back(*args.heatmaps);
  }
  std::cout << "scored " << report.records.size() << " test samples\n";
  maybe_summary(summary, "score", cfg, artifacts, {{"samples", report.records.size()}});
}

// --------------------------------------------------------------------------- eval

void cmd_eval(const EvalArgs& args) {
  const DatasetManifest manifest = load_manifest(args.manifest);
  const ScoreReport report = read_score_report(args.scores);
  const auto rows = evaluate(manifest, report);
  write_metrics_csv(rows, args.out);
  if (args.json) write_metrics_json(rows, *args.json);
  print_metrics(rows);
}

// --------------------------------------------------------------------------- ablate

void cmd_ablate(const RunConfig& cfg, const AblateArgs& args) {
  make_dir(args.out);
  std::optional<PipelineData> fixed;
  if (args.data) fixed = load_data(*args.data, cfg);
  const DataForSeed data_for_seed = [&](std::uint64_t seed) {
    if (fixed) return *fixed;
    SceneConfig scene = cfg.scene;
    scene.seed = seed;
    return to_pipeline_data(generate_dataset(scene, cfg.n_train, cfg.n_test, cfg.threads));
  };
  const auto specs = standard_ablation_specs();
  const AblationTable table =
      run_ablation(data_for_seed, specs, cfg.ablation_seeds, cfg.pipeline_options(), [](const AblationRow& r) {
        std::cout << std::left << std::setw(40) << describe(r.spec) << " seed " << r.seed << "  image "
                  << std::fixed << std::setprecision(4) << r.image_auroc << "  sample " << r.sample_auroc << "\n"
                  << std::flush;
        std::cout.unsetf(std::ios::fixed);
      });
  write_text(args.out / "ablation.csv", ablation_csv(table));
  json medians = json::array();
  std::cout << "median over " << cfg.ablation_seeds.size() << " seeds\n";
  for (const auto& s : table.summary) {
    std::cout << "  " << std::left << std::setw(40) << describe(s.spec) << " image " << std::fixed
              << std::setprecision(4) << s.median_image_auroc << "  sample " << s.median_sample_auroc << "\n";
    std::cout.unsetf(std::ios::fixed);
    medians.push_back({{"arm", describe(s.spec)},
                       {"median_image_auroc", s.median_image_auroc},
                       {"median_sample_auroc", s.median_sample_auroc}});
  }
  write_summary(args.out / "summary.json", "ablate", cfg, {args.out / "ablation.csv"}, {{"medians", medians}});
}

// --------------------------------------------------------------------------- pipeline

void cmd_pipeline(const RunConfig& cfg, const PipelineArgs& args) {
  make_dir(args.out);
  const PipelineData data = load_data(args.data, cfg);
  const PipelineOptions options = cfg.pipeline_options();
  std::optional<ProjectionWeights> weights;
  std::vector<fs::path> artifacts;
  if (cfg.fusion != Fusion::None) {
    const TrainResult trained = pretrain_arm(data, options, [](const EpochTrace& t) {
      std::cout << "epoch " << t.epoch << "  total " << std::setprecision(5) << t.total << "  collapse "
                << t.collapse << "\n"
                << std::flush;
    });
    weights = trained.weights;
    write_weights(trained.weights, args.out / "weights.mvft");
    write_text(args.out / "trace.csv", trace_csv(trained.trace));
    artifacts.push_back(args.out / "weights.mvft");
    artifacts.push_back(args.out / "trace.csv");
  }
  const PipelineResult result = run_pipeline(data, options, weights);
  write_bank(result.bank, args.out / "bank");
  write_score_report(result.report, args.out / "scores.json");
  write_score_summary_csv(result.report, args.out / "scores.csv");
  write_metrics_csv(result.metrics, args.out / "metrics.csv");
  write_metrics_json(result.metrics, args.out / "metrics.json");
  for (const char* a : {"bank", "scores.json", "scores.csv", "metrics.csv", "metrics.json"}) {
    artifacts.push_back(args.out / a);
  }
  if (args.heatmaps) {
    write_heatmaps(result.report, args.out / "heatmaps");
    artifacts.push_back(args.out / "heatmaps");
  }
  print_metrics(result.metrics);
  write_summary(args.out / "summary.json", "pipeline", cfg, artifacts, metrics_json(result.metrics));
}

}  // namespace epiview::cli
