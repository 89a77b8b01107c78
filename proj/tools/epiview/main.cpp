// SPDX-License-Identifier: Apache-2.0

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "epiview/error.hpp"
#include "epiview/version.hpp"

namespace {

using namespace epiview;
using namespace epiview::cli;

constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionMismatch:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::InvalidTensor:
      return kExitIo;
    case ErrorCode::NumericFailure:
      return kExitNumeric;
    default:
      return kExitValidation;
  }
}

// Flags shared by every config-driven subcommand. Unset flags leave the file
// (or default) value in place.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> fusion;
  std::optional<std::string> pretraining;
  std::optional<std::string> delta;
  std::optional<int> epochs;
  std::optional<double> lambda;
  std::optional<double> learning_rate;
  std::optional<std::string> bank_layout;
  std::optional<std::string> bank_mode;
  std::optional<double> coreset_ratio;
  std::optional<bool> refine;
  std::optional<double> alpha;
  std::optional<std::string> summary;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for every random stream");
  cmd->add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--fusion", o.fusion, "none | unmasked | epipolar");
  cmd->add_option("--pretraining", o.pretraining,
                  "random-init | copy-proxy | single-center | multi-center | multi-center+reg");
  cmd->add_option("--delta", o.delta, "Mask threshold in patches, or inf");
  cmd->add_option("--epochs", o.epochs, "Pretraining epochs");
  cmd->add_option("--lambda", o.lambda, "Weight of the negative term");
  cmd->add_option("--lr", o.learning_rate, "AdamW learning rate");
  cmd->add_option("--bank-layout", o.bank_layout, "per-view | shared");
  cmd->add_option("--bank-mode", o.bank_mode, "single-class | multi-class");
  cmd->add_option("--coreset-ratio", o.coreset_ratio, "Fraction of tokens kept per prototype set");
  cmd->add_option("--refine", o.refine, "Epipolar-refined scoring (true/false)");
  cmd->add_option("--alpha", o.alpha, "Weight of a token's own score under refinement");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config ? load_run_config(*o.config) : RunConfig{};
  nlohmann::json j = nlohmann::json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.threads) j["threads"] = *o.threads;
  if (o.fusion) j["fusion"] = *o.fusion;
  if (o.pretraining) j["pretraining"] = *o.pretraining;
  if (o.delta) j["train"]["delta_patches"] = *o.delta == "inf" ? nlohmann::json("inf") : nlohmann::json(parse_delta(*o.delta));
  if (o.epochs) j["train"]["epochs"] = *o.epochs;
  if (o.lambda) j["train"]["lambda"] = *o.lambda;
  if (o.learning_rate) j["train"]["learning_rate"] = *o.learning_rate;
  if (o.bank_layout) j["bank"]["layout"] = *o.bank_layout;
  if (o.bank_mode) j["bank"]["mode"] = *o.bank_mode;
  if (o.coreset_ratio) j["bank"]["coreset_ratio"] = *o.coreset_ratio;
  if (o.refine) j["score"]["refine"] = *o.refine;
  if (o.alpha) j["score"]["alpha"] = *o.alpha;
  cfg = merge_run_config(std::move(cfg), j, "command line");
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

SummaryTarget summary_of(const Overrides& o) {
  SummaryTarget t;
  if (o.summary) t.path = *o.summary;
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epipolar-guided multi-view anomaly detection"};
  app.set_version_flag("--version", std::string(epiview::kVersion));
  app.require_subcommand(1);

  // synth
  Overrides synth_o;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
  add_common(synth, synth_o);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--summary", synth_o.summary, "Write a run-summary JSON here");

  // estimate-f
  std::string ef_in, ef_out;
  std::optional<std::string> ef_rig;
  auto* estimate = app.add_subcommand("estimate-f", "Eight-point fundamental matrix from correspondences");
  estimate->add_option("--correspondences", ef_in, "JSON with src_view, dst_view, pairs")->required();
  estimate->add_option("--out", ef_out, "Output JSON")->required();
  estimate->add_option("--rig", ef_rig, "Compare against this rig's F");

  // mask
  Overrides mask_o;
  MaskArgs mask_args;
  std::string mask_rig, mask_out;
  std::optional<std::string> mask_manifest;
  auto* mask = app.add_subcommand("mask", "Export an epipolar mask as PGM");
  add_common(mask, mask_o);
  mask->add_option("--rig", mask_rig, "Rig JSON")->required();
  mask->add_option("--manifest", mask_manifest, "Take the patch grid from this manifest");
  mask->add_option("--pair", mask_args.pair, "Ordered view pair 'a,b' (ids or indices)")->required();
  mask->add_option("--out", mask_out, "Output PGM")->required();

  // stages that read a dataset
  auto dataset_options = [](CLI::App* cmd, std::string& manifest, std::optional<std::string>& rig) {
    cmd->add_option("--manifest", manifest, "Dataset manifest")->required();
    cmd->add_option("--rig", rig, "Rig JSON (defaults to the manifest's)");
  };

  Overrides pre_o;
  std::string pre_manifest, pre_out;
  std::optional<std::string> pre_rig, pre_trace;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the epipolar attention projections");
  add_common(pretrain, pre_o);
  dataset_options(pretrain, pre_manifest, pre_rig);
  pretrain->add_option("--out", pre_out, "Output weight file (.mvft)")->required();
  pretrain->add_option("--trace", pre_trace, "Loss trace CSV (default: <out>.trace.csv)");
  pretrain->add_option("--summary", pre_o.summary, "Write a run-summary JSON here");

  Overrides bank_o;
  std::string bank_manifest, bank_out;
  std::optional<std::string> bank_rig, bank_weights;
  auto* bank = app.add_subcommand("build-bank", "Build the prototype memory bank");
  add_common(bank, bank_o);
  dataset_options(bank, bank_manifest, bank_rig);
  bank->add_option("--weights", bank_weights, "Pretrained weights (not needed for fusion none)");
  bank->add_option("--out", bank_out, "Output bank directory")->required();
  bank->add_option("--summary", bank_o.summary, "Write a run-summary JSON here");

  Overrides score_o;
  std::string score_manifest, score_bank, score_out;
  std::optional<std::string> score_rig, score_weights, score_csv, score_heatmaps;
  auto* score = app.add_subcommand("score", "Score the test split against a bank");
  add_common(score, score_o);
  dataset_options(score, score_manifest, score_rig);
  score->add_option("--weights", score_weights, "Pretrained weights (not needed for fusion none)");
  score->add_option("--bank", score_bank, "Bank directory")->required();
  score->add_option("--out", score_out, "Output score report JSON")->required();
  score->add_option("--csv", score_csv, "Per-sample CSV (default: <out>.csv)");
  score->add_option("--heatmaps", score_heatmaps, "Directory for per-view PGM heatmaps");
  score->add_option("--summary", score_o.summary, "Write a run-summary JSON here");

  EvalArgs eval_args;
  std::string eval_manifest, eval_scores, eval_out;
  std::optional<std::string> eval_json;
  auto* eval = app.add_subcommand("eval", "AUROC and AP at every level");
  eval->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  eval->add_option("--scores", eval_scores, "Score report JSON")->required();
  eval->add_option("--out", eval_out, "Metrics CSV")->required();
  eval->add_option("--json", eval_json, "Also write metrics JSON");

  Overrides ablate_o;
  std::optional<std::string> ablate_manifest, ablate_rig;
  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Run the fusion ablation over several seeds");
  add_common(ablate, ablate_o);
  ablate->add_option("--manifest", ablate_manifest, "Fixed dataset (default: synthesize one per seed)");
  ablate->add_option("--rig", ablate_rig, "Rig JSON for --manifest");
  ablate->add_option("--out", ablate_out, "Output directory")->required();

  Overrides pipe_o;
  std::string pipe_manifest, pipe_out;
  std::optional<std::string> pipe_rig;
  bool pipe_heatmaps = false;
  auto* pipeline = app.add_subcommand("pipeline", "Pretrain, build the bank, score and evaluate");
  add_common(pipeline, pipe_o);
  dataset_options(pipeline, pipe_manifest, pipe_rig);
  pipeline->add_option("--out", pipe_out, "Output directory")->required();
  pipeline->add_flag("--heatmaps", pipe_heatmaps, "Also write per-view PGM heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  auto opt_path = [](const std::optional<std::string>& s) -> std::optional<fs::path> {
    if (s) return fs::path(*s);
    return std::nullopt;
  };

  try {
    if (synth->parsed()) {
      cmd_synth(resolve(synth_o), synth_out, summary_of(synth_o));
    } else if (estimate->parsed()) {
      cmd_estimate_f(ef_in, ef_out, opt_path(ef_rig));
    } else if (mask->parsed()) {
      mask_args.rig = mask_rig;
      mask_args.manifest = opt_path(mask_manifest);
      mask_args.out = mask_out;
      cmd_mask(resolve(mask_o), mask_args);
    } else if (pretrain->parsed()) {
      cmd_pretrain(resolve(pre_o), {{pre_manifest, opt_path(pre_rig)}, pre_out, opt_path(pre_trace)},
                   summary_of(pre_o));
    } else if (bank->parsed()) {
      cmd_build_bank(resolve(bank_o), {{bank_manifest, opt_path(bank_rig)}, opt_path(bank_weights), bank_out},
                     summary_of(bank_o));
    } else if (score->parsed()) {
      cmd_score(resolve(score_o),
                {{score_manifest, opt_path(score_rig)}, opt_path(score_weights), score_bank, score_out,
                 opt_path(score_csv), opt_path(score_heatmaps)},
                summary_of(score_o));
    } else if (eval->parsed()) {
      eval_args.manifest = eval_manifest;
      eval_args.scores = eval_scores;
      eval_args.out = eval_out;
      eval_args.json = opt_path(eval_json);
      cmd_eval(eval_args);
    } else if (ablate->parsed()) {
      AblateArgs args;
      if (ablate_manifest) args.data = DatasetArgs{*ablate_manifest, opt_path(ablate_rig)};
      args.out = ablate_out;
      cmd_ablate(resolve(ablate_o), args);
    } else if (pipeline->parsed()) {
      cmd_pipeline(resolve(pipe_o), {{pipe_manifest, opt_path(pipe_rig)}, pipe_out, pipe_heatmaps});
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
