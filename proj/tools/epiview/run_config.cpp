// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "epiview/error.hpp"

namespace epiview::cli {

using nlohmann::json;

namespace {

[[noreturn]] void schema(const std::string& where, const std::string& what) {
  fail(ErrorCode::SchemaError, where + ": " + what);
}

template <typename T>
T as(const json& v, const std::string& where) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    schema(where, "wrong type (" + std::string(v.type_name()) + ")");
  }
}

std::size_t as_count(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) schema(where, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) schema(where, "expected a number");
  return v.get<double>();
}

double as_delta(const json& v, const std::string& where) {
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    schema(where, "expected a number or \"inf\"");
  }
  return as_number(v, where);
}

using Setter = std::function<void(const json&, const std::string&)>;

// Applies every key of `obj` through the table, rejecting unknown keys.
void apply_object(const json& obj, const std::string& where, const std::map<std::string, Setter>& table) {
  if (!obj.is_object()) schema(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = table.find(key);
    if (it == table.end()) schema(where, "unknown key '" + key + "'");
    it->second(value, where + "." + key);
  }
}

std::string bank_mode_string(BankMode m) { return m == BankMode::SingleClass ? "single-class" : "multi-class"; }

BankMode bank_mode_from(const std::string& s, const std::string& where) {
  if (s == "single-class") return BankMode::SingleClass;
  if (s == "multi-class") return BankMode::MultiClass;
  schema(where, "expected \"single-class\" or \"multi-class\"");
}

template <typename E>
E parse_enum(const json& v, const std::string& where, E (*from)(const std::string&)) {
  try {
    return from(as<std::string>(v, where));
  } catch (const Error& e) {
    const std::string what = e.what();
    const auto colon = what.find(": ");
    schema(where, colon == std::string::npos ? what : what.substr(colon + 2));
  }
}

Fusion fusion_from(const std::string& s) { return fusion_from_string(s); }
Pretraining pretraining_from(const std::string& s) { return pretraining_from_string(s); }
BankLayout layout_from(const std::string& s) { return bank_layout_from_string(s); }

CenterRefresh refresh_from(const std::string& s) {
  if (s == "per-epoch") return CenterRefresh::PerEpoch;
  if (s == "fixed") return CenterRefresh::Fixed;
  fail(ErrorCode::InvalidArgument, "expected \"per-epoch\" or \"fixed\"");
}

MaskFill fill_from(const std::string& s) {
  if (s == "zeros") return MaskFill::Zeros;
  if (s == "mean") return MaskFill::Mean;
  fail(ErrorCode::InvalidArgument, "expected \"zeros\" or \"mean\"");
}

Aggregation aggregation_from(const std::string& s) {
  if (s == "sum") return Aggregation::Sum;
  if (s == "mean") return Aggregation::Mean;
  fail(ErrorCode::InvalidArgument, "expected \"sum\" or \"mean\"");
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

double RunConfig::effective_coreset_ratio() const {
  if (coreset_ratio) return *coreset_ratio;
  return bank_mode == BankMode::SingleClass ? kSingleClassCoresetRatio : kMultiClassCoresetRatio;
}

void RunConfig::propagate_seed() {
  scene.seed = seed;
  train.seed = seed;
}

PipelineOptions RunConfig::pipeline_options() const {
  PipelineOptions o;
  o.fusion = fusion;
  o.pretraining = pretraining;
  o.bank = bank_layout;
  o.train = train;
  o.train.seed = seed;
  o.coreset_ratio = effective_coreset_ratio();
  o.scoring = scoring;
  o.threads = threads;
  return o;
}

void RunConfig::validate() const {
  SceneConfig s = scene;
  s.validate();
  train.validate();
  if (threads == 0) fail(ErrorCode::InvalidArgument, "threads must be positive");
  if (n_train == 0) fail(ErrorCode::InvalidArgument, "n_train must be positive");
  if (coreset_ratio) coreset_size(*coreset_ratio, 1);
  if (!(scoring.alpha >= 0.0 && scoring.alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  if (ablation_seeds.empty()) fail(ErrorCode::InvalidArgument, "ablation needs at least one seed");
}

RunConfig merge_run_config(RunConfig cfg, const json& j, const std::string& source) {
  SceneConfig& sc = cfg.scene;
  TrainConfig& tr = cfg.train;
  int width = sc.grid.image_width, height = sc.grid.image_height, patch = sc.grid.patch_size;
  const std::map<std::string, Setter> scene_keys{
      {"views", [&](const json& v, const std::string& w) { sc.views = as_count(v, w); }},
      {"image_width", [&](const json& v, const std::string& w) { width = static_cast<int>(as_count(v, w)); }},
      {"image_height", [&](const json& v, const std::string& w) { height = static_cast<int>(as_count(v, w)); }},
      {"patch_size", [&](const json& v, const std::string& w) { patch = static_cast<int>(as_count(v, w)); }},
      {"feature_dims", [&](const json& v, const std::string& w) { sc.feature_dims = as_count(v, w); }},
      {"surface_points", [&](const json& v, const std::string& w) { sc.surface_points = as_count(v, w); }},
      {"anomaly_rate", [&](const json& v, const std::string& w) { sc.anomaly_rate = as_number(v, w); }},
      {"anomaly_radius", [&](const json& v, const std::string& w) { sc.anomaly_radius = as_number(v, w); }},
      {"noise_sigma", [&](const json& v, const std::string& w) { sc.noise_sigma = as_number(v, w); }},
      {"camera_baseline", [&](const json& v, const std::string& w) { sc.camera_baseline = as_number(v, w); }},
      {"camera_distance", [&](const json& v, const std::string& w) { sc.camera_distance = as_number(v, w); }},
      {"camera_elevation", [&](const json& v, const std::string& w) { sc.camera_elevation = as_number(v, w); }},
      {"focal_length", [&](const json& v, const std::string& w) { sc.focal_length = as_number(v, w); }},
      {"appearance_modes", [&](const json& v, const std::string& w) { sc.appearance_modes = as_count(v, w); }},
      {"appearance_bandwidth", [&](const json& v, const std::string& w) { sc.appearance_bandwidth = as_number(v, w); }},
      {"anomaly_strength", [&](const json& v, const std::string& w) { sc.anomaly_strength = as_number(v, w); }},
      {"nuisance_sigma", [&](const json& v, const std::string& w) { sc.nuisance_sigma = as_number(v, w); }},
      {"nuisance_rank", [&](const json& v, const std::string& w) { sc.nuisance_rank = as_count(v, w); }},
      {"n_train", [&](const json& v, const std::string& w) { cfg.n_train = as_count(v, w); }},
      {"n_test", [&](const json& v, const std::string& w) { cfg.n_test = as_count(v, w); }},
  };
  const std::map<std::string, Setter> train_keys{
      {"learning_rate", [&](const json& v, const std::string& w) { tr.learning_rate = as_number(v, w); }},
      {"weight_decay", [&](const json& v, const std::string& w) { tr.weight_decay = as_number(v, w); }},
      {"epochs", [&](const json& v, const std::string& w) { tr.epochs = static_cast<int>(as_count(v, w)); }},
      {"lambda", [&](const json& v, const std::string& w) { tr.lambda = as_number(v, w); }},
      {"n_k", [&](const json& v, const std::string& w) { tr.n_k = as_count(v, w); }},
      {"k_centers", [&](const json& v, const std::string& w) { tr.k_centers = as_count(v, w); }},
      {"delta_patches", [&](const json& v, const std::string& w) { tr.delta_patches = as_delta(v, w); }},
      {"batch_samples", [&](const json& v, const std::string& w) { tr.batch_samples = as_count(v, w); }},
      {"center_refresh", [&](const json& v, const std::string& w) { tr.center_refresh = parse_enum(v, w, refresh_from); }},
      {"mask_fill", [&](const json& v, const std::string& w) { tr.mask_fill = parse_enum(v, w, fill_from); }},
      {"aggregation", [&](const json& v, const std::string& w) { tr.aggregation = parse_enum(v, w, aggregation_from); }},
      {"beta1", [&](const json& v, const std::string& w) { tr.beta1 = as_number(v, w); }},
      {"beta2", [&](const json& v, const std::string& w) { tr.beta2 = as_number(v, w); }},
      {"epsilon", [&](const json& v, const std::string& w) { tr.epsilon = as_number(v, w); }},
      {"init_scale", [&](const json& v, const std::string& w) { tr.init_scale = as_number(v, w); }},
      {"collapse_samples", [&](const json& v, const std::string& w) { tr.collapse_samples = as_count(v, w); }},
      {"refresh_iterations", [&](const json& v, const std::string& w) { tr.refresh_iterations = static_cast<int>(as_count(v, w)); }},
  };
  const std::map<std::string, Setter> bank_keys{
      {"layout", [&](const json& v, const std::string& w) { cfg.bank_layout = parse_enum(v, w, layout_from); }},
      {"mode", [&](const json& v, const std::string& w) { cfg.bank_mode = bank_mode_from(as<std::string>(v, w), w); }},
      {"coreset_ratio", [&](const json& v, const std::string& w) { cfg.coreset_ratio = as_number(v, w); }},
  };
  const std::map<std::string, Setter> score_keys{
      {"refine", [&](const json& v, const std::string& w) { cfg.scoring.refine = as<bool>(v, w); }},
      {"alpha", [&](const json& v, const std::string& w) { cfg.scoring.alpha = as_number(v, w); }},
  };
  const std::map<std::string, Setter> ablation_keys{
      {"seeds", [&](const json& v, const std::string& w) {
         if (!v.is_array()) schema(w, "expected an array of seeds");
         cfg.ablation_seeds.clear();
         for (const auto& s : v) cfg.ablation_seeds.push_back(as_count(s, w));
       }},
  };
  const std::map<std::string, Setter> top{
      {"seed", [&](const json& v, const std::string& w) { cfg.seed = as_count(v, w); }},
      {"threads", [&](const json& v, const std::string& w) { cfg.threads = static_cast<unsigned>(as_count(v, w)); }},
      {"fusion", [&](const json& v, const std::string& w) { cfg.fusion = parse_enum(v, w, fusion_from); }},
      {"pretraining", [&](const json& v, const std::string& w) { cfg.pretraining = parse_enum(v, w, pretraining_from); }},
      {"scene", [&](const json& v, const std::string& w) { apply_object(v, w, scene_keys); }},
      {"train", [&](const json& v, const std::string& w) { apply_object(v, w, train_keys); }},
      {"bank", [&](const json& v, const std::string& w) { apply_object(v, w, bank_keys); }},
      {"score", [&](const json& v, const std::string& w) { apply_object(v, w, score_keys); }},
      {"ablation", [&](const json& v, const std::string& w) { apply_object(v, w, ablation_keys); }},
  };
  apply_object(j, source, top);
  try {
    sc.grid = PatchGrid::make(width, height, patch);
  } catch (const Error& e) {
    schema(source + ".scene", e.what());
  }
  cfg.propagate_seed();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte);
    fail(ErrorCode::SchemaError, path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                     ": malformed JSON");
  }
  return merge_run_config(RunConfig{}, j, path.filename().string());
}

json to_json(const RunConfig& cfg) {
  const SceneConfig& sc = cfg.scene;
  const TrainConfig& tr = cfg.train;
  const auto delta = [](double d) { return std::isinf(d) ? json("inf") : json(d); };
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["fusion"] = to_string(cfg.fusion);
  j["pretraining"] = to_string(cfg.pretraining);
  j["scene"] = {{"views", sc.views},
                {"image_width", sc.grid.image_width},
                {"image_height", sc.grid.image_height},
                {"patch_size", sc.grid.patch_size},
                {"feature_dims", sc.feature_dims},
                {"surface_points", sc.surface_points},
                {"anomaly_rate", sc.anomaly_rate},
                {"anomaly_radius", sc.anomaly_radius},
                {"noise_sigma", sc.noise_sigma},
                {"camera_baseline", sc.camera_baseline},
                {"camera_distance", sc.camera_distance},
                {"camera_elevation", sc.camera_elevation},
                {"focal_length", sc.focal_length},
                {"appearance_modes", sc.appearance_modes},
                {"appearance_bandwidth", sc.appearance_bandwidth},
                {"anomaly_strength", sc.anomaly_strength},
                {"nuisance_sigma", sc.nuisance_sigma},
                {"nuisance_rank", sc.nuisance_rank},
                {"n_train", cfg.n_train},
                {"n_test", cfg.n_test}};
  j["train"] = {{"learning_rate", tr.learning_rate},
                {"weight_decay", tr.weight_decay},
                {"epochs", tr.epochs},
                {"lambda", tr.lambda},
                {"n_k", tr.n_k},
                {"k_centers", tr.k_centers},
                {"delta_patches", delta(tr.delta_patches)},
                {"batch_samples", tr.batch_samples},
                {"center_refresh", tr.center_refresh == CenterRefresh::PerEpoch ? "per-epoch" : "fixed"},
                {"mask_fill", tr.mask_fill == MaskFill::Zeros ? "zeros" : "mean"},
                {"aggregation", tr.aggregation == Aggregation::Sum ? "sum" : "mean"},
                {"beta1", tr.beta1},
                {"beta2", tr.beta2},
                {"epsilon", tr.epsilon},
                {"init_scale", tr.init_scale},
                {"collapse_samples", tr.collapse_samples},
                {"refresh_iterations", tr.refresh_iterations}};
  j["bank"] = {{"layout", to_string(cfg.bank_layout)},
               {"mode", bank_mode_string(cfg.bank_mode)},
               {"coreset_ratio", cfg.effective_coreset_ratio()}};
  j["score"] = {{"refine", cfg.scoring.refine}, {"alpha", cfg.scoring.alpha}};
  j["ablation"] = {{"seeds", cfg.ablation_seeds}};
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double parse_delta(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(d >= 0.0) || std::isinf(d)) {
    fail(ErrorCode::InvalidArgument, "delta must be a non-negative number or \"inf\", got '" + text + "'");
  }
  return d;
}

std::string delta_to_string(double delta) {
  if (std::isinf(delta)) return "inf";
  std::ostringstream os;
  os << delta;
  return os.str();
}

}  // namespace epiview::cli
