// SPDX-License-Identifier: Apache-2.0

#include "epiview/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "epiview/error.hpp"
#include "json.hpp"

namespace epiview {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t offset) {
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return x;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    fail(ErrorCode::SchemaError, where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, where + ": field '" + key + "': " + e.what());
  }
}

Eigen::Matrix3d matrix3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 9) fail(ErrorCode::SchemaError, where + ": expected 9 numbers");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) {
    if (!j[i].is_number()) fail(ErrorCode::SchemaError, where + ": non-numeric entry");
    m(i / 3, i % 3) = j[i].get<double>();
  }
  return m;
}

json matrix3_to(const Eigen::Matrix3d& m) {
  json j = json::array();
  for (int i = 0; i < 9; ++i) j.push_back(m(i / 3, i % 3));
  return j;
}

double sign_invariant_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return std::min((a - b).norm(), (a + b).norm());
}

}  // namespace

// --------------------------------------------------------------------------- MVFT

std::vector<std::uint8_t> encode_feature_tensor(const FeatureTensor& t) {
  if (!t.all_finite()) fail(ErrorCode::InvalidTensor, "tensor contains non-finite values");
  if (t.size() != t.views() * t.tokens() * t.dims()) {
    fail(ErrorCode::InvalidTensor, "payload length does not match V*T*D");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kMvftHeaderBytes + 4 * t.size());
  for (const char c : {'M', 'V', 'F', 'T'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kMvftVersion);
  put_u32(out, static_cast<std::uint32_t>(t.views()));
  put_u32(out, static_cast<std::uint32_t>(t.tokens()));
  put_u32(out, static_cast<std::uint32_t>(t.dims()));
  put_u32(out, 0);
  put_u32(out, 0);
  for (const float x : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

FeatureTensor decode_feature_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MVFT", 4) != 0) {
    if (bytes.size() < 4) fail(ErrorCode::TruncatedPayload, "file shorter than the magic");
    fail(ErrorCode::BadMagic, "missing MVFT magic");
  }
  if (bytes.size() < kMvftHeaderBytes) fail(ErrorCode::TruncatedPayload, "truncated header");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kMvftVersion) {
    fail(ErrorCode::VersionMismatch, "unsupported MVFT version " + std::to_string(version));
  }
  const std::size_t v = get_u32(bytes, 8);
  const std::size_t t = get_u32(bytes, 12);
  const std::size_t d = get_u32(bytes, 16);
  const std::size_t n = v * t * d;
  if (bytes.size() < kMvftHeaderBytes + 4 * n) {
    fail(ErrorCode::TruncatedPayload, "payload holds " +
                                          std::to_string((bytes.size() - kMvftHeaderBytes) / 4) +
                                          " of " + std::to_string(n) + " values");
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, kMvftHeaderBytes + 4 * i));
  }
  FeatureTensor out(v, t, d, std::move(data));
  if (!out.all_finite()) fail(ErrorCode::InvalidTensor, "tensor contains non-finite values");
  return out;
}

void write_feature_tensor(const FeatureTensor& t, const fs::path& path) {
  write_bytes(path, encode_feature_tensor(t));
}

FeatureTensor read_feature_tensor(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::IoError, "no such file " + path.string());
  try {
    return decode_feature_tensor(read_bytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// --------------------------------------------------------------------------- rigs

const FundamentalMatrix& CameraRig::f(std::size_t a, std::size_t b) const {
  const std::size_t v = views();
  if (a >= v || b >= v || a == b || fundamental.size() != v * v) {
    fail(ErrorCode::MissingMaskPair, "rig has no F for pair (" + std::to_string(a) + ", " +
                                         std::to_string(b) + ")");
  }
  return fundamental[a * v + b];
}

std::size_t CameraRig::view_index(const std::string& id) const {
  for (std::size_t i = 0; i < view_ids.size(); ++i) {
    if (view_ids[i] == id) return i;
  }
  if (!id.empty() && id.find_first_not_of("0123456789") == std::string::npos) {
    const std::size_t i = std::stoul(id);
    if (i < views()) return i;
  }
  fail(ErrorCode::InvalidArgument, "unknown view '" + id + "'");
}

void CameraRig::validate() const {
  const std::size_t v = views();
  if (v < 2) fail(ErrorCode::SchemaError, "rig needs at least two views");
  if (std::set<std::string>(view_ids.begin(), view_ids.end()).size() != v) {
    fail(ErrorCode::SchemaError, "duplicate view ids");
  }
  if (fundamental.size() != v * v) fail(ErrorCode::SchemaError, "fundamental table is not V x V");
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < v; ++b) {
      if (a == b) continue;
      const auto& fm = fundamental[a * v + b];
      if (!fm.m.allFinite() || fm.m.norm() == 0.0) {
        fail(ErrorCode::SchemaError, "missing F for " + view_ids[a] + " -> " + view_ids[b]);
      }
    }
  }
  if (cameras) {
    if (cameras->size() != v) fail(ErrorCode::SchemaError, "camera count differs from view count");
    for (std::size_t a = 0; a < v; ++a) {
      for (std::size_t b = 0; b < v; ++b) {
        if (a == b) continue;
        const auto& ca = (*cameras)[a];
        const auto& cb = (*cameras)[b];
        const FundamentalMatrix analytic =
            fundamental_from_cameras(ca.k, ca.r, ca.t, cb.k, cb.r, cb.t,
                                     static_cast<int>(a), static_cast<int>(b));
        const FundamentalMatrix stored =
            normalize_fundamental(fundamental[a * v + b].m, static_cast<int>(a), static_cast<int>(b));
        if (sign_invariant_distance(analytic.m, stored.m) > 1e-9) {
          fail(ErrorCode::SchemaError,
               "stored F disagrees with cameras for " + view_ids[a] + " -> " + view_ids[b]);
        }
      }
    }
  }
}

CameraRig read_rig(const fs::path& path) {
  const json j = read_json(path);
  const std::string where = path.string();
  CameraRig rig;
  rig.view_ids = field<std::vector<std::string>>(j, "view_ids", where);
  const std::size_t v = rig.views();
  rig.fundamental.assign(v * v, FundamentalMatrix{});
  const json& table = j.contains("fundamental") ? j.at("fundamental") : json();
  if (!table.is_object()) fail(ErrorCode::SchemaError, where + ": missing 'fundamental' table");
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < v; ++b) {
      if (a == b) continue;
      const auto& ia = rig.view_ids[a];
      const auto& ib = rig.view_ids[b];
      if (!table.contains(ia) || !table.at(ia).contains(ib)) {
        fail(ErrorCode::SchemaError, where + ": missing fundamental[" + ia + "][" + ib + "]");
      }
      rig.fundamental[a * v + b] = FundamentalMatrix{
          matrix3_from(table.at(ia).at(ib), where + " fundamental"), static_cast<int>(a),
          static_cast<int>(b)};
    }
  }
  if (j.contains("intrinsics") || j.contains("extrinsics")) {
    if (!j.contains("intrinsics") || !j.contains("extrinsics")) {
      fail(ErrorCode::SchemaError, where + ": intrinsics and extrinsics must appear together");
    }
    std::vector<CameraPose> cams(v);
    for (std::size_t a = 0; a < v; ++a) {
      const auto& id = rig.view_ids[a];
      if (!j.at("intrinsics").contains(id) || !j.at("extrinsics").contains(id)) {
        fail(ErrorCode::SchemaError, where + ": missing camera for view " + id);
      }
      cams[a].k = matrix3_from(j.at("intrinsics").at(id), where + " intrinsics");
      const json& e = j.at("extrinsics").at(id);
      if (!e.is_array() || e.size() != 12) {
        fail(ErrorCode::SchemaError, where + ": extrinsics must hold 12 numbers");
      }
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cams[a].r(r, c) = e[r * 4 + c].get<double>();
        cams[a].t(r) = e[r * 4 + 3].get<double>();
      }
    }
    rig.cameras = std::move(cams);
  }
  rig.validate();
  return rig;
}

void write_rig(const CameraRig& rig, const fs::path& path) {
  json j;
  j["view_ids"] = rig.view_ids;
  json table = json::object();
  const std::size_t v = rig.views();
  for (std::size_t a = 0; a < v; ++a) {
    json row = json::object();
    for (std::size_t b = 0; b < v; ++b) {
      if (a != b) row[rig.view_ids[b]] = matrix3_to(rig.f(a, b).m);
    }
    table[rig.view_ids[a]] = row;
  }
  j["fundamental"] = table;
  if (rig.cameras) {
    json intr = json::object();
    json extr = json::object();
    for (std::size_t a = 0; a < v; ++a) {
      const auto& cam = (*rig.cameras)[a];
      intr[rig.view_ids[a]] = matrix3_to(cam.k);
      json e = json::array();
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) e.push_back(cam.r(r, c));
        e.push_back(cam.t(r));
      }
      extr[rig.view_ids[a]] = e;
    }
    j["intrinsics"] = intr;
    j["extrinsics"] = extr;
  }
  write_json(path, j);
}

EpipolarMaskSet build_mask_set(const CameraRig& rig, const PatchGrid& grid, double delta_patches,
                               unsigned threads) {
  const std::size_t v = rig.views();
  EpipolarMaskSet set(v, grid.token_count(), delta_patches);
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < v; ++b) {
      if (a != b) set.set(a, b, build_epipolar_mask(grid, rig.f(a, b), delta_patches, threads));
    }
  }
  return set;
}

// --------------------------------------------------------------------------- manifests

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }
std::string to_string(Label label) { return label == Label::Normal ? "normal" : "anomalous"; }

fs::path DatasetManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

std::array<std::uint32_t, 3> peek_shape(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::IoError, "referenced file missing: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> head(kMvftHeaderBytes);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  if (in.gcount() < static_cast<std::streamsize>(kMvftHeaderBytes)) {
    fail(ErrorCode::TruncatedPayload, path.string() + ": truncated header");
  }
  if (std::memcmp(head.data(), "MVFT", 4) != 0) fail(ErrorCode::BadMagic, path.string());
  return {get_u32(head, 8), get_u32(head, 12), get_u32(head, 16)};
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  const json j = read_json(path);
  const std::string where = path.string();
  DatasetManifest m;
  m.base_dir = path.parent_path();
  const json grid = field<json>(j, "grid", where);
  try {
    m.grid = PatchGrid::make(field<int>(grid, "image_width", where),
                             field<int>(grid, "image_height", where),
                             field<int>(grid, "patch_size", where));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaError) throw;
    fail(ErrorCode::SchemaError, where + ": " + e.what());
  }
  m.rig_path = field<std::string>(j, "rig_path", where);
  const json samples = field<json>(j, "samples", where);
  if (!samples.is_array() || samples.empty()) {
    fail(ErrorCode::SchemaError, where + ": 'samples' must be a non-empty array");
  }
  std::set<std::string> seen;
  for (const json& s : samples) {
    SampleRecord r;
    r.sample_id = field<std::string>(s, "sample_id", where);
    const std::string ctx = where + " sample " + r.sample_id;
    if (!seen.insert(r.sample_id).second) fail(ErrorCode::SchemaError, ctx + ": duplicate id");
    const auto split = field<std::string>(s, "split", ctx);
    if (split == "train") {
      r.split = Split::Train;
    } else if (split == "test") {
      r.split = Split::Test;
    } else {
      fail(ErrorCode::SchemaError, ctx + ": split must be train|test");
    }
    const auto label = field<std::string>(s, "label", ctx);
    if (label == "normal") {
      r.label = Label::Normal;
    } else if (label == "anomalous") {
      r.label = Label::Anomalous;
    } else {
      fail(ErrorCode::SchemaError, ctx + ": label must be normal|anomalous");
    }
    r.view_feature_paths = field<std::vector<std::string>>(s, "view_feature_paths", ctx);
    r.view_labels = field<std::vector<int>>(s, "view_labels", ctx);
    if (r.view_feature_paths.empty()) fail(ErrorCode::SchemaError, ctx + ": no views");
    if (r.view_labels.size() != r.view_feature_paths.size()) {
      fail(ErrorCode::SchemaError, ctx + ": view_labels length differs from view count");
    }
    for (const int l : r.view_labels) {
      if (l != 0 && l != 1) fail(ErrorCode::SchemaError, ctx + ": view labels must be 0|1");
    }
    if (s.contains("patch_masks") && !s.at("patch_masks").is_null()) {
      r.patch_masks = field<std::vector<std::vector<std::uint8_t>>>(s, "patch_masks", ctx);
      if (r.patch_masks->size() != r.view_feature_paths.size()) {
        fail(ErrorCode::SchemaError, ctx + ": patch_masks length differs from view count");
      }
      for (const auto& pm : *r.patch_masks) {
        if (pm.size() != m.grid.token_count()) {
          fail(ErrorCode::ShapeMismatch, ctx + ": patch mask length differs from T");
        }
        for (const auto b : pm) {
          if (b > 1) fail(ErrorCode::SchemaError, ctx + ": patch masks must be binary");
        }
      }
    }
    if (r.split == Split::Train && r.label == Label::Anomalous) {
      fail(ErrorCode::AnomalousTrainSample, ctx + ": training split must be normal-only");
    }
    m.samples.push_back(std::move(r));
  }

  m.views = m.samples.front().view_feature_paths.size();
  for (const auto& r : m.samples) {
    if (r.view_feature_paths.size() != m.views) {
      fail(ErrorCode::ShapeMismatch, where + " sample " + r.sample_id + ": view count differs");
    }
    for (const auto& rel : r.view_feature_paths) {
      const auto shape = peek_shape(m.resolve(rel));
      if (shape[0] != 1) {
        fail(ErrorCode::ShapeMismatch, rel + ": per-view feature files must have V=1");
      }
      if (m.tokens == 0) {
        m.tokens = shape[1];
        m.dims = shape[2];
        if (m.tokens != m.grid.token_count()) {
          fail(ErrorCode::ShapeMismatch, rel + ": token count differs from the patch grid");
        }
      } else if (shape[1] != m.tokens || shape[2] != m.dims) {
        fail(ErrorCode::ShapeMismatch, rel + ": (T, D) = (" + std::to_string(shape[1]) + ", " +
                                           std::to_string(shape[2]) + ") differs from first sample (" +
                                           std::to_string(m.tokens) + ", " + std::to_string(m.dims) + ")");
      }
    }
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json j;
  j["grid"] = {{"image_width", manifest.grid.image_width},
               {"image_height", manifest.grid.image_height},
               {"patch_size", manifest.grid.patch_size}};
  j["rig_path"] = manifest.rig_path;
  json samples = json::array();
  for (const auto& r : manifest.samples) {
    json s;
    s["sample_id"] = r.sample_id;
    s["split"] = to_string(r.split);
    s["label"] = to_string(r.label);
    s["view_feature_paths"] = r.view_feature_paths;
    s["view_labels"] = r.view_labels;
    if (r.patch_masks) s["patch_masks"] = *r.patch_masks;
    samples.push_back(std::move(s));
  }
  j["samples"] = std::move(samples);
  write_json(path, j);
}

FeatureTensor load_sample_features(const DatasetManifest& manifest, const SampleRecord& sample) {
  const std::size_t v = sample.view_feature_paths.size();
  FeatureTensor out(v, manifest.tokens, manifest.dims);
  for (std::size_t i = 0; i < v; ++i) {
    const FeatureTensor one = read_feature_tensor(manifest.resolve(sample.view_feature_paths[i]));
    if (one.views() != 1 || one.tokens() != manifest.tokens || one.dims() != manifest.dims) {
      fail(ErrorCode::ShapeMismatch, sample.view_feature_paths[i] + ": shape differs from manifest");
    }
    std::copy(one.data().begin(), one.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * manifest.tokens * manifest.dims));
  }
  return out;
}

}  // namespace epiview
