// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtex/bvh.hpp"
#include "gtex/mesh.hpp"
#include "gtex/sampling.hpp"

namespace gtex {

constexpr char kSamplesMagic[8] = {'G', 'T', 'E', 'X', 'S', 'M', 'P', 'L'};
constexpr std::uint32_t kSamplesVersion = 1;

/// Prepared supervision for one instance, cached on disk between `prepare`
/// and `train` (format: magic, version, seed stamp, counts, little-endian
/// float payload, CRC-32).
struct InstanceSamples {
  std::uint64_t seed = 0;
  SdfSamples sdf;
  SurfaceSamples surface;
};

inline void save_samples(const InstanceSamples& s, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  buf.write(kSamplesMagic, 8);
  le::write<std::uint32_t>(buf, kSamplesVersion);
  le::write<std::uint64_t>(buf, s.seed);
  le::write<std::uint64_t>(buf, s.sdf.size());
  le::write<std::uint64_t>(buf, s.surface.size());
  auto put_vecs = [&buf](const std::vector<Vec3>& vs) {
    for (const auto& v : vs)
      for (int k = 0; k < 3; ++k) le::write<double>(buf, v[k]);
  };
  put_vecs(s.sdf.points);
  for (double v : s.sdf.sdf) le::write<double>(buf, v);
  put_vecs(s.surface.points);
  put_vecs(s.surface.colors);
  put_vecs(s.surface.normals);
  const std::string body = buf.str();
  const std::uint32_t crc = Crc32::of(body.data(), body.size());

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write sample cache: " + path.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    le::write<std::uint32_t>(out, crc);
    if (!out) throw Error("sample cache write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline InstanceSamples load_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open sample cache: " + path.string());
  std::ostringstream ss(std::ios::binary);
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 8 + 4 + 8 * 3 + 4) throw Error("sample cache truncated: " + path.string());
  const std::size_t body_len = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body_len, 4);
  if constexpr (std::endian::native == std::endian::big) {
    stored_crc = __builtin_bswap32(stored_crc);
  }
  if (Crc32::of(bytes.data(), body_len) != stored_crc) {
    throw Error("sample cache checksum mismatch (corrupt file): " + path.string());
  }
  if (std::memcmp(bytes.data(), kSamplesMagic, 8) != 0) {
    throw Error("not a sample cache file: " + path.string());
  }
  std::istringstream is(bytes.substr(8), std::ios::binary);
  const auto version = le::read<std::uint32_t>(is);
  if (version != kSamplesVersion) {
    throw Error("unsupported sample cache version " + std::to_string(version));
  }
  InstanceSamples s;
  s.seed = le::read<std::uint64_t>(is);
  const auto n_sdf = le::read<std::uint64_t>(is);
  const auto n_surf = le::read<std::uint64_t>(is);
  auto get_vecs = [&is](std::vector<Vec3>& vs, std::uint64_t n) {
    vs.resize(n);
    for (auto& v : vs)
      for (int k = 0; k < 3; ++k) v[k] = le::read<double>(is);
  };
  get_vecs(s.sdf.points, n_sdf);
  s.sdf.sdf.resize(n_sdf);
  for (auto& v : s.sdf.sdf) v = le::read<double>(is);
  get_vecs(s.surface.points, n_surf);
  get_vecs(s.surface.colors, n_surf);
  get_vecs(s.surface.normals, n_surf);
  return s;
}

// ---------------------------------------------------------------------------
// Dataset manifests. A raw dataset directory (written by `synth` or arranged
// by hand) lists meshes and keypoint files; `prepare` normalizes geometry,
// samples supervision, and writes a prepared directory that `train`/`eval`
// consume.

struct ManifestEntry {
  std::string id;
  std::string mesh;       // file name relative to the manifest directory
  std::string keypoints;  // ditto
  std::string samples;    // prepared dirs only
  double yaw = 0.0;
};

struct Manifest {
  std::string template_id;
  std::vector<ManifestEntry> instances;
  std::filesystem::path dir;

  const ManifestEntry& find(const std::string& id) const {
    for (const auto& e : instances)
      if (e.id == id) return e;
    throw Error("instance not in manifest: " + id);
  }
  const ManifestEntry& tmpl() const { return find(template_id); }
};

inline Manifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("manifest parse error: " + std::string(e.what()));
  }
  Manifest m;
  m.dir = dir;
  m.template_id = j.at("template_id").get<std::string>();
  for (const auto& e : j.at("instances")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.mesh = e.at("mesh").get<std::string>();
    entry.keypoints = e.value("keypoints", "");
    entry.samples = e.value("samples", "");
    entry.yaw = e.value("yaw", 0.0);
    m.instances.push_back(entry);
  }
  m.find(m.template_id);  // template must be listed
  return m;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& dir) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.instances) {
    nlohmann::json row = {{"id", e.id}, {"mesh", e.mesh}, {"yaw", e.yaw}};
    if (!e.keypoints.empty()) row["keypoints"] = e.keypoints;
    if (!e.samples.empty()) row["samples"] = e.samples;
    entries.push_back(row);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << nlohmann::json{{"template_id", m.template_id}, {"instances", entries}}.dump(2)
      << "\n";
}

struct PrepareOptions {
  std::size_t sdf_count = 30000;
  std::size_t surface_count = 15000;
  std::uint64_t seed = 1;
};

/// Normalizes every instance to the unit sphere, samples SDF and surface
/// supervision, and writes normalized meshes + keypoints + sample caches plus
/// a prepared manifest into out_dir. Deterministic per (inputs, seed).
inline Manifest prepare_dataset(const std::filesystem::path& raw_dir,
                                const std::filesystem::path& out_dir,
                                const PrepareOptions& opt = {}) {
  const Manifest raw = load_manifest(raw_dir);
  std::filesystem::create_directories(out_dir);

  Manifest prepared;
  prepared.template_id = raw.template_id;
  prepared.dir = out_dir;
  for (std::size_t i = 0; i < raw.instances.size(); ++i) {
    const ManifestEntry& entry = raw.instances[i];
    Mesh mesh = load_obj(raw_dir / entry.mesh);
    auto [normalized, transform] = normalize_mesh(mesh);
    BvhIndex index(normalized);

    if (!normalized.has_colors()) {
      throw Error("prepare: instance '" + entry.id + "' has no vertex colors");
    }
    InstanceSamples samples;
    samples.seed = opt.seed;
    samples.sdf = sample_sdf_points(normalized, index, opt.sdf_count,
                                    mix_seed(opt.seed, 2 * i));
    samples.surface = sample_surface_colors(normalized, opt.surface_count,
                                            mix_seed(opt.seed, 2 * i + 1));

    ManifestEntry out = entry;
    out.mesh = entry.id + ".norm.obj";
    out.keypoints = entry.id + ".keypoints.json";
    out.samples = entry.id + ".samples";
    save_obj(normalized, out_dir / out.mesh);
    if (entry.keypoints.empty()) {
      throw Error("prepare: instance '" + entry.id + "' has no keypoint file");
    }
    save_keypoints(load_keypoints(raw_dir / entry.keypoints, transform),
                   out_dir / out.keypoints);
    save_samples(samples, out_dir / out.samples);
    prepared.instances.push_back(out);
  }
  save_manifest(prepared, out_dir);
  return prepared;
}

}  // namespace gtex
