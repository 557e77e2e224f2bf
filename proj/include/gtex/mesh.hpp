// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtex/common.hpp"

namespace gtex {

/// Indexed triangle surface with optional per-vertex colors and normals.
/// Positions are model units; after normalize_mesh they live in the unit
/// sphere with radius 1/1.03.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;  // empty, or one rgb in [0,1]^3 per vertex
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Vec3> vertex_normals;  // empty, or one unit vector per vertex

  bool has_colors() const { return !colors.empty(); }
  bool has_normals() const { return !vertex_normals.empty(); }

  Vec3 triangle_normal(std::size_t t) const {
    const auto& tri = triangles[t];
    return (vertices[tri[1]] - vertices[tri[0]])
        .cross(vertices[tri[2]] - vertices[tri[0]]);
  }
  double triangle_area(std::size_t t) const { return 0.5 * triangle_normal(t).norm(); }

  double surface_area() const {
    double a = 0;
    for (std::size_t t = 0; t < triangles.size(); ++t) a += triangle_area(t);
    return a;
  }

  void validate() const {
    for (const auto& tri : triangles) {
      for (auto i : tri) {
        if (i >= vertices.size()) throw Error("mesh: triangle index out of range");
      }
    }
    if (!colors.empty() && colors.size() != vertices.size())
      throw Error("mesh: color count does not match vertex count");
    for (const auto& c : colors) {
      for (int k = 0; k < 3; ++k) {
        if (!(c[k] >= 0.0 && c[k] <= 1.0)) throw Error("mesh: color component outside [0,1]");
      }
    }
  }
};

/// Area-weighted per-vertex normals (used when a mesh carries none).
inline std::vector<Vec3> compute_vertex_normals(const Mesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 n = mesh.triangle_normal(t);  // length = 2*area
    for (auto i : mesh.triangles[t]) normals[i] += n;
  }
  for (auto& n : normals) n = n.normalized();
  return normals;
}

/// Counts of non-2-manifold defects; a closed surface has both at zero.
struct EdgeAudit {
  std::size_t boundary_edges = 0;     // edges used by exactly one triangle
  std::size_t nonmanifold_edges = 0;  // edges used by three or more
};

inline EdgeAudit audit_edges(const Mesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> uses;
  for (const auto& tri : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      std::uint32_t a = tri[k], b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      uses[{a, b}]++;
    }
  }
  EdgeAudit audit;
  for (const auto& [e, n] : uses) {
    if (n == 1) audit.boundary_edges++;
    if (n > 2) audit.nonmanifold_edges++;
  }
  return audit;
}

inline bool is_watertight(const Mesh& mesh) {
  const EdgeAudit a = audit_edges(mesh);
  return !mesh.triangles.empty() && a.boundary_edges == 0 && a.nonmanifold_edges == 0;
}

// ---------------------------------------------------------------------------
// Wavefront OBJ: `v x y z [r g b]` vertex lines, triangulated `f` lines,
// `#` comments. Other directives are ignored.

struct MeshLoadStats {
  std::size_t degenerate_dropped = 0;
};

inline Mesh load_obj(const std::filesystem::path& path, MeshLoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file: " + path.string());

  Mesh mesh;
  std::size_t colored = 0;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dropped = 0;

  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p, c;
      if (!(ls >> p.x >> p.y >> p.z)) {
        throw Error("obj parse error at line " + std::to_string(lineno) + ": bad vertex");
      }
      mesh.vertices.push_back(p);
      if (ls >> c.x >> c.y >> c.z) {
        mesh.colors.resize(mesh.vertices.size() - 1);  // pad if colors started late
        mesh.colors.push_back(c);
        ++colored;
      }
    } else if (tag == "f") {
      std::array<std::uint32_t, 3> tri{};
      std::string tok;
      int count = 0;
      while (ls >> tok) {
        long idx = 0;
        try {
          idx = std::stol(tok.substr(0, tok.find('/')));
        } catch (...) {
          throw Error("obj parse error at line " + std::to_string(lineno) +
                      ": bad face token '" + tok + "'");
        }
        if (idx < 1) {
          throw Error("obj parse error at line " + std::to_string(lineno) +
                      ": face indices must be positive");
        }
        if (count >= 3) {
          throw Error("obj parse error at line " + std::to_string(lineno) +
                      ": only triangulated faces are supported");
        }
        tri[count++] = static_cast<std::uint32_t>(idx - 1);
      }
      if (count != 3) {
        throw Error("obj parse error at line " + std::to_string(lineno) +
                    ": face needs exactly 3 vertices");
      }
      mesh.triangles.push_back(tri);
    }
    // vn/vt/usemtl/... ignored
  }

  if (colored > 0 && colored != mesh.vertices.size()) {
    throw Error("obj parse error: " + std::to_string(colored) + " of " +
                std::to_string(mesh.vertices.size()) + " vertices carry colors");
  }
  if (colored == 0) mesh.colors.clear();

  for (const auto& tri : mesh.triangles) {
    for (auto i : tri) {
      if (i >= mesh.vertices.size())
        throw Error("obj parse error: face index " + std::to_string(i + 1) + " out of range");
    }
  }

  // ingestion cleanup: drop zero-area triangles
  std::vector<std::array<std::uint32_t, 3>> kept;
  kept.reserve(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const bool dup = tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2];
    if (dup || mesh.triangle_normal(t).norm2() < 1e-28) {
      ++dropped;
      continue;
    }
    kept.push_back(tri);
  }
  mesh.triangles = std::move(kept);
  if (stats) stats->degenerate_dropped = dropped;
  if (mesh.triangles.empty()) throw Error("mesh has no (non-degenerate) triangles: " + path.string());
  mesh.validate();
  return mesh;
}

inline void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write mesh file: " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    out << "v " << p.x << " " << p.y << " " << p.z;
    if (mesh.has_colors()) {
      const Vec3& c = mesh.colors[i];
      out << " " << c.x << " " << c.y << " " << c.z;
    }
    out << "\n";
  }
  for (const auto& tri : mesh.triangles) {
    out << "f " << tri[0] + 1 << " " << tri[1] + 1 << " " << tri[2] + 1 << "\n";
  }
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY with the fixed vertex layout
// x y z nx ny nz red green blue (float32 coords, uchar colors).

inline void save_ply(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write mesh file: " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float nx\nproperty float ny\nproperty float nz\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";

  const std::vector<Vec3> normals =
      mesh.has_normals() ? mesh.vertex_normals : compute_vertex_normals(mesh);
  auto quantize = [](double c) {  // round half up
    double q = std::floor(255.0 * c + 0.5);
    return static_cast<unsigned char>(std::min(255.0, std::max(0.0, q)));
  };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) le::write<float>(out, static_cast<float>(mesh.vertices[i][k]));
    for (int k = 0; k < 3; ++k) le::write<float>(out, static_cast<float>(normals[i][k]));
    const Vec3 c = mesh.has_colors() ? mesh.colors[i] : Vec3{1, 1, 1};
    for (int k = 0; k < 3; ++k) le::write<unsigned char>(out, quantize(c[k]));
  }
  for (const auto& tri : mesh.triangles) {
    le::write<unsigned char>(out, 3);
    for (auto i : tri) le::write<std::int32_t>(out, static_cast<std::int32_t>(i));
  }
  if (!out) throw Error("write failed: " + path.string());
}

/// Reads PLY files in the exact layout save_ply produces.
inline Mesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open mesh file: " + path.string());
  std::string line;
  std::size_t n_vertices = 0, n_faces = 0;
  std::vector<std::string> vprops;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "end_header") break;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw Error("ply: unsupported format " + fmt);
    } else if (tag == "element") {
      std::string what;
      std::size_t count;
      ls >> what >> count;
      in_vertex = (what == "vertex");
      if (in_vertex) n_vertices = count; else n_faces = count;
    } else if (tag == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      vprops.push_back(type + " " + name);
    }
  }
  const std::vector<std::string> expected = {
      "float x",  "float y",  "float z",  "float nx",   "float ny",
      "float nz", "uchar red", "uchar green", "uchar blue"};
  if (vprops != expected) throw Error("ply: unsupported vertex layout in " + path.string());

  Mesh mesh;
  mesh.vertices.resize(n_vertices);
  mesh.vertex_normals.resize(n_vertices);
  mesh.colors.resize(n_vertices);
  for (std::size_t i = 0; i < n_vertices; ++i) {
    for (int k = 0; k < 3; ++k) mesh.vertices[i][k] = le::read<float>(in);
    for (int k = 0; k < 3; ++k) mesh.vertex_normals[i][k] = le::read<float>(in);
    for (int k = 0; k < 3; ++k) mesh.colors[i][k] = le::read<unsigned char>(in) / 255.0;
  }
  for (std::size_t f = 0; f < n_faces; ++f) {
    const auto n = le::read<unsigned char>(in);
    if (n != 3) throw Error("ply: non-triangular face");
    std::array<std::uint32_t, 3> tri{};
    for (int k = 0; k < 3; ++k) tri[k] = static_cast<std::uint32_t>(le::read<std::int32_t>(in));
    mesh.triangles.push_back(tri);
  }
  mesh.validate();
  return mesh;
}

// ---------------------------------------------------------------------------
// Unit-sphere normalization: bounding-box center to the origin, farthest
// vertex scaled to radius 1/1.03 so near-surface sample noise stays inside
// the [-1,1]^3 cube.

struct NormalizeTransform {
  Vec3 center;
  double scale = 1.0;
  Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
};

constexpr double kNormalizedRadius = 1.0 / 1.03;

struct NormalizedMesh {
  Mesh mesh;
  NormalizeTransform transform;
};

inline NormalizedMesh normalize_mesh(const Mesh& input) {
  if (input.vertices.empty()) throw Error("normalize_mesh: empty mesh");
  Vec3 lo = input.vertices[0], hi = input.vertices[0];
  for (const Vec3& v : input.vertices) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], v[k]);
      hi[k] = std::max(hi[k], v[k]);
    }
  }
  NormalizeTransform t;
  t.center = (lo + hi) * 0.5;
  double max_norm = 0.0;
  for (const Vec3& v : input.vertices) max_norm = std::max(max_norm, (v - t.center).norm());
  if (max_norm == 0.0) throw Error("normalize_mesh: degenerate point cloud");
  t.scale = kNormalizedRadius / max_norm;

  NormalizedMesh out{input, t};
  for (Vec3& v : out.mesh.vertices) v = t.apply(v);
  return out;
}

// ---------------------------------------------------------------------------
// Keypoints: named semantic landmarks, one JSON document per instance with
// coordinates in the raw (pre-normalization) mesh frame.

struct Keypoints {
  std::vector<Vec3> positions;
  std::vector<std::string> names;

  std::size_t size() const { return positions.size(); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Keypoints load_keypoints(const std::filesystem::path& path,
                                const NormalizeTransform& transform = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open keypoint file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw Error("keypoint parse error in " + path.string() + ": " + e.what());
  }
  if (!doc.contains("keypoints") || !doc["keypoints"].is_array())
    throw Error("keypoint file missing 'keypoints' array: " + path.string());

  Keypoints kps;
  for (const auto& entry : doc["keypoints"]) {
    const std::string name = entry.at("name").get<std::string>();
    const auto& p = entry.at("p");
    if (kps.index_of(name) >= 0) throw Error("duplicate keypoint name: " + name);
    kps.names.push_back(name);
    kps.positions.push_back(
        transform.apply({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()}));
  }
  return kps;
}

inline void save_keypoints(const Keypoints& kps, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < kps.size(); ++i) {
    arr.push_back({{"name", kps.names[i]},
                   {"p", {kps.positions[i].x, kps.positions[i].y, kps.positions[i].z}}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write keypoint file: " + path.string());
  out << nlohmann::json{{"keypoints", arr}}.dump(2) << "\n";
}

/// Reorders to the template's name order; the name sets must match exactly.
inline Keypoints align_keypoints(const Keypoints& kps, const std::vector<std::string>& order) {
  if (kps.size() != order.size()) {
    throw Error("keypoint count mismatch: " + std::to_string(kps.size()) + " vs template " +
                std::to_string(order.size()));
  }
  Keypoints out;
  for (const std::string& name : order) {
    const int i = kps.index_of(name);
    if (i < 0) throw Error("keypoint name missing: " + name);
    out.names.push_back(name);
    out.positions.push_back(kps.positions[i]);
  }
  return out;
}

}  // namespace gtex
