// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtex/mesh.hpp"

namespace gtex {

enum class BoxcarPart : int { Body = 0, Cabin = 1, Wheel = 2 };

/// Parametric car-like shape: body box, cabin box above it, four wheel
/// cylinders below. Components are strictly disjoint closed surfaces
/// (separated by a small clearance), so pseudonormal signs and ray parity
/// are exact everywhere.
struct BoxcarParams {
  double body_length = 1.0;
  double body_width = 0.45;
  double body_height = 0.25;
  double cabin_length = 0.45;
  double cabin_height = 0.18;
  double wheel_radius = 0.11;
  std::map<std::string, Vec3> part_colors = {
      {"body", {0.70, 0.15, 0.15}},
      {"cabin", {0.20, 0.35, 0.75}},
      {"wheel", {0.12, 0.12, 0.12}},
  };

  double clearance() const { return 0.02 * body_height; }
  double body_bottom() const { return 2.0 * wheel_radius + clearance(); }
  double wheel_offset_x() const { return 0.3 * body_length; }
  double wheel_offset_y() const { return 0.5 * body_width; }
  double wheel_width() const { return 0.6 * wheel_radius; }
  double cabin_width() const { return 0.8 * body_width; }
  double cabin_shift_x() const { return -0.08 * body_length; }

  void validate() const {
    const double dims[] = {body_length, body_width,  body_height,
                           cabin_length, cabin_height, wheel_radius};
    for (double d : dims) {
      if (!(d > 0)) throw Error("boxcar: all dimensions must be positive");
    }
    if (!(cabin_length < body_length))
      throw Error("boxcar: cabin_length must be smaller than body_length");
    if (!(wheel_radius < body_height))
      throw Error("boxcar: wheel_radius must be smaller than body_height");
    if (!(2.0 * wheel_offset_x() > 2.0 * wheel_radius + 0.1 * wheel_radius))
      throw Error("boxcar: wheels would intersect; shrink wheel_radius or lengthen body");
  }
};

struct Boxcar {
  Mesh mesh;
  Keypoints keypoints;
  std::vector<BoxcarPart> triangle_parts;  // one label per triangle
};

namespace detail {

inline void append_box(Mesh& mesh, std::vector<BoxcarPart>& parts, const Vec3& lo,
                       const Vec3& hi, const Vec3& color, BoxcarPart part) {
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int xi = 0; xi < 2; ++xi)
    for (int yi = 0; yi < 2; ++yi)
      for (int zi = 0; zi < 2; ++zi) {
        mesh.vertices.push_back({xi ? hi.x : lo.x, yi ? hi.y : lo.y, zi ? hi.z : lo.z});
        mesh.colors.push_back(color);
      }
  auto v = [base](int xi, int yi, int zi) {
    return base + static_cast<std::uint32_t>((xi << 2) | (yi << 1) | zi);
  };
  // outward-wound quads, two triangles each
  const std::array<std::array<std::uint32_t, 4>, 6> faces = {{
      {v(1, 0, 0), v(1, 1, 0), v(1, 1, 1), v(1, 0, 1)},  // +x
      {v(0, 0, 0), v(0, 0, 1), v(0, 1, 1), v(0, 1, 0)},  // -x
      {v(0, 1, 0), v(0, 1, 1), v(1, 1, 1), v(1, 1, 0)},  // +y
      {v(0, 0, 0), v(1, 0, 0), v(1, 0, 1), v(0, 0, 1)},  // -y
      {v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)},  // +z
      {v(0, 0, 0), v(0, 1, 0), v(1, 1, 0), v(1, 0, 0)},  // -z
  }};
  for (const auto& q : faces) {
    mesh.triangles.push_back({q[0], q[1], q[2]});
    mesh.triangles.push_back({q[0], q[2], q[3]});
    parts.push_back(part);
    parts.push_back(part);
  }
}

// Closed cylinder with axis along +y, radius r, spanning [y0, y1].
inline void append_wheel(Mesh& mesh, std::vector<BoxcarPart>& parts, const Vec3& center,
                         double r, double half_width, int segments, const Vec3& color) {
  const double y0 = center.y - half_width, y1 = center.y + half_width;
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int ring = 0; ring < 2; ++ring) {
    const double y = ring == 0 ? y0 : y1;
    for (int k = 0; k < segments; ++k) {
      const double theta = 2.0 * M_PI * k / segments;
      mesh.vertices.push_back({center.x + r * std::cos(theta), y, center.z + r * std::sin(theta)});
      mesh.colors.push_back(color);
    }
  }
  const std::uint32_t c0 = static_cast<std::uint32_t>(mesh.vertices.size());
  mesh.vertices.push_back({center.x, y0, center.z});
  mesh.colors.push_back(color);
  const std::uint32_t c1 = c0 + 1;
  mesh.vertices.push_back({center.x, y1, center.z});
  mesh.colors.push_back(color);

  auto ring0 = [base, segments](int k) { return base + static_cast<std::uint32_t>(k % segments); };
  auto ring1 = [base, segments](int k) {
    return base + static_cast<std::uint32_t>(segments + k % segments);
  };
  for (int k = 0; k < segments; ++k) {
    // side, radially outward
    mesh.triangles.push_back({ring0(k), ring1(k), ring1(k + 1)});
    mesh.triangles.push_back({ring0(k), ring1(k + 1), ring0(k + 1)});
    // caps
    mesh.triangles.push_back({c0, ring0(k), ring0(k + 1)});
    mesh.triangles.push_back({c1, ring1(k + 1), ring1(k)});
    for (int i = 0; i < 4; ++i) parts.push_back(BoxcarPart::Wheel);
  }
}

}  // namespace detail

/// Builds the boxcar mesh, its 14 closed-form keypoints (8 body corners, 2
/// cabin roof midpoints, 4 wheel centers), and per-triangle part labels.
/// `resolution` is the wheel tessellation (segments per circle).
inline Boxcar generate_boxcar(const BoxcarParams& p, int resolution = 24) {
  p.validate();
  if (resolution < 8) throw Error("boxcar: resolution must be >= 8");

  Boxcar car;
  const double z0 = p.body_bottom();
  const double z1 = z0 + p.body_height;
  const Vec3 body_lo{-0.5 * p.body_length, -0.5 * p.body_width, z0};
  const Vec3 body_hi{0.5 * p.body_length, 0.5 * p.body_width, z1};
  detail::append_box(car.mesh, car.triangle_parts, body_lo, body_hi,
                     p.part_colors.at("body"), BoxcarPart::Body);

  const double cz0 = z1 + p.clearance();
  const Vec3 cabin_lo{p.cabin_shift_x() - 0.5 * p.cabin_length, -0.5 * p.cabin_width(), cz0};
  const Vec3 cabin_hi{p.cabin_shift_x() + 0.5 * p.cabin_length, 0.5 * p.cabin_width(),
                      cz0 + p.cabin_height};
  detail::append_box(car.mesh, car.triangle_parts, cabin_lo, cabin_hi,
                     p.part_colors.at("cabin"), BoxcarPart::Cabin);

  const double xw = p.wheel_offset_x(), yw = p.wheel_offset_y();
  for (double sx : {1.0, -1.0}) {
    for (double sy : {1.0, -1.0}) {
      detail::append_wheel(car.mesh, car.triangle_parts, {sx * xw, sy * yw, p.wheel_radius},
                           p.wheel_radius, 0.5 * p.wheel_width(), resolution,
                           p.part_colors.at("wheel"));
    }
  }

  auto add_kp = [&car](const std::string& name, const Vec3& pos) {
    car.keypoints.names.push_back(name);
    car.keypoints.positions.push_back(pos);
  };
  for (double sx : {1.0, -1.0}) {
    for (double sy : {1.0, -1.0}) {
      const std::string fx = sx > 0 ? "front" : "back";
      const std::string fy = sy > 0 ? "left" : "right";
      add_kp("body_" + fx + "_" + fy + "_bottom",
             {sx * 0.5 * p.body_length, sy * 0.5 * p.body_width, z0});
      add_kp("body_" + fx + "_" + fy + "_top",
             {sx * 0.5 * p.body_length, sy * 0.5 * p.body_width, z1});
    }
  }
  add_kp("cabin_roof_front",
         {p.cabin_shift_x() + 0.5 * p.cabin_length, 0.0, cz0 + p.cabin_height});
  add_kp("cabin_roof_back",
         {p.cabin_shift_x() - 0.5 * p.cabin_length, 0.0, cz0 + p.cabin_height});
  for (double sx : {1.0, -1.0}) {
    for (double sy : {1.0, -1.0}) {
      const std::string fx = sx > 0 ? "front" : "back";
      const std::string fy = sy > 0 ? "left" : "right";
      add_kp("wheel_" + fx + "_" + fy, {sx * xw, sy * yw, p.wheel_radius});
    }
  }

  car.mesh.validate();
  return car;
}

// ---------------------------------------------------------------------------
// Family generation: jittered instances around a template.

struct FamilyInstance {
  std::string id;
  BoxcarParams params;
  Boxcar car;
  double yaw = 0.0;
};

struct BoxcarFamily {
  FamilyInstance tmpl;
  std::vector<FamilyInstance> instances;
};

namespace detail {

inline BoxcarParams jitter_params(const BoxcarParams& base, Rng& rng, bool keep_geometry) {
  BoxcarParams p = base;
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (!keep_geometry) {
      auto j = [&rng](double v) { return v * rng.uniform(0.6, 1.4); };
      p.body_length = j(base.body_length);
      p.body_width = j(base.body_width);
      p.body_height = j(base.body_height);
      p.cabin_length = j(base.cabin_length);
      p.cabin_height = j(base.cabin_height);
      p.wheel_radius = j(base.wheel_radius);
    }
    for (auto& [part, color] : p.part_colors) {
      color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    }
    try {
      p.validate();
      return p;
    } catch (const Error&) {
      if (keep_geometry) throw;  // template geometry itself is invalid
    }
  }
  throw Error("boxcar family: could not draw valid parameters");
}

}  // namespace detail

/// n jittered instances (dimensions within +-40% of the template, part colors
/// uniform in [0.1, 0.9]^3) plus the template itself. Instance 0 keeps the
/// template geometry exactly. Deterministic per seed.
inline BoxcarFamily generate_family(std::uint64_t seed, std::size_t count,
                                    const BoxcarParams& template_params = {},
                                    int resolution = 24) {
  if (count < 1) throw Error("generate_family: count must be >= 1");
  BoxcarFamily family;
  family.tmpl = {"template", template_params, generate_boxcar(template_params, resolution), 0.0};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i);
    BoxcarParams p = detail::jitter_params(template_params, rng, /*keep_geometry=*/i == 0);
    char id[32];
    std::snprintf(id, sizeof(id), "car_%03zu", i);
    family.instances.push_back({id, p, generate_boxcar(p, resolution), 0.0});
  }
  return family;
}

/// Writes OBJ + keypoint JSON per instance and a manifest.json naming them.
inline void write_family(const BoxcarFamily& family, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["template_id"] = family.tmpl.id;
  nlohmann::json entries = nlohmann::json::array();
  auto write_one = [&](const FamilyInstance& inst) {
    const std::string mesh_file = inst.id + ".obj";
    const std::string kp_file = inst.id + ".keypoints.json";
    save_obj(inst.car.mesh, dir / mesh_file);
    save_keypoints(inst.car.keypoints, dir / kp_file);
    entries.push_back({{"id", inst.id},
                       {"mesh", mesh_file},
                       {"keypoints", kp_file},
                       {"yaw", inst.yaw}});
  };
  write_one(family.tmpl);
  for (const auto& inst : family.instances) write_one(inst);
  manifest["instances"] = entries;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

/// Icosphere: subdivided icosahedron projected to the given radius. Used as a
/// smooth analytic reference surface in tests and evaluation.
inline Mesh icosphere(int subdivisions, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<std::uint32_t, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) v = v.normalized();

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const auto idx = static_cast<std::uint32_t>(verts.size());
      verts.push_back(((verts[a] + verts[b]) * 0.5).normalized());
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const std::uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  Mesh mesh;
  mesh.triangles = std::move(faces);
  mesh.vertices.reserve(verts.size());
  for (const auto& v : verts) mesh.vertices.push_back(v * radius);
  return mesh;
}

}  // namespace gtex
