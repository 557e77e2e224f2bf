// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "gtex/marching_cubes.hpp"
#include "gtex/mesh.hpp"
#include "gtex/model.hpp"

namespace gtex {

namespace detail {

constexpr std::size_t kFieldChunk = 8192;

inline ad::Tensor points_tensor(const std::vector<Vec3>& pts, std::size_t begin,
                                std::size_t end) {
  std::vector<double> v;
  v.reserve((end - begin) * 3);
  for (std::size_t i = begin; i < end; ++i) {
    v.push_back(pts[i].x);
    v.push_back(pts[i].y);
    v.push_back(pts[i].z);
  }
  return ad::Tensor({end - begin, 3}, std::move(v));
}

}  // namespace detail

/// Evaluates the instance SDF over the grid and triangulates its zero set.
inline Mesh extract_instance(const ImplicitModel& model, const LatentCode& z_shape,
                             const GridSpec& grid, int workers = 1) {
  z_shape.expect(CodeKind::Shape);
  BatchField field = [&model, &z_shape](const std::vector<Vec3>& pts) {
    std::vector<double> out(pts.size());
    for (std::size_t begin = 0; begin < pts.size(); begin += detail::kFieldChunk) {
      const std::size_t end = std::min(pts.size(), begin + detail::kFieldChunk);
      ad::Tensor s =
          model.instance_sdf(nullptr, detail::points_tensor(pts, begin, end), z_shape);
      std::copy(s.value().begin(), s.value().end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
    }
    return out;
  };
  return marching_cubes_batched(field, grid, workers);
}

/// Per-vertex colors through the texture pathway; geometry and vertex order
/// untouched. Every vertex must lie on the instance surface (true for freshly
/// extracted meshes).
inline Mesh colorize(const ImplicitModel& model, const Mesh& mesh, const LatentCode& z_shape,
                     const LatentCode& z_tex, const LatentCode* z_pose = nullptr) {
  if (mesh.vertices.empty()) throw Error("colorize: empty mesh");
  Mesh out = mesh;
  out.colors.resize(mesh.vertices.size());

  double worst = 0;
  std::size_t worst_i = 0;
  const LocalFeature z_loc = LocalFeature::zero(model.dims().loc);
  for (std::size_t begin = 0; begin < mesh.vertices.size();
       begin += detail::kFieldChunk) {
    const std::size_t end = std::min(mesh.vertices.size(), begin + detail::kFieldChunk);
    ad::Tensor pts = detail::points_tensor(mesh.vertices, begin, end);
    const auto [chunk_worst, chunk_i] = model.max_abs_sdf(pts, z_shape);
    if (chunk_worst > worst) {
      worst = chunk_worst;
      worst_i = begin + chunk_i;
    }
  }
  if (worst > model.surface_tolerance()) {
    throw Error("colorize: vertex " + std::to_string(worst_i) +
                " is off the surface (|sdf| = " + std::to_string(worst) + " > tolerance " +
                std::to_string(model.surface_tolerance()) + ")");
  }

  for (std::size_t begin = 0; begin < mesh.vertices.size();
       begin += detail::kFieldChunk) {
    const std::size_t end = std::min(mesh.vertices.size(), begin + detail::kFieldChunk);
    ad::Tensor pts = detail::points_tensor(mesh.vertices, begin, end);
    ad::Tensor c = model.surface_color(nullptr, pts, z_shape, z_tex, z_pose, z_loc,
                                       /*enforce_surface=*/false);
    for (std::size_t i = begin; i < end; ++i) {
      out.colors[i] = {c.at(i - begin, 0), c.at(i - begin, 1), c.at(i - begin, 2)};
    }
  }
  return out;
}

enum class MeshFormat { Obj, Ply };

inline MeshFormat mesh_format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".obj") return MeshFormat::Obj;
  if (ext == ".ply") return MeshFormat::Ply;
  throw Error("unknown mesh format (use .obj or .ply): " + path.string());
}

inline void export_mesh(const Mesh& mesh, const std::filesystem::path& path,
                        MeshFormat format) {
  format == MeshFormat::Obj ? save_obj(mesh, path) : save_ply(mesh, path);
}

inline void export_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  export_mesh(mesh, path, mesh_format_from_path(path));
}

}  // namespace gtex
