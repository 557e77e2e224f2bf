// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <vector>

#include "gtex/extract.hpp"
#include "gtex/model.hpp"
#include "gtex/sampling.hpp"

namespace gtex {

/// Recombines codes across instances: geometry from z_shape_a, surface
/// texture from z_tex_b. The vertex buffer depends on z_shape_a alone.
inline Mesh texture_transfer(const ImplicitModel& model, const LatentCode& z_shape_a,
                             const LatentCode& z_tex_b, const GridSpec& grid,
                             const LatentCode* z_pose = nullptr, int workers = 1) {
  Mesh shape = extract_instance(model, z_shape_a, grid, workers);
  if (shape.triangles.empty()) throw Error("texture_transfer: empty extraction");
  return colorize(model, shape, z_shape_a, z_tex_b, z_pose);
}

/// Linear interpolation between codes of the same kind and dimension.
inline LatentCode interpolate_codes(const LatentCode& z_a, const LatentCode& z_b, double t) {
  if (z_a.kind != z_b.kind) throw Error("interpolate_codes: kind mismatch");
  if (z_a.dim() != z_b.dim()) throw Error("interpolate_codes: dimension mismatch");
  const std::size_t dim = z_a.dim();
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; ++i)
    v[i] = (1.0 - t) * z_a.vector.value()[i] + t * z_b.vector.value()[i];
  return LatentCode{z_a.kind, ad::Tensor({dim}, std::move(v))};
}

/// Dense correspondence realized through template space: a point on instance
/// A maps to the B surface sample whose warped image is nearest to A's warped
/// image. Ties break to the lowest sample index.
inline Vec3 correspond(const ImplicitModel& model, const Vec3& p_on_a,
                       const LatentCode& z_a, const LatentCode& z_b,
                       const SurfaceSamples& surface_b) {
  if (surface_b.size() == 0) throw Error("correspond: no surface samples for B");
  ad::Tensor p({1, 3}, {p_on_a.x, p_on_a.y, p_on_a.z});
  const auto [off, off_i] = model.max_abs_sdf(p, z_a);
  if (off > model.surface_tolerance()) {
    throw Error("correspond: query point is off the A surface (|sdf| = " +
                std::to_string(off) + ")");
  }
  ad::Tensor a_tp = model.warp(nullptr, p, z_a);
  const Vec3 target{a_tp.at(0, 0), a_tp.at(0, 1), a_tp.at(0, 2)};

  double best = std::numeric_limits<double>::max();
  std::size_t best_i = 0;
  for (std::size_t begin = 0; begin < surface_b.size(); begin += detail::kFieldChunk) {
    const std::size_t end = std::min(surface_b.size(), begin + detail::kFieldChunk);
    ad::Tensor batch = detail::points_tensor(surface_b.points, begin, end);
    ad::Tensor warped = model.warp(nullptr, batch, z_b);
    for (std::size_t i = 0; i < end - begin; ++i) {
      const Vec3 q{warped.at(i, 0), warped.at(i, 1), warped.at(i, 2)};
      const double d = (q - target).norm2();
      if (d < best) {  // strict: ties keep the lowest index
        best = d;
        best_i = begin + i;
      }
    }
  }
  return surface_b.points[best_i];
}

}  // namespace gtex
