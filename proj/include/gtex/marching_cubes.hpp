// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <vector>

#include "gtex/mc_tables.hpp"
#include "gtex/mesh.hpp"

namespace gtex {

/// Sampling lattice for iso-surface extraction: `resolution` cells per axis
/// over an axis-aligned box, triangulating the iso_value level set.
struct GridSpec {
  std::size_t resolution = 128;
  Vec3 lo{-1, -1, -1};
  Vec3 hi{1, 1, 1};
  double iso_value = 0.0;

  void validate() const {
    if (resolution < 8) throw Error("grid: resolution must be >= 8");
    for (int k = 0; k < 3; ++k) {
      if (!(hi[k] > lo[k])) throw Error("grid: degenerate bounds");
    }
  }

  Vec3 node(std::size_t ix, std::size_t iy, std::size_t iz) const {
    const double n = static_cast<double>(resolution);
    return {lo.x + (hi.x - lo.x) * (static_cast<double>(ix) / n),
            lo.y + (hi.y - lo.y) * (static_cast<double>(iy) / n),
            lo.z + (hi.z - lo.z) * (static_cast<double>(iz) / n)};
  }
};

/// Field evaluated on a batch of points; must be reentrant (it may be called
/// from several worker threads on disjoint slabs).
using BatchField = std::function<std::vector<double>(const std::vector<Vec3>&)>;

/// Lookup-table marching cubes with linear edge interpolation and exact
/// vertex welding (each lattice edge is interpolated once). Grid nodes that
/// land exactly on iso_value are nudged by +1e-10 to remove the degenerate
/// configurations. Output triangles wind so normals point toward increasing
/// field values. Returns an empty mesh when the field never changes sign.
inline Mesh marching_cubes_batched(const BatchField& field, const GridSpec& grid,
                                   int workers = 1) {
  grid.validate();
  const std::size_t n = grid.resolution + 1;
  std::vector<double> values(n * n * n);
  auto node_index = [n](std::size_t ix, std::size_t iy, std::size_t iz) {
    return ix + n * (iy + n * iz);
  };

  // pure map over grid nodes, partitioned by z-slabs
  auto eval_slabs = [&](std::size_t z_begin, std::size_t z_end) {
    std::vector<Vec3> points(n * n);
    for (std::size_t iz = z_begin; iz < z_end; ++iz) {
      for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix < n; ++ix) points[ix + n * iy] = grid.node(ix, iy, iz);
      const std::vector<double> slab = field(points);
      if (slab.size() != points.size()) throw Error("marching_cubes: field batch size mismatch");
      std::copy(slab.begin(), slab.end(), values.begin() + static_cast<std::ptrdiff_t>(node_index(0, 0, iz)));
    }
  };
  if (workers <= 1) {
    eval_slabs(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::size_t b = std::min(n, w * per), e = std::min(n, (w + 1) * per);
      if (b < e) pool.emplace_back(eval_slabs, b, e);
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t iz = 0; iz < n; ++iz)
    for (std::size_t iy = 0; iy < n; ++iy)
      for (std::size_t ix = 0; ix < n; ++ix) {
        double& v = values[node_index(ix, iy, iz)];
        if (!std::isfinite(v)) {
          const Vec3 p = grid.node(ix, iy, iz);
          std::ostringstream os;
          os << "marching_cubes: non-finite field value at node (" << p.x << ", " << p.y
             << ", " << p.z << ")";
          throw Error(os.str());
        }
        if (v == grid.iso_value) v += 1e-10;  // removes on-node degeneracies
      }

  // (corner offset, axis) of the lower end of each cube edge
  struct EdgeHome {
    std::uint8_t dx, dy, dz, axis;
  };
  static constexpr EdgeHome kEdgeHome[12] = {
      {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
      {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
      {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
  };
  static constexpr std::uint8_t kCorner[8][3] = {
      {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
      {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
  };

  Mesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  edge_vertex.reserve(4096);

  auto vertex_on_edge = [&](std::size_t ix, std::size_t iy, std::size_t iz, int edge) {
    const EdgeHome home = kEdgeHome[edge];
    const std::size_t ax = ix + home.dx, ay = iy + home.dy, az = iz + home.dz;
    const std::uint64_t key = 3 * static_cast<std::uint64_t>(node_index(ax, ay, az)) + home.axis;
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    std::size_t bx = ax, by = ay, bz = az;
    (home.axis == 0 ? bx : home.axis == 1 ? by : bz) += 1;
    const double fa = values[node_index(ax, ay, az)];
    const double fb = values[node_index(bx, by, bz)];
    const Vec3 pa = grid.node(ax, ay, az), pb = grid.node(bx, by, bz);
    const double t = (grid.iso_value - fa) / (fb - fa);
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + (pb - pa) * t);
    edge_vertex.emplace(key, id);
    return id;
  };

  for (std::size_t iz = 0; iz < grid.resolution; ++iz) {
    for (std::size_t iy = 0; iy < grid.resolution; ++iy) {
      for (std::size_t ix = 0; ix < grid.resolution; ++ix) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (values[node_index(ix + kCorner[c][0], iy + kCorner[c][1],
                                iz + kCorner[c][2])] < grid.iso_value) {
            cube |= 1 << c;
          }
        }
        const auto& tris = detail::kTriTable[cube];
        for (int k = 0; tris[k] >= 0; k += 3) {
          const std::uint32_t a = vertex_on_edge(ix, iy, iz, tris[k]);
          const std::uint32_t b = vertex_on_edge(ix, iy, iz, tris[k + 1]);
          const std::uint32_t c = vertex_on_edge(ix, iy, iz, tris[k + 2]);
          if (a == b || b == c || a == c) continue;  // degenerate after welding
          // table winding faces decreasing field; flip so normals follow +grad
          mesh.triangles.push_back({a, c, b});
        }
      }
    }
  }
  return mesh;
}

inline Mesh marching_cubes(const std::function<double(const Vec3&)>& field,
                           const GridSpec& grid, int workers = 1) {
  return marching_cubes_batched(
      [&field](const std::vector<Vec3>& pts) {
        std::vector<double> out(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = field(pts[i]);
        return out;
      },
      grid, workers);
}

}  // namespace gtex
