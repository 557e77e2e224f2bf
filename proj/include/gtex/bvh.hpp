// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "gtex/mesh.hpp"

namespace gtex {

namespace detail {

struct Aabb {
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi{-std::numeric_limits<double>::max(), -std::numeric_limits<double>::max(),
          -std::numeric_limits<double>::max()};

  void grow(const Vec3& p) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  }
  void grow(const Aabb& b) {
    grow(b.lo);
    grow(b.hi);
  }
  double dist2(const Vec3& p) const {
    double d2 = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = std::max({lo[k] - p[k], 0.0, p[k] - hi[k]});
      d2 += d * d;
    }
    return d2;
  }
  Vec3 center() const { return (lo + hi) * 0.5; }
};

enum class TriFeature : int {
  VertexA = 0,
  VertexB = 1,
  VertexC = 2,
  EdgeAB = 3,
  EdgeBC = 4,
  EdgeCA = 5,
  Face = 6,
};

/// Closest point on triangle abc to p, with the Voronoi region it fell in
/// (Ericson, Real-Time Collision Detection ch. 5).
inline Vec3 closest_point_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                                   TriFeature& feature) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) {
    feature = TriFeature::VertexA;
    return a;
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) {
    feature = TriFeature::VertexB;
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    feature = TriFeature::EdgeAB;
    return a + ab * (d1 / (d1 - d3));
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) {
    feature = TriFeature::VertexC;
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    feature = TriFeature::EdgeCA;
    return a + ac * (d2 / (d2 - d6));
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    feature = TriFeature::EdgeBC;
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  feature = TriFeature::Face;
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace detail

/// Result of a closest-feature query.
struct ClosestHit {
  double dist2 = std::numeric_limits<double>::max();
  Vec3 point;                 // closest point on the surface
  std::uint32_t triangle = 0;
  detail::TriFeature feature = detail::TriFeature::Face;
};

/// Bounding-volume hierarchy over a triangle mesh with angle-weighted
/// pseudonormals at faces, edges, and vertices. Immutable after build;
/// queries are reentrant. Distance magnitudes are exact; signs follow the
/// pseudonormal of the closest feature, which is correct for watertight
/// inputs (and for disjoint unions of watertight components).
class BvhIndex {
 public:
  explicit BvhIndex(const Mesh& mesh)
      : vertices_(mesh.vertices), triangles_(mesh.triangles) {
    if (triangles_.empty()) throw Error("BvhIndex: mesh has no triangles");
    build_pseudonormals();
    build_tree();
  }

  std::size_t triangle_count() const { return triangles_.size(); }

  ClosestHit closest(const Vec3& p) const {
    ClosestHit best;
    // iterative traversal, nearer child first
    std::array<std::uint32_t, 64> stack;
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (node.box.dist2(p) >= best.dist2) continue;
      if (node.count > 0) {
        for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
          consider(p, order_[i], best);
        }
      } else {
        const double dl = nodes_[node.first].box.dist2(p);
        const double dr = nodes_[node.first + 1].box.dist2(p);
        if (dl < dr) {
          if (dr < best.dist2) stack[top++] = node.first + 1;
          if (dl < best.dist2) stack[top++] = node.first;
        } else {
          if (dl < best.dist2) stack[top++] = node.first;
          if (dr < best.dist2) stack[top++] = node.first + 1;
        }
      }
    }
    return best;
  }

  /// Oracle path: scan every triangle in index order.
  ClosestHit closest_brute(const Vec3& p) const {
    ClosestHit best;
    for (std::uint32_t t = 0; t < triangles_.size(); ++t) consider(p, t, best);
    return best;
  }

  double signed_distance(const Vec3& p) const { return sign_of(p, closest(p)); }
  double signed_distance_brute(const Vec3& p) const { return sign_of(p, closest_brute(p)); }
  double unsigned_distance(const Vec3& p) const { return std::sqrt(closest(p).dist2); }

  /// Inside test by ray-crossing parity. Retries with fresh directions when a
  /// crossing is numerically ambiguous; deterministic for a fixed seed.
  bool inside_by_parity(const Vec3& p, std::uint64_t seed = 12345) const {
    Rng rng(seed);
    for (int attempt = 0; attempt < 32; ++attempt) {
      Vec3 dir{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
      if (dir.norm() < 1e-6) continue;
      dir = dir.normalized();
      int crossings = 0;
      bool clean = true;
      for (const auto& tri : triangles_) {
        const int hit = ray_triangle(p, dir, vertices_[tri[0]], vertices_[tri[1]],
                                     vertices_[tri[2]]);
        if (hit < 0) {
          clean = false;
          break;
        }
        crossings += hit;
      }
      if (clean) return (crossings % 2) == 1;
    }
    throw Error("inside_by_parity: no unambiguous ray found");
  }

 private:
  struct Node {
    detail::Aabb box;
    std::uint32_t first = 0;  // child index (inner) or first triangle slot (leaf)
    std::uint32_t count = 0;  // 0 for inner nodes
  };

  void consider(const Vec3& p, std::uint32_t t, ClosestHit& best) const {
    const auto& tri = triangles_[t];
    detail::TriFeature feature;
    const Vec3 c = detail::closest_point_triangle(p, vertices_[tri[0]], vertices_[tri[1]],
                                                  vertices_[tri[2]], feature);
    const double d2 = (p - c).norm2();
    if (d2 < best.dist2) {  // strict: ties keep the first triangle encountered
      best.dist2 = d2;
      best.point = c;
      best.triangle = t;
      best.feature = feature;
    }
  }

  double sign_of(const Vec3& p, const ClosestHit& hit) const {
    const Vec3 n = pseudonormal(hit);
    const double d = std::sqrt(hit.dist2);
    return (p - hit.point).dot(n) < 0 ? -d : d;
  }

  Vec3 pseudonormal(const ClosestHit& hit) const {
    using detail::TriFeature;
    const auto& tri = triangles_[hit.triangle];
    switch (hit.feature) {
      case TriFeature::VertexA: return vertex_normals_[tri[0]];
      case TriFeature::VertexB: return vertex_normals_[tri[1]];
      case TriFeature::VertexC: return vertex_normals_[tri[2]];
      case TriFeature::EdgeAB: return edge_normal(tri[0], tri[1]);
      case TriFeature::EdgeBC: return edge_normal(tri[1], tri[2]);
      case TriFeature::EdgeCA: return edge_normal(tri[2], tri[0]);
      case TriFeature::Face: return face_normals_[hit.triangle];
    }
    return face_normals_[hit.triangle];
  }

  Vec3 edge_normal(std::uint32_t a, std::uint32_t b) const {
    const auto it = edge_normals_.find(edge_key(a, b));
    return it != edge_normals_.end() ? it->second : face_normals_[0];
  }

  static std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  void build_pseudonormals() {
    face_normals_.resize(triangles_.size());
    vertex_normals_.assign(vertices_.size(), Vec3{});
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      const Vec3 a = vertices_[tri[0]], b = vertices_[tri[1]], c = vertices_[tri[2]];
      const Vec3 n = (b - a).cross(c - a);
      face_normals_[t] = n.normalized();
      // edge pseudonormal: sum of adjacent face normals
      for (int k = 0; k < 3; ++k) {
        edge_normals_[edge_key(tri[k], tri[(k + 1) % 3])] += face_normals_[t];
      }
      // vertex pseudonormal: incident angle weighted
      const Vec3 pts[3] = {a, b, c};
      for (int k = 0; k < 3; ++k) {
        const Vec3 e1 = (pts[(k + 1) % 3] - pts[k]).normalized();
        const Vec3 e2 = (pts[(k + 2) % 3] - pts[k]).normalized();
        const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
        vertex_normals_[tri[k]] += face_normals_[t] * angle;
      }
    }
    for (auto& [key, n] : edge_normals_) n = n.normalized();
    for (auto& n : vertex_normals_) n = n.normalized();
  }

  void build_tree() {
    order_.resize(triangles_.size());
    for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
    centroids_.resize(triangles_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      centroids_[t] = (vertices_[tri[0]] + vertices_[tri[1]] + vertices_[tri[2]]) / 3.0;
    }
    nodes_.reserve(2 * triangles_.size());
    nodes_.emplace_back();
    build_node(0, 0, static_cast<std::uint32_t>(order_.size()));
    centroids_.clear();
  }

  void build_node(std::uint32_t node_index, std::uint32_t begin, std::uint32_t end) {
    detail::Aabb box;
    detail::Aabb cbox;
    for (std::uint32_t i = begin; i < end; ++i) {
      const auto& tri = triangles_[order_[i]];
      for (auto v : tri) box.grow(vertices_[v]);
      cbox.grow(centroids_[order_[i]]);
    }
    nodes_[node_index].box = box;
    const std::uint32_t count = end - begin;
    if (count <= 4) {
      nodes_[node_index].first = begin;
      nodes_[node_index].count = count;
      return;
    }
    int axis = 0;
    double extent = 0;
    for (int k = 0; k < 3; ++k) {
      const double e = cbox.hi[k] - cbox.lo[k];
      if (e > extent) {
        extent = e;
        axis = k;
      }
    }
    const std::uint32_t mid = begin + count / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const std::uint32_t left = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[node_index].first = left;
    nodes_[node_index].count = 0;
    build_node(left, begin, mid);
    build_node(left + 1, mid, end);
  }

  /// 1 = clean crossing, 0 = clean miss, -1 = ambiguous (retry with a new ray).
  static int ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                          const Vec3& c) {
    constexpr double kEps = 1e-10;
    const Vec3 ab = b - a, ac = c - a;
    const Vec3 pvec = dir.cross(ac);
    const double det = ab.dot(pvec);
    if (std::abs(det) < kEps) {
      // parallel: ambiguous only if the ray can graze the triangle's plane
      const Vec3 n = ab.cross(ac);
      const double plane_dist = (origin - a).dot(n.normalized());
      return std::abs(plane_dist) < kEps ? -1 : 0;
    }
    const double inv = 1.0 / det;
    const Vec3 tvec = origin - a;
    const double u = tvec.dot(pvec) * inv;
    const Vec3 qvec = tvec.cross(ab);
    const double v = dir.dot(qvec) * inv;
    const double t = ac.dot(qvec) * inv;
    constexpr double kEdge = 1e-9;
    if (u < -kEdge || v < -kEdge || u + v > 1 + kEdge || t < -kEdge) {
      // clearly outside or behind
      if (u < -kEdge || v < -kEdge || u + v > 1 + kEdge) return 0;
      return t < -kEdge ? 0 : -1;
    }
    if (u < kEdge || v < kEdge || u + v > 1 - kEdge || t < kEdge) return -1;  // grazing
    return 1;
  }

  std::vector<Vec3> vertices_;
  std::vector<std::array<std::uint32_t, 3>> triangles_;
  std::vector<Vec3> face_normals_;
  std::vector<Vec3> vertex_normals_;
  std::unordered_map<std::uint64_t, Vec3> edge_normals_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> centroids_;
};

}  // namespace gtex
