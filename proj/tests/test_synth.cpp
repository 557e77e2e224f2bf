// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "gtex/boxcar.hpp"
#include "gtex/bvh.hpp"
#include "gtex/mesh.hpp"

using namespace gtex;

TEST(Boxcar, FourteenKeypointsWithClosedFormWheelCenters) {
  BoxcarParams p;
  Boxcar car = generate_boxcar(p);
  ASSERT_EQ(car.keypoints.size(), 14u);
  const double xw = p.wheel_offset_x(), yw = p.wheel_offset_y(), r = p.wheel_radius;
  struct Expect {
    const char* name;
    Vec3 pos;
  } wheels[] = {
      {"wheel_front_left", {xw, yw, r}},
      {"wheel_front_right", {xw, -yw, r}},
      {"wheel_back_left", {-xw, yw, r}},
      {"wheel_back_right", {-xw, -yw, r}},
  };
  for (const auto& w : wheels) {
    int i = car.keypoints.index_of(w.name);
    ASSERT_GE(i, 0) << w.name;
    EXPECT_NEAR((car.keypoints.positions[i] - w.pos).norm(), 0.0, 1e-12);
  }
}

TEST(Boxcar, AllKeypointsMatchClosedForms) {
  BoxcarParams p;
  p.body_length = 1.2;
  p.body_width = 0.5;
  p.body_height = 0.3;
  p.cabin_length = 0.5;
  p.cabin_height = 0.2;
  p.wheel_radius = 0.13;
  Boxcar car = generate_boxcar(p);
  const double z0 = p.body_bottom();
  const double roof = z0 + p.body_height + p.clearance() + p.cabin_height;
  int i = car.keypoints.index_of("body_front_left_bottom");
  ASSERT_GE(i, 0);
  EXPECT_NEAR((car.keypoints.positions[i] -
               Vec3{0.5 * p.body_length, 0.5 * p.body_width, z0}).norm(),
              0.0, 1e-12);
  i = car.keypoints.index_of("cabin_roof_front");
  ASSERT_GE(i, 0);
  EXPECT_NEAR((car.keypoints.positions[i] -
               Vec3{p.cabin_shift_x() + 0.5 * p.cabin_length, 0.0, roof}).norm(),
              0.0, 1e-12);
}

TEST(Boxcar, MeshIsWatertight) {
  Boxcar car = generate_boxcar({});
  EXPECT_TRUE(is_watertight(car.mesh));
  const EdgeAudit audit = audit_edges(car.mesh);
  EXPECT_EQ(audit.boundary_edges, 0u);
  EXPECT_EQ(audit.nonmanifold_edges, 0u);
}

TEST(Boxcar, CabinVerticesCarryCabinColorExactly) {
  BoxcarParams p;
  Boxcar car = generate_boxcar(p);
  const Vec3 cabin = p.part_colors.at("cabin");
  for (std::size_t t = 0; t < car.mesh.triangles.size(); ++t) {
    if (car.triangle_parts[t] != BoxcarPart::Cabin) continue;
    for (auto vi : car.mesh.triangles[t]) {
      EXPECT_EQ(car.mesh.colors[vi].x, cabin.x);
      EXPECT_EQ(car.mesh.colors[vi].y, cabin.y);
      EXPECT_EQ(car.mesh.colors[vi].z, cabin.z);
    }
  }
}

TEST(Boxcar, PartLabelsPartitionTriangles) {
  Boxcar car = generate_boxcar({}, 16);
  ASSERT_EQ(car.triangle_parts.size(), car.mesh.triangles.size());
  std::size_t body = 0, cabin = 0, wheel = 0;
  for (auto part : car.triangle_parts) {
    if (part == BoxcarPart::Body) ++body;
    if (part == BoxcarPart::Cabin) ++cabin;
    if (part == BoxcarPart::Wheel) ++wheel;
  }
  EXPECT_EQ(body, 12u);
  EXPECT_EQ(cabin, 12u);
  EXPECT_EQ(wheel, 4u * 4u * 16u);
  EXPECT_EQ(body + cabin + wheel, car.mesh.triangles.size());
}

TEST(Boxcar, InvariantViolationsRejected) {
  BoxcarParams p;
  p.cabin_length = p.body_length;  // must be strictly smaller
  EXPECT_THROW(generate_boxcar(p), Error);
  BoxcarParams q;
  q.wheel_radius = q.body_height + 0.1;
  EXPECT_THROW(generate_boxcar(q), Error);
  BoxcarParams r;
  r.body_width = -1;
  EXPECT_THROW(generate_boxcar(r), Error);
}

TEST(Boxcar, InsideBodyIsNegativeSdf) {
  BoxcarParams p;
  Boxcar car = generate_boxcar(p);
  BvhIndex index(car.mesh);
  const Vec3 body_center{0, 0, p.body_bottom() + 0.5 * p.body_height};
  EXPECT_LT(index.signed_distance(body_center), 0.0);
  const Vec3 wheel_center{p.wheel_offset_x(), p.wheel_offset_y(), p.wheel_radius};
  EXPECT_LT(index.signed_distance(wheel_center), 0.0);
  EXPECT_GT(index.signed_distance({0, 0, 2.0}), 0.0);
  // clearance gap between body and cabin is outside
  const Vec3 gap{p.cabin_shift_x(), 0,
                 p.body_bottom() + p.body_height + 0.5 * p.clearance()};
  EXPECT_GT(index.signed_distance(gap), 0.0);
}

TEST(Family, DeterministicPerSeed) {
  BoxcarFamily a = generate_family(42, 4);
  BoxcarFamily b = generate_family(42, 4);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    const auto& ma = a.instances[i].car.mesh;
    const auto& mb = b.instances[i].car.mesh;
    ASSERT_EQ(ma.vertices.size(), mb.vertices.size());
    for (std::size_t v = 0; v < ma.vertices.size(); ++v) {
      EXPECT_EQ(ma.vertices[v].x, mb.vertices[v].x);
      EXPECT_EQ(ma.colors[v].x, mb.colors[v].x);
    }
  }
  BoxcarFamily c = generate_family(43, 4);
  EXPECT_NE(c.instances[1].params.body_length, a.instances[1].params.body_length);
}

TEST(Family, InstanceZeroKeepsTemplateGeometry) {
  BoxcarFamily fam = generate_family(7, 3);
  const auto& t = fam.tmpl.params;
  const auto& i0 = fam.instances[0].params;
  EXPECT_EQ(i0.body_length, t.body_length);
  EXPECT_EQ(i0.wheel_radius, t.wheel_radius);
}

TEST(Family, AllInstancesValidWithMatchingKeypointNames) {
  BoxcarFamily fam = generate_family(11, 5);
  std::set<std::string> template_names(fam.tmpl.car.keypoints.names.begin(),
                                       fam.tmpl.car.keypoints.names.end());
  EXPECT_EQ(template_names.size(), 14u);
  for (const auto& inst : fam.instances) {
    EXPECT_TRUE(is_watertight(inst.car.mesh));
    inst.car.mesh.validate();
    std::set<std::string> names(inst.car.keypoints.names.begin(),
                                inst.car.keypoints.names.end());
    EXPECT_EQ(names, template_names);
  }
}

TEST(Family, WriteProducesManifestAndLoadableFiles) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "gtex_family_test";
  fs::remove_all(dir);
  BoxcarFamily fam = generate_family(3, 2);
  write_family(fam, dir);
  ASSERT_TRUE(fs::exists(dir / "manifest.json"));
  Mesh tmpl = load_obj(dir / "template.obj");
  EXPECT_TRUE(tmpl.has_colors());
  Keypoints kps = load_keypoints(dir / "car_001.keypoints.json");
  EXPECT_EQ(kps.size(), 14u);
}

TEST(Icosphere, SubdividedCountsAndRadius) {
  Mesh m = icosphere(3, 1.0);
  EXPECT_EQ(m.triangles.size(), 1280u);
  EXPECT_TRUE(is_watertight(m));
  for (const auto& v : m.vertices) EXPECT_NEAR(v.norm(), 1.0, 1e-12);
}
