// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <set>

#include "volfuse/geometry.hpp"
#include "volfuse/random.hpp"

using namespace volfuse;

namespace {

CameraModel identity_camera(double f, double cx, double cy, int w, int h) {
  CameraModel cam;
  cam.width = w;
  cam.height = h;
  cam.intrinsics = {f, 0, cx, 0, 0, f, cy, 0, 0, 0, 1, 0};
  cam.extrinsics = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  return cam;
}

std::vector<CameraModel> ring(int n, int w = 176, int h = 64) {
  std::vector<CameraModel> rig;
  for (int i = 0; i < n; ++i) {
    const double yaw = i * 2.0 * M_PI / n;
    rig.push_back(make_camera(Point3(0.5 * std::cos(yaw), 0.5 * std::sin(yaw), -0.2), yaw, 70.0 * M_PI / 180.0, w, h));
  }
  return rig;
}

}  // namespace

TEST(Projection, OpticalAxis) {
  auto p = project_point(identity_camera(1, 0, 0, 10, 10), Point3(0, 0, 2));
  EXPECT_EQ(p.u, 0.0);
  EXPECT_EQ(p.v, 0.0);
  EXPECT_EQ(p.depth, 2.0);
}

TEST(Projection, HandEvaluatedPinhole) {
  auto p = project_point(identity_camera(100, 32, 24, 64, 48), Point3(0.2, -0.1, 2));
  EXPECT_NEAR(p.u, 42.0, 1e-12);
  EXPECT_NEAR(p.v, 19.0, 1e-12);
  EXPECT_EQ(p.depth, 2.0);
}

TEST(Projection, DegenerateDepthThrows) {
  EXPECT_THROW(project_point(identity_camera(1, 0, 0, 4, 4), Point3(0, 0, 0)), GeometryError);
}

TEST(Projection, RoundTripThroughInverseMatrices) {
  const auto rig = ring(6);
  Rng rng(17);
  int checked = 0;
  double worst = 0.0;
  while (checked < 1000) {
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
    for (const auto& cam : rig) {
      if (hit_views({cam}, p).empty()) continue;
      const auto proj = project_point(cam, p);
      // Invert K's 3x3 block and R_t independently of the forward path.
      const Eigen::Matrix3d k3 = cam.K().leftCols<3>();
      const Eigen::Vector3d cam_pt = k3.inverse() * Eigen::Vector3d(proj.u * proj.depth, proj.v * proj.depth, proj.depth);
      const Eigen::Vector4d ego = cam.Rt().inverse() * Eigen::Vector4d(cam_pt.x(), cam_pt.y(), cam_pt.z(), 1.0);
      worst = std::max(worst, (ego.head<3>() - p).cwiseAbs().maxCoeff());
      ++checked;
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Camera, RingCamerasAreValid) {
  for (const auto& cam : ring(6)) EXPECT_NO_THROW(cam.validate());
  auto bad = ring(1)[0];
  bad.extrinsics[15] = 2.0;
  EXPECT_THROW(bad.validate(), GeometryError);
  bad = ring(1)[0];
  bad.extrinsics[1] *= 1.1;
  EXPECT_THROW(bad.validate(), GeometryError);
  bad = ring(1)[0];
  bad.intrinsics[11] = 1.0;
  EXPECT_THROW(bad.validate(), GeometryError);
}

TEST(HitViews, BehindOpticalAxisAndBoundary) {
  const auto cam = identity_camera(10, 5, 5, 10, 10);
  EXPECT_TRUE(hit_views({cam}, Point3(0, 0, -3)).empty());
  EXPECT_EQ(hit_views({cam}, Point3(0, 0, 3)), (std::vector<std::size_t>{0}));
  // u = 10 * 0.5 / 1 + 5 = 10 == width, excluded.
  EXPECT_TRUE(hit_views({cam}, Point3(0.5, 0, 1)).empty());
  // Just inside the lower edge is included.
  EXPECT_EQ(hit_views({cam}, Point3(-0.5, -0.5, 1)).size(), 1u);
}

TEST(HitViews, MatchesBruteForceOverRandomCloud) {
  const auto rig = ring(6);
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
    std::vector<std::size_t> expected;
    for (std::size_t v = 0; v < rig.size(); ++v) {
      try {
        const auto proj = project_point(rig[v], p);
        if (proj.depth > 1e-6 && proj.u >= 0 && proj.u < rig[v].width && proj.v >= 0 && proj.v < rig[v].height) {
          expected.push_back(v);
        }
      } catch (const GeometryError&) {
      }
    }
    EXPECT_EQ(hit_views(rig, p), expected);
  }
}

TEST(Volume, DefaultGridShape) {
  VolumeSpec spec;
  EXPECT_EQ(spec.H(), 200u);
  EXPECT_EQ(spec.W(), 200u);
  EXPECT_EQ(spec.Z(), 2u);
  VolumeSpec bad;
  bad.cell_size[0] = 0.3;
  EXPECT_THROW(bad.validate(), GeometryError);
  bad = VolumeSpec{};
  bad.z_range = {3.0, -5.0};
  EXPECT_THROW(bad.validate(), GeometryError);
}

TEST(Volume, PointToCoordExamples) {
  VolumeSpec spec;
  EXPECT_EQ(point_to_volume_coord(spec, Point3(0.26, -0.1, 0.5)), (VolumeCoord{100, 99, 1}));
  EXPECT_EQ(point_to_volume_coord(spec, Point3(-50, -50, -5)), (VolumeCoord{0, 0, 0}));
  EXPECT_FALSE(point_to_volume_coord(spec, Point3(50, 0, 0)).has_value());
}

TEST(Volume, CellCenterExamplesAndRoundTrip) {
  VolumeSpec spec;
  const Point3 c0 = volume_cell_center(spec, {0, 0, 0});
  EXPECT_NEAR(c0.x(), -49.75, 1e-12);
  EXPECT_NEAR(c0.y(), -49.75, 1e-12);
  EXPECT_NEAR(c0.z(), -3.0, 1e-12);
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    const auto c = spec.coord_of(f);
    ASSERT_EQ(point_to_volume_coord(spec, volume_cell_center(spec, c)), c);
  }
  VolumeSpec sym;
  sym.z_range = {-4.0, 4.0};
  const Point3 last = volume_cell_center(sym, {sym.H() - 1, sym.W() - 1, sym.Z() - 1});
  const Point3 first = volume_cell_center(sym, {0, 0, 0});
  EXPECT_NEAR((last + first).norm(), 0.0, 1e-12);
}

TEST(Volume, PartitionProperties) {
  VolumeSpec spec;
  spec.cell_size = {5.0, 5.0, 4.0};
  Rng rng(31);
  for (int i = 0; i < 2000; ++i) {
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
    const auto c = point_to_volume_coord(spec, p);
    ASSERT_TRUE(c.has_value());
    // Exactly one cell's half-open box contains p.
    const Point3 center = volume_cell_center(spec, *c);
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(p(a), center(a) - 0.5 * spec.cell_size[a]);
      EXPECT_LT(p(a), center(a) + 0.5 * spec.cell_size[a]);
    }
  }
  for (std::size_t ix = 0; ix + 1 < spec.H(); ++ix) {
    const Point3 d = volume_cell_center(spec, {ix + 1, 3, 1}) - volume_cell_center(spec, {ix, 3, 1});
    EXPECT_EQ(d, Point3(5.0, 0.0, 0.0));
  }
}

TEST(ReferencePoints, CenterContainmentDeterminism) {
  VolumeSpec spec;
  spec.cell_size = {5.0, 5.0, 4.0};
  const VolumeCoord c{3, 17, 1};
  const auto one = reference_points(spec, c, 1, 9);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], volume_cell_center(spec, c));
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    const auto cell = spec.coord_of(f);
    for (const auto& p : reference_points(spec, cell, 4, 5)) ASSERT_EQ(point_to_volume_coord(spec, p), cell);
  }
  EXPECT_EQ(reference_points(spec, c, 4, 77), reference_points(spec, c, 4, 77));
  EXPECT_NE(reference_points(spec, c, 4, 77), reference_points(spec, c, 4, 78));
  EXPECT_THROW(reference_points(spec, c, 0, 1), GeometryError);
}
