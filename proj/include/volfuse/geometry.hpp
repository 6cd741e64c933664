// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace volfuse {

using Point3 = Eigen::Vector3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pinhole camera. `intrinsics` is the 3x4 matrix K and `extrinsics` the 4x4
/// ego-to-camera transform R_t, both row-major. Camera frame: x right, y down,
/// z forward.
struct CameraModel {
  std::array<double, 12> intrinsics{};
  std::array<double, 16> extrinsics{};
  int width = 0;
  int height = 0;

  Eigen::Matrix<double, 3, 4> K() const;
  Eigen::Matrix4d Rt() const;
  /// Throws GeometryError unless the bottom row of R_t is (0,0,0,1), its
  /// rotation block is orthonormal, K's last row is (0,0,1,0) and the image
  /// is non-empty.
  void validate() const;

  bool operator==(const CameraModel&) const = default;
};

/// Camera at `position` looking along ego yaw `yaw` (radians, 0 = +x) with
/// horizontal field of view `hfov` and square pixels.
CameraModel make_camera(const Point3& position, double yaw, double hfov, int width, int height);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// z [u v 1]^T = K R_t [x y z 1]^T. Throws GeometryError when |depth| < 1e-9.
Projection project_point(const CameraModel& cam, const Point3& p);

/// Minimum camera depth for a point to count as in front of a camera.
inline constexpr double kMinHitDepth = 1e-6;

/// Views whose frustum contains `p`: depth > 1e-6 and the projection lands in
/// [0, width) x [0, height). Sorted ascending.
std::vector<std::size_t> hit_views(const std::vector<CameraModel>& rig, const Point3& p);

struct VolumeCoord {
  std::size_t ix = 0;
  std::size_t iy = 0;
  std::size_t iz = 0;
  bool operator==(const VolumeCoord&) const = default;
  auto operator<=>(const VolumeCoord&) const = default;
};

/// Axis-aligned partition of the perception range into cells, half-open on
/// every axis. H cells along x, W along y, Z along z.
struct VolumeSpec {
  std::array<double, 2> x_range{-50.0, 50.0};
  std::array<double, 2> y_range{-50.0, 50.0};
  std::array<double, 2> z_range{-5.0, 3.0};
  std::array<double, 3> cell_size{0.5, 0.5, 4.0};

  /// Throws GeometryError unless every span is positive and an exact
  /// multiple of its cell size.
  void validate() const;

  std::size_t H() const;
  std::size_t W() const;
  std::size_t Z() const;
  std::size_t cell_count() const { return H() * W() * Z(); }
  std::size_t flat_index(const VolumeCoord& c) const { return (c.ix * W() + c.iy) * Z() + c.iz; }
  VolumeCoord coord_of(std::size_t flat) const;
  bool contains(const Point3& p) const;

  bool operator==(const VolumeSpec&) const = default;
};

std::optional<VolumeCoord> point_to_volume_coord(const VolumeSpec& spec, const Point3& p);
Point3 volume_cell_center(const VolumeSpec& spec, const VolumeCoord& c);

/// n_ref == 1: the cell center. Otherwise the center followed by n_ref - 1
/// seeded uniform samples strictly inside the cell.
std::vector<Point3> reference_points(const VolumeSpec& spec, const VolumeCoord& c, std::size_t n_ref,
                                     std::uint64_t seed);

}  // namespace volfuse
