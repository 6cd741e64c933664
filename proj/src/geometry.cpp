// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "volfuse/random.hpp"

namespace volfuse {

Eigen::Matrix<double, 3, 4> CameraModel::K() const {
  Eigen::Matrix<double, 3, 4> k;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) k(r, c) = intrinsics[r * 4 + c];
  return k;
}

Eigen::Matrix4d CameraModel::Rt() const {
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = extrinsics[r * 4 + c];
  return m;
}

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw GeometryError("camera: image size must be positive");
  const auto rt = Rt();
  if (rt(3, 0) != 0.0 || rt(3, 1) != 0.0 || rt(3, 2) != 0.0 || rt(3, 3) != 1.0) {
    throw GeometryError("camera: extrinsics bottom row must be (0,0,0,1)");
  }
  const Eigen::Matrix3d rot = rt.topLeftCorner<3, 3>();
  if ((rot * rot.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw GeometryError("camera: extrinsics rotation is not orthonormal");
  }
  const auto k = K();
  if (k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0 || k(2, 3) != 0.0) {
    throw GeometryError("camera: intrinsics last row must be (0,0,1,0)");
  }
}

CameraModel make_camera(const Point3& position, double yaw, double hfov, int width, int height) {
  const double f = 0.5 * width / std::tan(0.5 * hfov);
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.intrinsics = {f, 0.0, 0.5 * width, 0.0, 0.0, f, 0.5 * height, 0.0, 0.0, 0.0, 1.0, 0.0};
  // Rows of R are the camera axes expressed in the ego frame.
  const Point3 forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Point3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Point3 down(0.0, 0.0, -1.0);
  Eigen::Matrix3d rot;
  rot.row(0) = right.transpose();
  rot.row(1) = down.transpose();
  rot.row(2) = forward.transpose();
  const Point3 t = -rot * position;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.extrinsics[r * 4 + c] = rot(r, c);
    cam.extrinsics[r * 4 + 3] = t(r);
  }
  cam.extrinsics[12] = 0.0;
  cam.extrinsics[13] = 0.0;
  cam.extrinsics[14] = 0.0;
  cam.extrinsics[15] = 1.0;
  return cam;
}

Projection project_point(const CameraModel& cam, const Point3& p) {
  const Eigen::Vector4d homo(p.x(), p.y(), p.z(), 1.0);
  const Eigen::Vector3d q = cam.K() * (cam.Rt() * homo);
  if (std::abs(q.z()) < 1e-9) throw GeometryError("project_point: degenerate projection (point on camera plane)");
  return {q.x() / q.z(), q.y() / q.z(), q.z()};
}

std::vector<std::size_t> hit_views(const std::vector<CameraModel>& rig, const Point3& p) {
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const auto& cam = rig[i];
    const Eigen::Vector4d homo(p.x(), p.y(), p.z(), 1.0);
    const Eigen::Vector3d q = cam.K() * (cam.Rt() * homo);
    if (!(q.z() > kMinHitDepth)) continue;
    const double u = q.x() / q.z(), v = q.y() / q.z();
    if (u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height) hits.push_back(i);
  }
  return hits;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t cells_along(const std::array<double, 2>& range, double size, const char* axis) {
  const double span = range[1] - range[0];
  if (!(span > 0.0) || !(size > 0.0)) {
    throw GeometryError(std::string("volume: ") + axis + " span and cell size must be positive");
  }
  const double n = span / size;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, rounded)) {
    throw GeometryError(std::string("volume: ") + axis + " span is not a whole number of cells");
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

void VolumeSpec::validate() const {
  (void)H();
  (void)W();
  (void)Z();
}

std::size_t VolumeSpec::H() const { return cells_along(x_range, cell_size[0], "x"); }
std::size_t VolumeSpec::W() const { return cells_along(y_range, cell_size[1], "y"); }
std::size_t VolumeSpec::Z() const { return cells_along(z_range, cell_size[2], "z"); }

VolumeCoord VolumeSpec::coord_of(std::size_t flat) const {
  const std::size_t w = W(), z = Z();
  return {flat / (w * z), (flat / z) % w, flat % z};
}

bool VolumeSpec::contains(const Point3& p) const { return point_to_volume_coord(*this, p).has_value(); }

std::optional<VolumeCoord> point_to_volume_coord(const VolumeSpec& spec, const Point3& p) {
  const std::array<std::size_t, 3> dims{spec.H(), spec.W(), spec.Z()};
  const std::array<double, 3> mins{spec.x_range[0], spec.y_range[0], spec.z_range[0]};
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p(a) - mins[a]) / spec.cell_size[a]);
    if (!(f >= 0.0) || f >= static_cast<double>(dims[a])) return std::nullopt;
    idx[a] = static_cast<std::size_t>(f);
  }
  return VolumeCoord{idx[0], idx[1], idx[2]};
}

Point3 volume_cell_center(const VolumeSpec& spec, const VolumeCoord& c) {
  return {spec.x_range[0] + (static_cast<double>(c.ix) + 0.5) * spec.cell_size[0],
          spec.y_range[0] + (static_cast<double>(c.iy) + 0.5) * spec.cell_size[1],
          spec.z_range[0] + (static_cast<double>(c.iz) + 0.5) * spec.cell_size[2]};
}

std::vector<Point3> reference_points(const VolumeSpec& spec, const VolumeCoord& c, std::size_t n_ref,
                                     std::uint64_t seed) {
  if (n_ref == 0) throw GeometryError("reference_points: n_ref must be at least 1");
  std::vector<Point3> pts{volume_cell_center(spec, c)};
  Rng rng(mix_seed(seed, spec.flat_index(c), n_ref));
  // Samples stay a hair away from faces so floor() never lands on a neighbor.
  constexpr double kMargin = 1e-6;
  const Point3 lo(spec.x_range[0] + c.ix * spec.cell_size[0], spec.y_range[0] + c.iy * spec.cell_size[1],
                  spec.z_range[0] + c.iz * spec.cell_size[2]);
  for (std::size_t j = 1; j < n_ref; ++j) {
    Point3 p;
    for (int a = 0; a < 3; ++a) p(a) = lo(a) + spec.cell_size[a] * rng.uniform(kMargin, 1.0 - kMargin);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace volfuse
