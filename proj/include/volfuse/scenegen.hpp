// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volfuse/errors.hpp"
#include "volfuse/geometry.hpp"

namespace volfuse {

using Rgb = std::array<double, 3>;

/// Oriented box resting on the ground plane.
struct Box {
  Point3 center;  // geometric center
  double yaw = 0.0;
  Point3 size;    // length (along yaw), width, height
  Rgb albedo{};
  double intensity = 0.5;
};

struct World {
  double ground_z = -1.8;
  Rgb ground_albedo{0.42, 0.40, 0.37};
  double ground_intensity = 0.15;
  std::vector<Box> boxes;
};

struct LidarConfig {
  std::size_t azimuth_steps = 360;
  std::vector<double> elevations_deg{-20.0, -16.428571428571427, -12.857142857142858, -9.2857142857142847,
                                     -5.7142857142857144, -2.1428571428571423, 1.4285714285714288, 5.0};
  Point3 origin = Point3::Zero();
};

/// Everything needed to regenerate a scene bit-for-bit.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t n_boxes = 8;
  std::array<double, 2> box_length{3.0, 5.0};
  std::array<double, 2> box_width{1.6, 2.2};
  std::array<double, 2> box_height{1.4, 3.0};
  /// Box centers are drawn from this square, at least `min_box_distance`
  /// from the sensor. Must lie inside `range`.
  std::array<double, 2> placement_range{-40.0, 40.0};
  double min_box_distance = 6.0;
  VolumeSpec range;  // perception range
  LidarConfig lidar;
  double ground_z = -1.8;
  double camera_height = 1.6;  // above ground
  double camera_ring_radius = 0.5;
  std::size_t n_cameras = 6;
  double camera_hfov_deg = 70.0;
  int image_height = 64;
  int image_width = 176;

  void validate() const;
  std::vector<CameraModel> rig() const;
};

/// Row-major (height, width, 3) image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  double at(int row, int col, int ch) const { return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
  bool operator==(const Image&) const = default;
};

using LidarPoint = std::array<double, 4>;  // x, y, z, intensity

struct Scene {
  std::vector<LidarPoint> points;
  std::vector<Image> images;
  std::vector<CameraModel> cameras;
  SceneSpec spec;
};

struct RayHit {
  double t = 0.0;
  int object = -1;  // -1 ground, otherwise box index
  Point3 normal;
};

/// Nearest intersection of origin + t * dir (t > 1e-9) with the ground plane
/// or any box.
std::optional<RayHit> cast_ray(const World& world, const Point3& origin, const Point3& dir);

World make_world(const SceneSpec& spec);

/// One ray per (azimuth, elevation); keeps the nearest hit when it lies in
/// `range`.
std::vector<LidarPoint> sample_lidar(const World& world, const LidarConfig& lidar, const VolumeSpec& range);

struct RenderResult {
  std::vector<Image> images;
  /// Per view, row-major camera-frame depth; +inf where the pixel sees sky.
  std::vector<std::vector<double>> depths;
};

/// Nearest-surface visibility per pixel center with flat albedo and
/// Lambertian shading under a fixed sun.
RenderResult render_views(const World& world, const std::vector<CameraModel>& rig, int height, int width);

Scene generate_scene(const SceneSpec& spec);

/// Scene file: {"seed", "points", "cameras": [{"K","Rt","width","height"}],
/// "images": [view][row][col][3]}. Only seed and image/rig size survive a
/// round trip of `spec`.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void write_scene_file(const std::string& path, const Scene& scene);
Scene read_scene_file(const std::string& path);

}  // namespace volfuse
