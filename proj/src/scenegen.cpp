// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/scenegen.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "volfuse/random.hpp"

namespace volfuse {

namespace {

constexpr double kEpsT = 1e-9;
constexpr double kDeg = M_PI / 180.0;

const Point3& sun_direction() {
  static const Point3 sun = Point3(-0.4, 0.3, 0.85).normalized();
  return sun;
}

std::optional<RayHit> intersect_box(const Box& box, const Point3& origin, const Point3& dir) {
  // Into the box frame: rotate by -yaw about z.
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Point3 o = origin - box.center;
  const Point3 lo(c * o.x() + s * o.y(), -s * o.x() + c * o.y(), o.z());
  const Point3 ld(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const Point3 half = 0.5 * box.size;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis_near = -1;
  double sign_near = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld(a)) < 1e-15) {
      if (lo(a) < -half(a) || lo(a) > half(a)) return std::nullopt;
      continue;
    }
    double t0 = (-half(a) - lo(a)) / ld(a);
    double t1 = (half(a) - lo(a)) / ld(a);
    double sign = -1.0;  // entering through the -face
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis_near = a;
      sign_near = sign;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_near <= kEpsT || axis_near < 0) return std::nullopt;
  Point3 local_n = Point3::Zero();
  local_n(axis_near) = sign_near;
  const Point3 n(c * local_n.x() - s * local_n.y(), s * local_n.x() + c * local_n.y(), local_n.z());
  return RayHit{t_near, 0, n};
}

Rgb shade(const Rgb& albedo, const Point3& normal) {
  const double lambert = std::max(0.0, normal.dot(sun_direction()));
  const double k = 0.35 + 0.65 * lambert;
  return {std::clamp(albedo[0] * k, 0.0, 1.0), std::clamp(albedo[1] * k, 0.0, 1.0),
          std::clamp(albedo[2] * k, 0.0, 1.0)};
}

Rgb sky(const Point3& dir) {
  const double elev = std::clamp(dir.normalized().z(), 0.0, 1.0);
  return {0.62 - 0.25 * elev, 0.76 - 0.15 * elev, 0.95};
}

bool box_inside(const Box& b, const VolumeSpec& range) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      const double lx = 0.5 * sx * b.size.x(), ly = 0.5 * sy * b.size.y();
      const double x = b.center.x() + c * lx - s * ly;
      const double y = b.center.y() + s * lx + c * ly;
      if (x < range.x_range[0] || x >= range.x_range[1] || y < range.y_range[0] || y >= range.y_range[1]) return false;
    }
  }
  const double top = b.center.z() + 0.5 * b.size.z();
  const double bottom = b.center.z() - 0.5 * b.size.z();
  return bottom >= range.z_range[0] && top < range.z_range[1];
}

}  // namespace

void SceneSpec::validate() const {
  range.validate();
  if (n_cameras == 0) throw GeometryError("scene: at least one camera is required");
  if (image_height <= 0 || image_width <= 0) throw GeometryError("scene: image size must be positive");
  if (lidar.azimuth_steps == 0 || lidar.elevations_deg.empty()) throw GeometryError("scene: empty lidar pattern");
  if (placement_range[0] < range.x_range[0] || placement_range[1] > range.x_range[1] ||
      placement_range[0] < range.y_range[0] || placement_range[1] > range.y_range[1] ||
      placement_range[0] >= placement_range[1]) {
    throw GeometryError("scene: placement range must lie inside the perception range");
  }
  for (const auto& r : {box_length, box_width, box_height}) {
    if (!(r[0] > 0.0) || r[0] > r[1]) throw GeometryError("scene: invalid box size range");
  }
  if (ground_z < range.z_range[0] || ground_z >= range.z_range[1]) {
    throw GeometryError("scene: ground plane must lie inside the perception range");
  }
}

std::vector<CameraModel> SceneSpec::rig() const {
  std::vector<CameraModel> cams;
  for (std::size_t i = 0; i < n_cameras; ++i) {
    const double yaw = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_cameras);
    const Point3 pos(camera_ring_radius * std::cos(yaw), camera_ring_radius * std::sin(yaw), ground_z + camera_height);
    cams.push_back(make_camera(pos, yaw, camera_hfov_deg * kDeg, image_width, image_height));
  }
  return cams;
}

std::optional<RayHit> cast_ray(const World& world, const Point3& origin, const Point3& dir) {
  std::optional<RayHit> best;
  if (dir.z() < 0.0) {
    const double t = (world.ground_z - origin.z()) / dir.z();
    if (t > kEpsT) best = RayHit{t, -1, Point3(0, 0, 1)};
  }
  for (std::size_t i = 0; i < world.boxes.size(); ++i) {
    auto hit = intersect_box(world.boxes[i], origin, dir);
    if (hit && (!best || hit->t < best->t)) {
      hit->object = static_cast<int>(i);
      best = hit;
    }
  }
  return best;
}

World make_world(const SceneSpec& spec) {
  spec.validate();
  World world;
  world.ground_z = spec.ground_z;
  Rng rng(mix_seed(spec.seed, 0x5ce4e));
  constexpr int kMaxAttempts = 2000;
  for (int attempt = 0; attempt < kMaxAttempts && world.boxes.size() < spec.n_boxes; ++attempt) {
    Box b;
    b.size = Point3(rng.uniform(spec.box_length[0], spec.box_length[1]), rng.uniform(spec.box_width[0], spec.box_width[1]),
                    rng.uniform(spec.box_height[0], spec.box_height[1]));
    b.center = Point3(rng.uniform(spec.placement_range[0], spec.placement_range[1]),
                      rng.uniform(spec.placement_range[0], spec.placement_range[1]), spec.ground_z + 0.5 * b.size.z());
    b.yaw = rng.uniform(-M_PI, M_PI);
    b.albedo = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
    b.intensity = rng.uniform(0.3, 1.0);
    const double radius = 0.5 * std::hypot(b.size.x(), b.size.y());
    if (b.center.head<2>().norm() < spec.min_box_distance + radius) continue;
    if (!box_inside(b, spec.range)) continue;
    bool overlaps = false;
    for (const auto& o : world.boxes) {
      const double r_o = 0.5 * std::hypot(o.size.x(), o.size.y());
      if ((o.center.head<2>() - b.center.head<2>()).norm() < radius + r_o + 0.5) overlaps = true;
    }
    if (!overlaps) world.boxes.push_back(b);
  }
  return world;
}

std::vector<LidarPoint> sample_lidar(const World& world, const LidarConfig& lidar, const VolumeSpec& range) {
  std::vector<LidarPoint> points;
  for (double elev_deg : lidar.elevations_deg) {
    const double elev = elev_deg * kDeg;
    for (std::size_t a = 0; a < lidar.azimuth_steps; ++a) {
      const double az = 2.0 * M_PI * static_cast<double>(a) / static_cast<double>(lidar.azimuth_steps);
      const Point3 dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
      const auto hit = cast_ray(world, lidar.origin, dir);
      if (!hit) continue;
      const Point3 p = lidar.origin + hit->t * dir;
      if (!range.contains(p)) continue;
      const double intensity = hit->object < 0 ? world.ground_intensity : world.boxes[hit->object].intensity;
      points.push_back({p.x(), p.y(), p.z(), intensity});
    }
  }
  return points;
}

RenderResult render_views(const World& world, const std::vector<CameraModel>& rig, int height, int width) {
  RenderResult out;
  for (const auto& cam : rig) {
    cam.validate();
    const auto k = cam.K();
    const auto rt = cam.Rt();
    const Eigen::Matrix3d rot = rt.topLeftCorner<3, 3>();
    const Point3 center = -rot.transpose() * rt.topRightCorner<3, 1>();
    // Pixel (row, col) is rendered through its center; image size may differ
    // from the calibration's, in which case intrinsics scale with it.
    const double sx = static_cast<double>(cam.width) / width, sy = static_cast<double>(cam.height) / height;
    Image img{height, width, std::vector<double>(static_cast<std::size_t>(height) * width * 3)};
    std::vector<double> depth(static_cast<std::size_t>(height) * width, std::numeric_limits<double>::infinity());
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double u = (c + 0.5) * sx, v = (r + 0.5) * sy;
        // Camera-frame direction with unit z, so the ray parameter is depth.
        const Point3 dcam((u - k(0, 2)) / k(0, 0), (v - k(1, 2)) / k(1, 1), 1.0);
        const Point3 dir = rot.transpose() * dcam;
        const auto hit = cast_ray(world, center, dir);
        Rgb color;
        if (hit) {
          const Rgb& albedo = hit->object < 0 ? world.ground_albedo : world.boxes[hit->object].albedo;
          color = shade(albedo, hit->normal);
          depth[static_cast<std::size_t>(r) * width + c] = hit->t;
        } else {
          color = sky(dir);
        }
        for (int ch = 0; ch < 3; ++ch) img.rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch] = color[ch];
      }
    }
    out.images.push_back(std::move(img));
    out.depths.push_back(std::move(depth));
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec) {
  const World world = make_world(spec);
  Scene scene;
  scene.spec = spec;
  scene.cameras = spec.rig();
  scene.points = sample_lidar(world, spec.lidar, spec.range);
  scene.images = render_views(world, scene.cameras, spec.image_height, spec.image_width).images;
  return scene;
}

std::string scene_to_json(const Scene& scene) {
  nlohmann::json j;
  j["seed"] = scene.spec.seed;
  j["points"] = nlohmann::json::array();
  for (const auto& p : scene.points) j["points"].push_back({p[0], p[1], p[2], p[3]});
  j["cameras"] = nlohmann::json::array();
  for (const auto& c : scene.cameras) {
    j["cameras"].push_back({{"K", c.intrinsics}, {"Rt", c.extrinsics}, {"width", c.width}, {"height", c.height}});
  }
  j["images"] = nlohmann::json::array();
  for (const auto& img : scene.images) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < img.height; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < img.width; ++c) row.push_back({img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2)});
      rows.push_back(std::move(row));
    }
    j["images"].push_back(std::move(rows));
  }
  return j.dump();
}

Scene scene_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Scene scene;
    scene.spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("points")) {
      if (p.size() != 4) throw FormatError("scene file: each point needs 4 values");
      scene.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
    }
    for (const auto& c : j.at("cameras")) {
      CameraModel cam;
      cam.intrinsics = c.at("K").get<std::array<double, 12>>();
      cam.extrinsics = c.at("Rt").get<std::array<double, 16>>();
      cam.width = c.at("width").get<int>();
      cam.height = c.at("height").get<int>();
      cam.validate();
      scene.cameras.push_back(cam);
    }
    for (const auto& rows : j.at("images")) {
      Image img;
      img.height = static_cast<int>(rows.size());
      img.width = img.height > 0 ? static_cast<int>(rows[0].size()) : 0;
      for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != img.width) throw FormatError("scene file: ragged image rows");
        for (const auto& px : row) {
          if (px.size() != 3) throw FormatError("scene file: pixels need 3 channels");
          for (const auto& v : px) img.rgb.push_back(v.get<double>());
        }
      }
      scene.images.push_back(std::move(img));
    }
    if (scene.images.size() != scene.cameras.size()) throw FormatError("scene file: one image per camera required");
    scene.spec.n_cameras = scene.cameras.size();
    if (!scene.images.empty()) {
      scene.spec.image_height = scene.images[0].height;
      scene.spec.image_width = scene.images[0].width;
    }
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene file: ") + e.what());
  } catch (const GeometryError& e) {
    throw FormatError(std::string("scene file: ") + e.what());
  }
}

void write_scene_file(const std::string& path, const Scene& scene) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << scene_to_json(scene);
  if (!out) throw FormatError("failed writing " + path);
}

Scene read_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str());
}

}  // namespace volfuse
