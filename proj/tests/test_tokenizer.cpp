// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "volfuse/errors.hpp"
#include "volfuse/tokenizer.hpp"

using namespace volfuse;

namespace {

VolumeSpec desk_volume() {
  VolumeSpec spec;
  spec.cell_size = {5.0, 5.0, 4.0};
  return spec;
}

// Hand evaluation of the per-point embedding: gelu(W^T f + b).
std::vector<double> embed_by_hand(const std::array<double, 10>& f, const Linear& l) {
  const auto w = l.w.data();
  const auto b = l.b.data();
  const std::size_t c = l.out();
  std::vector<double> out(c);
  for (std::size_t j = 0; j < c; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < 10; ++i) acc += f[i] * w[i * c + j];
    out[j] = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
  }
  return out;
}

std::array<double, 10> decoration(const LidarPoint& p, const Point3& mean, const Point3& center) {
  // Range (-50, 50) x (-50, 50) x (-5, 3), cells 5 x 5 x 4.
  return {(p[0] + 50.0) / 50.0 - 1.0,
          (p[1] + 50.0) / 50.0 - 1.0,
          2.0 * (p[2] + 5.0) / 8.0 - 1.0,
          p[3],
          (p[0] - mean.x()) / 5.0,
          (p[1] - mean.y()) / 5.0,
          (p[2] - mean.z()) / 4.0,
          (p[0] - center.x()) / 5.0,
          (p[1] - center.y()) / 5.0,
          (p[2] - center.z()) / 4.0};
}

}  // namespace

TEST(Voxelize, SingletonPoolEqualsPointEmbedding) {
  Rng rng(1);
  const auto params = VoxelEmbedParams::init(6, rng);
  const LidarPoint p{12.3, -4.1, -1.2, 0.4};
  const auto batch = voxelize_dynamic({p}, desk_volume(), params);
  ASSERT_EQ(batch.size(), 1u);
  const Point3 center = volume_cell_center(desk_volume(), batch.coords[0]);
  const auto expected = embed_by_hand(decoration(p, Point3(p[0], p[1], p[2]), center), params.embed);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(batch.features[j], expected[j], 1e-14);
  EXPECT_EQ(batch.points_per_voxel[0].size(), 1u);
}

TEST(Voxelize, TwoPointsMeanPool) {
  Rng rng(2);
  const auto params = VoxelEmbedParams::init(5, rng);
  const LidarPoint a{1.0, 1.0, -1.0, 0.2}, b{3.0, 2.0, -0.5, 0.9};
  const auto batch = voxelize_dynamic({a, b}, desk_volume(), params);
  ASSERT_EQ(batch.size(), 1u);
  const Point3 mean(2.0, 1.5, -0.75);
  const Point3 center = volume_cell_center(desk_volume(), batch.coords[0]);
  const auto ea = embed_by_hand(decoration(a, mean, center), params.embed);
  const auto eb = embed_by_hand(decoration(b, mean, center), params.embed);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(batch.features[j], 0.5 * (ea[j] + eb[j]), 1e-14);
}

TEST(Voxelize, OutOfRangeDroppedAndEmptyInputThrows) {
  Rng rng(3);
  const auto params = VoxelEmbedParams::init(4, rng);
  const LidarPoint in{1.0, 1.0, -1.0, 0.2}, out{51.0, 0.0, 0.0, 0.5};
  EXPECT_EQ(voxelize_dynamic({in, out}, desk_volume(), params).size(), 1u);
  EXPECT_THROW(voxelize_dynamic({out}, desk_volume(), params), InputError);
  EXPECT_THROW(voxelize_dynamic({}, desk_volume(), params), InputError);
}

TEST(Voxelize, PermutationInvariantAndWellFormed) {
  Rng rng(4);
  const auto params = VoxelEmbedParams::init(8, rng);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 400; ++i) {
    pts.push_back({rng.uniform(-55, 55), rng.uniform(-55, 55), rng.uniform(-5, 3), rng.uniform()});
  }
  const auto a = voxelize_dynamic(pts, desk_volume(), params);
  std::vector<LidarPoint> shuffled = pts;
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
  const auto b = voxelize_dynamic(shuffled, desk_volume(), params);
  ASSERT_EQ(a.coords, b.coords);
  for (std::size_t i = 0; i < a.features.numel(); ++i) EXPECT_NEAR(a.features[i], b.features[i], 1e-12);

  std::set<std::size_t> flats;
  std::size_t total = 0;
  for (std::size_t v = 0; v < a.size(); ++v) {
    flats.insert(desk_volume().flat_index(a.coords[v]));
    ASSERT_GE(a.points_per_voxel[v].size(), 1u);
    for (const auto& p : a.points_per_voxel[v]) EXPECT_EQ(point_to_volume_coord(desk_volume(), p), a.coords[v]);
    total += a.points_per_voxel[v].size();
  }
  EXPECT_EQ(flats.size(), a.size());
  const auto in_range = std::count_if(pts.begin(), pts.end(), [](const LidarPoint& p) {
    return desk_volume().contains(Point3(p[0], p[1], p[2]));
  });
  EXPECT_EQ(total, static_cast<std::size_t>(in_range));
}

TEST(Patches, TokenCountForDeskImages) {
  Rng rng(5);
  const auto params = PatchEmbedParams::init(8, 8, 6, rng);
  const std::vector<Image> images(6, Image{64, 176, std::vector<double>(64 * 176 * 3, 0.5)});
  const auto batch = embed_patches(images, 8, params);
  EXPECT_EQ(batch.grid_h, 8u);
  EXPECT_EQ(batch.grid_w, 22u);
  EXPECT_EQ(batch.size(), 1056u);
  EXPECT_EQ(batch.features.shape(), (Shape{1056, 8}));
  EXPECT_EQ(batch.targets.shape(), (Shape{1056, 192}));
  EXPECT_THROW(embed_patches(images, 7, params), ConfigError);
}

TEST(Patches, ZeroImageGivesPositionViewAndBias) {
  Rng rng(6);
  auto params = PatchEmbedParams::init(4, 8, 2, rng);
  {
    auto b = params.embed.b.mutable_data();
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = 0.1 * static_cast<double>(j);
  }
  const std::vector<Image> images(2, Image{8, 12, std::vector<double>(8 * 12 * 3, 0.0)});
  const auto batch = embed_patches(images, 4, params);
  const Tensor pos = sinusoid_2d(2, 3, 8);
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const std::size_t v = t / 6, local = t % 6;
    for (std::size_t j = 0; j < 8; ++j) {
      const double expected = pos[local * 8 + j] + params.view_embed[v * 8 + j] + 0.1 * static_cast<double>(j);
      EXPECT_NEAR(batch.features[t * 8 + j], expected, 1e-15);
    }
  }
}

TEST(Patches, IdenticalPatchesDifferOnlyByEmbeddings) {
  Rng rng(7);
  const auto params = PatchEmbedParams::init(4, 8, 2, rng);
  std::vector<Image> images(2, Image{4, 8, std::vector<double>(4 * 8 * 3)});
  for (auto& img : images) {
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 8; ++c)
        for (int ch = 0; ch < 3; ++ch) img.rgb[(r * 8 + c) * 3 + ch] = 0.1 * r + 0.05 * (c % 4) + 0.2 * ch;
  }
  const auto batch = embed_patches(images, 4, params);
  const Tensor pos = sinusoid_2d(1, 2, 8);
  // Tokens 0 (view 0, col 0) and 3 (view 1, col 1) hold the same pixels.
  for (std::size_t j = 0; j < 8; ++j) {
    const double d_emb = (pos[8 + j] + params.view_embed[8 + j]) - (pos[j] + params.view_embed[j]);
    EXPECT_NEAR(batch.features[3 * 8 + j] - batch.features[j], d_emb, 1e-14);
  }
}

TEST(Patches, PatchifyRoundTripIsExact) {
  Rng rng(8);
  std::vector<Image> images(3, Image{16, 24, std::vector<double>(16 * 24 * 3)});
  for (auto& img : images)
    for (auto& v : img.rgb) v = rng.uniform();
  const Tensor t = patchify(images, 8);
  EXPECT_EQ(unpatchify(t.data(), 3, 2, 3, 8), images);
  // Patch 4 is view 0, grid (1, 1): its first pixel is image (8, 8).
  EXPECT_EQ(t[4 * 192 + 0], images[0].at(8, 8, 0));
  EXPECT_EQ(t[4 * 192 + 3 * 8 + 2], images[0].at(9, 8, 2));
}

TEST(Sinusoid, FirstPositionPattern) {
  const Tensor p = sinusoid_2d(3, 4, 8);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(p[j], j % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(p[(1 * 4 + 2) * 8 + 0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(p[(1 * 4 + 2) * 8 + 4], std::sin(2.0), 1e-15);
  const Tensor q = sinusoid_3d(2, 2, 2, 12);
  EXPECT_NEAR(q[((1 * 2 + 0) * 2 + 1) * 12 + 0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(q[((1 * 2 + 0) * 2 + 1) * 12 + 8], std::sin(1.0), 1e-15);
  EXPECT_EQ(q[((1 * 2 + 0) * 2 + 1) * 12 + 4], 0.0);
}

TEST(MaskPlan, ExactFloorCounts) {
  const auto hundred = make_mask_plan(100, 0.75, 1);
  EXPECT_EQ(std::count(hundred.begin(), hundred.end(), true), 75);
  for (std::size_t n = 0; n <= 2000; n += 7) {
    // Integer oracles for the two default ratios.
    const auto lidar = make_mask_plan(n, 0.70, n);
    const auto camera = make_mask_plan(n, 0.75, n + 1);
    EXPECT_EQ(static_cast<std::size_t>(std::count(lidar.begin(), lidar.end(), true)), (70 * n) / 100) << n;
    EXPECT_EQ(static_cast<std::size_t>(std::count(camera.begin(), camera.end(), true)), (3 * n) / 4) << n;
  }
  EXPECT_EQ(mask_count(100, 0.29), 29u);
  const auto none = make_mask_plan(50, 0.0, 3);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
}

TEST(MaskPlan, DeterministicAndValidated) {
  EXPECT_EQ(make_mask_plan(1056, 0.75, 42), make_mask_plan(1056, 0.75, 42));
  EXPECT_NE(make_mask_plan(1056, 0.75, 42), make_mask_plan(1056, 0.75, 43));
  EXPECT_THROW(make_mask_plan(10, 1.0, 1), ConfigError);
  EXPECT_THROW(make_mask_plan(10, -0.1, 1), ConfigError);
}
