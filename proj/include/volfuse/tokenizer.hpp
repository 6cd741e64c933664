// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "volfuse/geometry.hpp"
#include "volfuse/nn.hpp"
#include "volfuse/scenegen.hpp"
#include "volfuse/tensor.hpp"

namespace volfuse {

constexpr std::size_t kVoxelFeatureDim = 10;

/// Per-point decoration -> width C, mean-pooled per voxel.
struct VoxelEmbedParams {
  Linear embed;  // (10, C)

  static VoxelEmbedParams init(std::size_t width, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct PatchEmbedParams {
  Linear embed;         // (3 P^2, C)
  Tensor view_embed;    // (n_views, C)
  Tensor pos_table;     // (H_p * W_p, C) when learned; undefined for the fixed encoding

  static PatchEmbedParams init(std::size_t patch, std::size_t width, std::size_t n_views, Rng& rng,
                               std::size_t learned_pos_tokens = 0);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct VoxelTokenBatch {
  std::vector<VolumeCoord> coords;  // sorted by flat index
  Tensor features;                  // (Nvox, C)
  std::vector<std::vector<Point3>> points_per_voxel;
  std::vector<bool> mask;  // true = masked

  std::size_t size() const { return coords.size(); }
};

struct PatchTokenBatch {
  std::size_t n_views = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch = 0;
  std::vector<std::size_t> view_index;
  Tensor features;  // (Npatch_total, C)
  Tensor targets;   // (Npatch_total, 3 P^2), pixel order (row, col, channel)
  std::vector<bool> mask;

  std::size_t size() const { return view_index.size(); }
  std::size_t per_view() const { return grid_h * grid_w; }
};

/// Sinusoidal encoding of a (rows, cols) grid, row-major, shape (rows*cols, C).
/// Half the even-sized channel budget encodes the row, half the column.
Tensor sinusoid_2d(std::size_t rows, std::size_t cols, std::size_t width);
/// Same over an (H, W, Z) grid, flat index (ix*W + iy)*Z + iz, shape (HWZ, C).
Tensor sinusoid_3d(std::size_t h, std::size_t w, std::size_t z, std::size_t width);

/// Per point: normalized x, y, z, intensity, offset from the voxel point mean
/// and offset from the cell center (both in cell units). Rows are grouped by
/// voxel; `source` receives the input index of each row.
std::vector<std::array<double, kVoxelFeatureDim>> decorate_points(const std::vector<LidarPoint>& points,
                                                                  const VolumeSpec& spec,
                                                                  std::vector<std::size_t>* voxel_of_point,
                                                                  std::vector<VolumeCoord>* coords,
                                                                  std::vector<std::size_t>* source);

VoxelTokenBatch voxelize_dynamic(const std::vector<LidarPoint>& points, const VolumeSpec& spec,
                                 const VoxelEmbedParams& params);

PatchTokenBatch embed_patches(const std::vector<Image>& images, std::size_t patch, const PatchEmbedParams& params);

/// Pixel targets for every patch, (Npatch_total, 3 P^2).
Tensor patchify(const std::vector<Image>& images, std::size_t patch);
/// Inverse of patchify.
std::vector<Image> unpatchify(std::span<const double> patches, std::size_t n_views, std::size_t grid_h,
                              std::size_t grid_w, std::size_t patch);

/// Exactly floor(ratio * n) entries true, chosen uniformly without
/// replacement from a generator seeded with `seed`.
std::vector<bool> make_mask_plan(std::size_t n, double ratio, std::uint64_t seed);
std::size_t mask_count(std::size_t n, double ratio);

}  // namespace volfuse
