// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "volfuse/encoder.hpp"
#include "volfuse/geometry.hpp"

namespace volfuse {

struct VoxelDecoderParams {
  EncoderParams blocks;
  Linear point_head;  // (C, n_pts*3)
  Linear occ_head;    // (C, 1)

  static VoxelDecoderParams init(const EncoderConfig& cfg, std::size_t n_pts, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t n_pts() const { return point_head.out() / 3; }
};

struct PatchDecoderParams {
  EncoderParams blocks;
  Linear pixel_head;  // (C, 3 P^2)

  static PatchDecoderParams init(const EncoderConfig& cfg, std::size_t patch, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct VoxelPrediction {
  Tensor offsets;           // (Nmask, n_pts, 3) in [-0.5, 0.5], cell units
  Tensor points;            // offsets scaled by cell size: cell-local meters
  Tensor occupancy_logits;  // (Nmask + Nneg,)
};

struct PatchPrediction {
  Tensor pixels;  // (Npatch_total, 3 P^2)
};

/// Decoder blocks over [masked; negatives], then the point head on the first
/// Nmask rows and the occupancy head on every row. `negatives` may have zero
/// rows or be undefined.
VoxelPrediction decode_voxels(const Tensor& f_sp_v, const Tensor& negatives, const EncoderConfig& cfg,
                              const VoxelDecoderParams& params, const std::array<double, 3>& cell_size);

PatchPrediction decode_patches(const Tensor& f_sp_i, const EncoderConfig& cfg, const PatchDecoderParams& params);

/// mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2 over A (n, 3) and B (m, 3).
Tensor chamfer_loss(const Tensor& a, const Tensor& b);

/// Chamfer per masked voxel between predicted points and the voxel's source
/// points (both relative to the cell center), averaged over voxels.
Tensor voxel_chamfer_loss(const Tensor& pred_points, const std::vector<std::vector<Point3>>& gt_cell_local);

/// Mean binary cross entropy with logits: mean(softplus(x) - y x).
Tensor occupancy_loss(const Tensor& logits, const std::vector<double>& labels);

Tensor voxel_loss(const Tensor& chamfer, const Tensor& occupancy);

/// MSE over the masked rows (or every row when masked_only is false).
Tensor image_loss(const Tensor& pred, const Tensor& targets, const std::vector<bool>& mask, bool masked_only = true);

Tensor total_loss(const Tensor& voxel, const Tensor& image, double w_voxel, double w_image);

}  // namespace volfuse
