// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "volfuse/config.hpp"
#include "volfuse/fusion.hpp"
#include "volfuse/reconstruct.hpp"
#include "volfuse/scenegen.hpp"
#include "volfuse/tokenizer.hpp"

namespace volfuse {

/// Sensor layout the parameters are sized for.
struct ModelShape {
  std::size_t n_views = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  bool operator==(const ModelShape&) const = default;
};

/// Throws InputError when the images are not all the same size or are not
/// divisible into patches.
ModelShape model_shape_for(const Scene& scene, std::size_t patch);

struct ModelParams {
  VoxelEmbedParams voxel_embed;
  PatchEmbedParams patch_embed;
  EncoderParams lidar_encoder;
  EncoderParams camera_encoder;
  SCAParams sca;
  MMIMParams mmim;
  VoxelDecoderParams voxel_decoder;
  PatchDecoderParams patch_decoder;

  static ModelParams init(const RunConfig& cfg, const ModelShape& shape);
  /// Every trainable tensor, in a fixed order.
  ParamList named() const;
};

struct ForwardResult {
  Tensor total;
  Tensor chamfer;    // zero when no voxel is masked
  Tensor occupancy;  // zero when no voxel is masked
  Tensor image;

  std::vector<bool> voxel_mask;
  std::vector<bool> patch_mask;
  std::vector<VolumeCoord> masked_coords;
  std::vector<std::vector<Point3>> masked_points;  // ego frame, per masked voxel
  std::size_t n_negatives = 0;
  Tensor predicted_points;  // (Nmask, n_pts, 3) cell-local meters; undefined when nothing is masked
  Tensor predicted_pixels;  // (Npatch, 3 P^2)
  Tensor target_pixels;
};

class Model {
 public:
  Model(const RunConfig& cfg, const ModelShape& shape);
  Model(const RunConfig& cfg, const ModelShape& shape, ModelParams params);

  const RunConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }
  const VolumeSpec& volume() const { return volume_; }
  const ModelParams& params() const { return params_; }
  ParamList named_params() const { return params_.named(); }

  /// Masking, fusion, decoding and losses for one scene. Masks and negative
  /// cells are drawn from streams derived from `mask_key`.
  ForwardResult forward(const Scene& scene, std::uint64_t mask_key) const;

 private:
  struct RigGeometry {
    std::vector<CameraModel> rig;
    SCAGeometry sca;
    ImagePlaneMap plane;
  };
  const RigGeometry& geometry_for(const std::vector<CameraModel>& rig) const;

  RunConfig cfg_;
  ModelShape shape_;
  VolumeSpec volume_;
  ModelParams params_;
  Tensor volume_pos_;  // (HWZ, C)
  Tensor patch_pos_;   // fixed (Npatch, C) encoding; undefined with a learned table
  mutable std::vector<std::unique_ptr<RigGeometry>> rigs_;
};

}  // namespace volfuse
