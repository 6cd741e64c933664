// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

#include "volfuse/geometry.hpp"
#include "volfuse/nn.hpp"

namespace volfuse {

/// Dense feature volume, data shaped (C, H, W, Z).
struct VolumeFeature {
  Tensor data;
  VolumeSpec spec;

  std::size_t channels() const { return data.dim(0); }
};

/// (C, H, W, Z) -> (HWZ, C), rows in flat-index order.
Tensor volume_tokens(const VolumeFeature& v);
VolumeFeature volume_from_tokens(const Tensor& tokens, const VolumeSpec& spec);

/// Writes each row of `features` at its cell; all other cells are zero.
VolumeFeature scatter_lidar_to_volume(const Tensor& features, const std::vector<VolumeCoord>& coords,
                                      const VolumeSpec& spec);
/// Exact cell lookup, (Ncoords, C).
Tensor gather_voxel_tokens(const VolumeFeature& volume, const std::vector<VolumeCoord>& coords);

// ---------------------------------------------------------------------------
// Spatial cross-attention (image features -> volume).

struct SCAConfig {
  std::size_t blocks = 2;
  std::size_t hidden = 192;  // value width, split across heads
  std::size_t n_ref = 4;
  std::size_t points = 4;  // K per (head, ref)
  std::size_t heads = 8;

  void validate() const;
};

/// Patch-feature grids for every view, stored as tokens
/// (n_views * grid_h * grid_w, C) in view-major, row-major order.
struct ViewFeatures {
  Tensor tokens;
  std::size_t n_views = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

/// Which (cell, reference point) pairs land in which view, and where on the
/// patch grid. Depends only on the volume, rig, grid and reference seed.
struct SCAGeometry {
  struct ViewPairs {
    std::vector<std::size_t> cell;
    std::vector<std::size_t> ref;
    std::vector<double> col;  // patch-grid units, node at patch centers
    std::vector<double> row;
  };
  std::size_t cells = 0;
  std::size_t n_ref = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<ViewPairs> views;
  std::vector<std::size_t> hit_count;  // |V_hit| per cell
};

SCAGeometry build_sca_geometry(const VolumeSpec& spec, const std::vector<CameraModel>& rig, std::size_t grid_h,
                               std::size_t grid_w, std::size_t n_ref, std::uint64_t ref_seed);

struct SCABlockParams {
  Linear offsets;  // (C, n_ref*M*K*2), zero-initialized
  Linear logits;   // (C, n_ref*M*K)
  Linear value;    // (C, hidden)
  Linear output;   // (hidden, C), no bias
  LayerNormParams norm;

  void collect(const std::string& prefix, ParamList& out) const;
};

struct SCAParams {
  Tensor query_table;  // (HWZ, C), learned part of Q^vol
  std::vector<SCABlockParams> blocks;

  static SCAParams init(const SCAConfig& cfg, const VolumeSpec& spec, std::size_t width, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Softmax-normalized sampling weights, (cells, n_ref, M, K).
Tensor sca_attention_weights(const Tensor& queries, const SCABlockParams& block, const SCAConfig& cfg);

/// One round of averaged deformable cross-attention, before residual and
/// normalization: (cells, C). Cells with no hit view are zero.
Tensor sca_attention(const Tensor& queries, const ViewFeatures& views, const SCAGeometry& geo,
                     const SCABlockParams& block, const SCAConfig& cfg);

/// Full stack: Q^vol = table + 3D sinusoid, then `blocks` rounds of
/// Q <- LN(Q + attention). Cells with empty V_hit output zero.
VolumeFeature spatial_cross_attention(const ViewFeatures& views, const SCAGeometry& geo, const SCAParams& params,
                                      const SCAConfig& cfg, const VolumeSpec& spec);

// ---------------------------------------------------------------------------
// Multi-modal interaction (deformable self-attention over the joint volume).

struct MMIMConfig {
  std::size_t blocks = 3;  // L
  std::size_t heads = 8;
  std::size_t points = 4;  // K
  std::size_t hidden = 768;

  void validate(std::size_t joint_width) const;
};

struct MMIMBlockParams {
  Linear value;    // W'_m stacked over heads, (2C, 2C)
  Linear offsets;  // (2C, M*K*3), zero-initialized
  Linear logits;   // (2C, M*K)
  Linear output;   // W_m stacked over heads, (2C, 2C)
  LayerNormParams norm1;
  Linear fc1;
  Linear fc2;
  LayerNormParams norm2;

  void collect(const std::string& prefix, ParamList& out) const;
};

struct MMIMParams {
  std::vector<MMIMBlockParams> blocks;

  static MMIMParams init(const MMIMConfig& cfg, std::size_t joint_width, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// (HWZ, M, K), each (query, head) row sums to 1.
Tensor mmim_attention_weights(const Tensor& tokens, const MMIMBlockParams& block, const MMIMConfig& cfg);

/// Deformable self-attention of the joint tokens (HWZ, 2C) before residual.
Tensor mmim_attention(const Tensor& tokens, const MMIMBlockParams& block, const MMIMConfig& cfg,
                      const VolumeSpec& spec);

/// Concatenate along channels, run L blocks, split back.
std::pair<VolumeFeature, VolumeFeature> mmim_fuse(const VolumeFeature& f_v, const VolumeFeature& f_i,
                                                  const MMIMParams& params, const MMIMConfig& cfg);

// ---------------------------------------------------------------------------
// Back-projection of the fused image volume onto each view's patch grid.

struct ImagePlaneMap {
  std::size_t n_views = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::size_t> cell;    // contributor cell, flat index
  std::vector<std::size_t> target;  // view * grid_h * grid_w + patch
  std::vector<double> inv_count;    // per target patch; 0 when empty
};

ImagePlaneMap build_image_plane_map(const VolumeSpec& spec, const std::vector<CameraModel>& rig, std::size_t grid_h,
                                    std::size_t grid_w);

/// Mean of the cell features landing in each patch, zero for patches with no
/// contributor; (n_views * grid_h * grid_w, C).
Tensor project_volume_to_image_plane(const VolumeFeature& f_i, const ImagePlaneMap& map);
Tensor project_volume_to_image_plane(const VolumeFeature& f_i, const std::vector<CameraModel>& rig,
                                     std::size_t grid_h, std::size_t grid_w);

}  // namespace volfuse
