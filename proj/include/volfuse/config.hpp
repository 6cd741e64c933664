// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "volfuse/encoder.hpp"
#include "volfuse/fusion.hpp"
#include "volfuse/geometry.hpp"

namespace volfuse {

enum class InteractionSpace { kVolume3D, kBev };

std::string to_string(InteractionSpace s);
InteractionSpace interaction_space_from_string(const std::string& s);

struct OptimizerConfig {
  double base_lr = 1e-3;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 30;
};

/// Depth/heads/MLP ratio of a transformer stack; its width is RunConfig::width.
struct StackConfig {
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t n_train_scenes = 1;
  std::size_t n_val_scenes = 0;
  VolumeSpec volume;
  InteractionSpace interaction_space = InteractionSpace::kVolume3D;
  double mask_ratio_lidar = 0.70;
  double mask_ratio_camera = 0.75;
  std::size_t patch_size = 8;
  std::size_t width = 192;
  bool learned_patch_pos = false;
  StackConfig encoder_lidar;
  StackConfig encoder_camera;
  SCAConfig sca;
  MMIMConfig mmim;
  StackConfig decoder_voxel;
  StackConfig decoder_image;
  std::size_t n_pts = 16;
  double w_voxel = 1.0;
  double w_image = 1.0;
  bool masked_only_img_loss = true;
  OptimizerConfig optimizer;
  std::size_t total_steps = 300;
  std::size_t batch_size = 1;

  /// The volume actually used: in BEV mode Z collapses to one cell spanning
  /// the full height.
  VolumeSpec effective_volume() const;
  EncoderConfig encoder_config(const StackConfig& s) const { return {s.depth, width, s.heads, s.mlp_ratio}; }
  void validate() const;
};

/// Desk-scale defaults: 20 x 20 x 2 grid, C = 192, 2 SCA blocks, lr 1e-3.
RunConfig desk_config();
/// 200 x 200 x 2 grid, 6 SCA blocks of width 256, lr 5e-4, warmup 1000.
RunConfig full_scale_config();

/// Learning-rate presets: "desk" 1e-3, "supplement" 5e-4, "main-text" 2.5e-5.
void apply_lr_preset(RunConfig& cfg, const std::string& preset);

std::string config_to_json(const RunConfig& cfg);
/// Fields missing from the document keep the values of `base`. Unknown keys,
/// wrong types and invalid values raise ConfigError naming the field.
RunConfig config_from_json(const std::string& text, const RunConfig& base = desk_config());
RunConfig load_config_file(const std::string& path, const RunConfig& base = desk_config());

}  // namespace volfuse
