// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/model.hpp"

#include <algorithm>

#include "volfuse/errors.hpp"
#include "volfuse/random.hpp"

namespace volfuse {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kRefStream = 0x5ca;
constexpr std::uint64_t kLidarMaskStream = 1;
constexpr std::uint64_t kCameraMaskStream = 2;
constexpr std::uint64_t kNegativeStream = 3;

void split_mask(const std::vector<bool>& mask, std::vector<std::size_t>& visible, std::vector<std::size_t>& masked) {
  for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? masked : visible).push_back(i);
}

}  // namespace

ModelShape model_shape_for(const Scene& scene, std::size_t patch) {
  if (scene.images.empty()) throw InputError("scene has no camera images");
  if (scene.images.size() != scene.cameras.size()) throw InputError("scene: one camera per image required");
  const int h = scene.images[0].height, w = scene.images[0].width;
  for (const auto& im : scene.images) {
    if (im.height != h || im.width != w) throw InputError("scene: images differ in size");
  }
  if (patch == 0 || h % static_cast<int>(patch) != 0 || w % static_cast<int>(patch) != 0) {
    throw InputError("scene: image size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  return {scene.images.size(), static_cast<std::size_t>(h) / patch, static_cast<std::size_t>(w) / patch};
}

ModelParams ModelParams::init(const RunConfig& cfg, const ModelShape& shape) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, kInitStream));
  const std::size_t c = cfg.width;
  ModelParams p;
  p.voxel_embed = VoxelEmbedParams::init(c, rng);
  p.patch_embed = PatchEmbedParams::init(cfg.patch_size, c, shape.n_views, rng,
                                         cfg.learned_patch_pos ? shape.grid_h * shape.grid_w : 0);
  p.lidar_encoder = EncoderParams::init(cfg.encoder_config(cfg.encoder_lidar), rng);
  p.camera_encoder = EncoderParams::init(cfg.encoder_config(cfg.encoder_camera), rng);
  p.sca = SCAParams::init(cfg.sca, cfg.effective_volume(), c, rng);
  p.mmim = MMIMParams::init(cfg.mmim, 2 * c, rng);
  p.voxel_decoder = VoxelDecoderParams::init(cfg.encoder_config(cfg.decoder_voxel), cfg.n_pts, rng);
  p.patch_decoder = PatchDecoderParams::init(cfg.encoder_config(cfg.decoder_image), cfg.patch_size, rng);
  return p;
}

ParamList ModelParams::named() const {
  ParamList out;
  voxel_embed.collect("voxel_embed", out);
  patch_embed.collect("patch_embed", out);
  lidar_encoder.collect("lidar_encoder", out);
  camera_encoder.collect("camera_encoder", out);
  sca.collect("sca", out);
  mmim.collect("mmim", out);
  voxel_decoder.collect("voxel_decoder", out);
  patch_decoder.collect("patch_decoder", out);
  return out;
}

Model::Model(const RunConfig& cfg, const ModelShape& shape) : Model(cfg, shape, ModelParams::init(cfg, shape)) {}

Model::Model(const RunConfig& cfg, const ModelShape& shape, ModelParams params)
    : cfg_(cfg), shape_(shape), volume_(cfg.effective_volume()), params_(std::move(params)) {
  cfg_.validate();
  volume_pos_ = sinusoid_3d(volume_.H(), volume_.W(), volume_.Z(), cfg_.width);
  if (!cfg_.learned_patch_pos) {
    const Tensor one = sinusoid_2d(shape_.grid_h, shape_.grid_w, cfg_.width);
    patch_pos_ = concat(std::vector<Tensor>(shape_.n_views, one), 0);
  }
}

const Model::RigGeometry& Model::geometry_for(const std::vector<CameraModel>& rig) const {
  for (const auto& g : rigs_) {
    if (g->rig == rig) return *g;
  }
  auto g = std::make_unique<RigGeometry>();
  g->rig = rig;
  g->sca = build_sca_geometry(volume_, rig, shape_.grid_h, shape_.grid_w, cfg_.sca.n_ref, mix_seed(cfg_.seed, kRefStream));
  g->plane = build_image_plane_map(volume_, rig, shape_.grid_h, shape_.grid_w);
  rigs_.push_back(std::move(g));
  return *rigs_.back();
}

ForwardResult Model::forward(const Scene& scene, std::uint64_t mask_key) const {
  if (model_shape_for(scene, cfg_.patch_size) != shape_) {
    throw InputError("forward: scene views or image size differ from the model's");
  }
  const RigGeometry& geo = geometry_for(scene.cameras);
  ForwardResult r;

  // LiDAR branch: encode visible voxels, place them in the volume.
  VoxelTokenBatch vox = voxelize_dynamic(scene.points, volume_, params_.voxel_embed);
  vox.mask = make_mask_plan(vox.size(), cfg_.mask_ratio_lidar, mix_seed(mask_key, kLidarMaskStream));
  std::vector<std::size_t> vis_v, masked_v;
  split_mask(vox.mask, vis_v, masked_v);
  std::vector<VolumeCoord> vis_coords;
  for (std::size_t i : vis_v) vis_coords.push_back(vox.coords[i]);
  const Tensor enc_v =
      encode(gather_rows(vox.features, vis_v), cfg_.encoder_config(cfg_.encoder_lidar), params_.lidar_encoder);
  const VolumeFeature f_v = scatter_lidar_to_volume(enc_v, vis_coords, volume_);

  // Camera branch: encode visible patches, lift to the volume.
  PatchTokenBatch pt = embed_patches(scene.images, cfg_.patch_size, params_.patch_embed);
  pt.mask = make_mask_plan(pt.size(), cfg_.mask_ratio_camera, mix_seed(mask_key, kCameraMaskStream));
  std::vector<std::size_t> vis_i, masked_i;
  split_mask(pt.mask, vis_i, masked_i);
  const Tensor enc_i =
      encode(gather_rows(pt.features, vis_i), cfg_.encoder_config(cfg_.encoder_camera), params_.camera_encoder);
  const ViewFeatures views{scatter_rows(enc_i, vis_i, pt.size()), pt.n_views, pt.grid_h, pt.grid_w};
  const VolumeFeature f_i = spatial_cross_attention(views, geo.sca, params_.sca, cfg_.sca, volume_);

  const auto [fused_v, fused_i] = mmim_fuse(f_v, f_i, params_.mmim, cfg_.mmim);

  // Voxel reconstruction at the masked cells plus sampled empty cells.
  r.voxel_mask = vox.mask;
  if (masked_v.empty()) {
    r.chamfer = Tensor::scalar(0.0);
    r.occupancy = Tensor::scalar(0.0);
  } else {
    std::vector<std::size_t> masked_flat, neg_flat;
    std::vector<std::vector<Point3>> gt_local;
    for (std::size_t i : masked_v) {
      const VolumeCoord c = vox.coords[i];
      r.masked_coords.push_back(c);
      r.masked_points.push_back(vox.points_per_voxel[i]);
      masked_flat.push_back(volume_.flat_index(c));
      const Point3 center = volume_cell_center(volume_, c);
      auto& local = gt_local.emplace_back();
      for (const auto& p : vox.points_per_voxel[i]) local.push_back(p - center);
    }
    std::vector<bool> occupied(volume_.cell_count(), false);
    for (const auto& c : vox.coords) occupied[volume_.flat_index(c)] = true;
    std::vector<std::size_t> empty;
    for (std::size_t f = 0; f < occupied.size(); ++f)
      if (!occupied[f]) empty.push_back(f);
    Rng neg_rng(mix_seed(mask_key, kNegativeStream));
    for (std::size_t k : sample_without_replacement(empty.size(), std::min(masked_v.size(), empty.size()), neg_rng))
      neg_flat.push_back(empty[k]);
    r.n_negatives = neg_flat.size();

    const auto tokens_at = [&](const std::vector<std::size_t>& flat) {
      std::vector<VolumeCoord> coords;
      for (std::size_t f : flat) coords.push_back(volume_.coord_of(f));
      return add(gather_voxel_tokens(fused_v, coords), gather_rows(volume_pos_, flat));
    };
    const Tensor negatives = neg_flat.empty() ? Tensor() : tokens_at(neg_flat);
    const VoxelPrediction pred = decode_voxels(tokens_at(masked_flat), negatives,
                                               cfg_.encoder_config(cfg_.decoder_voxel), params_.voxel_decoder,
                                               volume_.cell_size);
    r.predicted_points = pred.points;
    r.chamfer = voxel_chamfer_loss(pred.points, gt_local);
    std::vector<double> labels(masked_v.size(), 1.0);
    labels.resize(masked_v.size() + neg_flat.size(), 0.0);
    r.occupancy = occupancy_loss(pred.occupancy_logits, labels);
  }

  // Image reconstruction from the fused volume projected back to each view.
  const Tensor f_sp_i = project_volume_to_image_plane(fused_i, geo.plane);
  Tensor pos = patch_pos_;
  if (!pos.defined()) {
    std::vector<std::size_t> idx(pt.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % pt.per_view();
    pos = gather_rows(params_.patch_embed.pos_table, idx);
  }
  const Tensor dec_in = add(add(f_sp_i, pos), gather_rows(params_.patch_embed.view_embed, pt.view_index));
  r.predicted_pixels = decode_patches(dec_in, cfg_.encoder_config(cfg_.decoder_image), params_.patch_decoder).pixels;
  r.target_pixels = pt.targets;
  r.patch_mask = pt.mask;
  r.image = image_loss(r.predicted_pixels, pt.targets, pt.mask, cfg_.masked_only_img_loss);

  r.total = total_loss(voxel_loss(r.chamfer, r.occupancy), r.image, cfg_.w_voxel, cfg_.w_image);
  return r;
}

}  // namespace volfuse
