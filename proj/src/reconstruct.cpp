// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/reconstruct.hpp"

#include "volfuse/errors.hpp"

namespace volfuse {

VoxelDecoderParams VoxelDecoderParams::init(const EncoderConfig& cfg, std::size_t n_pts, Rng& rng) {
  if (n_pts == 0) throw ConfigError("voxel decoder: n_pts must be >= 1");
  VoxelDecoderParams p;
  p.blocks = EncoderParams::init(cfg, rng);
  p.point_head = Linear::init(cfg.width, n_pts * 3, rng);
  p.occ_head = Linear::init(cfg.width, 1, rng);
  return p;
}

void VoxelDecoderParams::collect(const std::string& prefix, ParamList& out) const {
  blocks.collect(prefix, out);
  point_head.collect(prefix + ".point_head", out);
  occ_head.collect(prefix + ".occ_head", out);
}

PatchDecoderParams PatchDecoderParams::init(const EncoderConfig& cfg, std::size_t patch, Rng& rng) {
  PatchDecoderParams p;
  p.blocks = EncoderParams::init(cfg, rng);
  p.pixel_head = Linear::init(cfg.width, 3 * patch * patch, rng);
  return p;
}

void PatchDecoderParams::collect(const std::string& prefix, ParamList& out) const {
  blocks.collect(prefix, out);
  pixel_head.collect(prefix + ".pixel_head", out);
}

VoxelPrediction decode_voxels(const Tensor& f_sp_v, const Tensor& negatives, const EncoderConfig& cfg,
                              const VoxelDecoderParams& params, const std::array<double, 3>& cell_size) {
  const std::size_t n_mask = f_sp_v.dim(0);
  if (n_mask == 0) throw InputError("decode_voxels: at least one masked voxel is required");
  const bool has_neg = negatives.defined() && negatives.dim(0) > 0;
  const Tensor tokens = encode(has_neg ? concat({f_sp_v, negatives}, 0) : f_sp_v, cfg, params.blocks);
  const std::size_t n_pts = params.n_pts();
  VoxelPrediction pred;
  const Tensor head = params.point_head(slice(tokens, 0, 0, n_mask));
  pred.offsets = reshape(scale(tanh(head), 0.5), {n_mask, n_pts, 3});
  pred.points = mul(pred.offsets, Tensor::from({1, 1, 3}, {cell_size[0], cell_size[1], cell_size[2]}));
  pred.occupancy_logits = reshape(params.occ_head(tokens), {tokens.dim(0)});
  return pred;
}

PatchPrediction decode_patches(const Tensor& f_sp_i, const EncoderConfig& cfg, const PatchDecoderParams& params) {
  return {params.pixel_head(encode(f_sp_i, cfg, params.blocks))};
}

Tensor chamfer_loss(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != 3 || b.dim(1) != 3) {
    throw InputError("chamfer_loss: expects (n, 3) and (m, 3) point sets");
  }
  const std::size_t n = a.dim(0), m = b.dim(0);
  if (n == 0 || m == 0) throw InputError("chamfer_loss: point sets must be non-empty");
  const Tensor diff = sub(reshape(a, {n, 1, 3}), reshape(b, {1, m, 3}));
  const Tensor d2 = sum_axis(mul(diff, diff), 2);  // (n, m)
  return add(mean(min_axis(d2, 1)), mean(min_axis(d2, 0)));
}

Tensor voxel_chamfer_loss(const Tensor& pred_points, const std::vector<std::vector<Point3>>& gt_cell_local) {
  const std::size_t n_mask = pred_points.dim(0), n_pts = pred_points.dim(1);
  if (gt_cell_local.size() != n_mask) throw InputError("voxel_chamfer_loss: one ground-truth set per voxel required");
  Tensor total;
  for (std::size_t v = 0; v < n_mask; ++v) {
    const auto& gt = gt_cell_local[v];
    if (gt.empty()) throw InputError("voxel_chamfer_loss: masked voxel " + std::to_string(v) + " has no points");
    std::vector<double> flat;
    flat.reserve(gt.size() * 3);
    for (const auto& p : gt) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
    const Tensor b = Tensor::from({gt.size(), 3}, std::move(flat));
    const Tensor a = reshape(slice(pred_points, 0, v, 1), {n_pts, 3});
    const Tensor cd = chamfer_loss(a, b);
    total = total.defined() ? add(total, cd) : cd;
  }
  return scale(total, 1.0 / static_cast<double>(n_mask));
}

Tensor occupancy_loss(const Tensor& logits, const std::vector<double>& labels) {
  if (logits.numel() != labels.size()) throw InputError("occupancy_loss: one label per logit required");
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw InputError("occupancy_loss: labels must be 0 or 1");
  }
  const Tensor x = reshape(logits, {labels.size()});
  return mean(sub(softplus(x), mul(Tensor::from({labels.size()}, labels), x)));
}

Tensor voxel_loss(const Tensor& chamfer, const Tensor& occupancy) { return add(chamfer, occupancy); }

Tensor image_loss(const Tensor& pred, const Tensor& targets, const std::vector<bool>& mask, bool masked_only) {
  if (pred.shape() != targets.shape()) throw InputError("image_loss: prediction and target shapes differ");
  if (mask.size() != pred.dim(0)) throw InputError("image_loss: one mask entry per patch required");
  if (!masked_only) {
    const Tensor d = sub(pred, targets);
    return mean(mul(d, d));
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(i);
  if (rows.empty()) throw InputError("image_loss: no masked patches");
  const Tensor d = sub(gather_rows(pred, rows), gather_rows(targets, rows));
  return mean(mul(d, d));
}

Tensor total_loss(const Tensor& voxel, const Tensor& image, double w_voxel, double w_image) {
  return add(scale(voxel, w_voxel), scale(image, w_image));
}

}  // namespace volfuse
