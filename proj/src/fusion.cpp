// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "volfuse/errors.hpp"
#include "volfuse/tokenizer.hpp"

namespace volfuse {

Tensor volume_tokens(const VolumeFeature& v) {
  const std::size_t c = v.data.dim(0);
  return reshape(permute(v.data, {1, 2, 3, 0}), {v.spec.cell_count(), c});
}

VolumeFeature volume_from_tokens(const Tensor& tokens, const VolumeSpec& spec) {
  if (tokens.rank() != 2 || tokens.dim(0) != spec.cell_count()) {
    throw InputError("volume_from_tokens: expected (" + std::to_string(spec.cell_count()) + ", C) tokens, got " +
                     shape_str(tokens.shape()));
  }
  const Tensor grid = reshape(tokens, {spec.H(), spec.W(), spec.Z(), tokens.dim(1)});
  return {permute(grid, {3, 0, 1, 2}), spec};
}

namespace {

std::vector<std::size_t> flat_indices(const VolumeSpec& spec, const std::vector<VolumeCoord>& coords) {
  std::vector<std::size_t> idx;
  idx.reserve(coords.size());
  for (const auto& c : coords) {
    if (c.ix >= spec.H() || c.iy >= spec.W() || c.iz >= spec.Z()) throw InputError("volume coordinate out of range");
    idx.push_back(spec.flat_index(c));
  }
  return idx;
}

Tensor column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor::from({n, 1}, std::move(values));
}

}  // namespace

VolumeFeature scatter_lidar_to_volume(const Tensor& features, const std::vector<VolumeCoord>& coords,
                                      const VolumeSpec& spec) {
  if (features.rank() != 2 || features.dim(0) != coords.size()) {
    throw InputError("scatter_lidar_to_volume: one feature row per coordinate required");
  }
  const auto idx = flat_indices(spec, coords);
  return volume_from_tokens(scatter_rows(features, idx, spec.cell_count()), spec);
}

Tensor gather_voxel_tokens(const VolumeFeature& volume, const std::vector<VolumeCoord>& coords) {
  const auto idx = flat_indices(volume.spec, coords);
  return gather_rows(volume_tokens(volume), idx);
}

// ---------------------------------------------------------------------------

void SCAConfig::validate() const {
  if (blocks == 0 || hidden == 0 || n_ref == 0 || points == 0 || heads == 0) {
    throw ConfigError("sca: blocks, hidden, n_ref, points and heads must all be >= 1");
  }
  if (hidden % heads != 0) throw ConfigError("sca: hidden width must be divisible by heads");
}

SCAGeometry build_sca_geometry(const VolumeSpec& spec, const std::vector<CameraModel>& rig, std::size_t grid_h,
                               std::size_t grid_w, std::size_t n_ref, std::uint64_t ref_seed) {
  spec.validate();
  SCAGeometry geo;
  geo.cells = spec.cell_count();
  geo.n_ref = n_ref;
  geo.grid_h = grid_h;
  geo.grid_w = grid_w;
  geo.views.resize(rig.size());
  geo.hit_count.assign(geo.cells, 0);
  std::vector<char> seen(rig.size());
  for (std::size_t flat = 0; flat < geo.cells; ++flat) {
    std::fill(seen.begin(), seen.end(), 0);
    const auto refs = reference_points(spec, spec.coord_of(flat), n_ref, ref_seed);
    for (std::size_t j = 0; j < refs.size(); ++j) {
      for (std::size_t v : hit_views(rig, refs[j])) {
        const auto proj = project_point(rig[v], refs[j]);
        auto& pairs = geo.views[v];
        pairs.cell.push_back(flat);
        pairs.ref.push_back(j);
        pairs.col.push_back(proj.u * static_cast<double>(grid_w) / rig[v].width - 0.5);
        pairs.row.push_back(proj.v * static_cast<double>(grid_h) / rig[v].height - 0.5);
        seen[v] = 1;
      }
    }
    geo.hit_count[flat] = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
  }
  return geo;
}

void SCABlockParams::collect(const std::string& prefix, ParamList& out) const {
  offsets.collect(prefix + ".offsets", out);
  logits.collect(prefix + ".logits", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
  norm.collect(prefix + ".norm", out);
}

SCAParams SCAParams::init(const SCAConfig& cfg, const VolumeSpec& spec, std::size_t width, Rng& rng) {
  cfg.validate();
  SCAParams p;
  p.query_table = uniform_param({spec.cell_count(), width}, 0.02, rng);
  const std::size_t samples = cfg.n_ref * cfg.heads * cfg.points;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    SCABlockParams blk;
    blk.offsets = Linear::zeros(width, samples * 2);
    blk.logits = Linear::init(width, samples, rng);
    blk.value = Linear::init(width, cfg.hidden, rng);
    blk.output = Linear::init(cfg.hidden, width, rng, false);
    blk.norm = LayerNormParams::init(width);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

void SCAParams::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".query_table", query_table);
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".block" + std::to_string(b), out);
}

Tensor sca_attention_weights(const Tensor& queries, const SCABlockParams& block, const SCAConfig& cfg) {
  const Tensor logits = reshape(block.logits(queries), {queries.dim(0), cfg.n_ref, cfg.heads, cfg.points});
  return softmax(logits, 3);
}

Tensor sca_attention(const Tensor& queries, const ViewFeatures& views, const SCAGeometry& geo,
                     const SCABlockParams& block, const SCAConfig& cfg) {
  const std::size_t cells = geo.cells, m = cfg.heads, k = cfg.points, r = cfg.n_ref, hidden = cfg.hidden;
  if (queries.dim(0) != cells || geo.n_ref != r) throw InputError("sca: queries or geometry do not match the config");
  if (views.n_views != geo.views.size() || views.grid_h != geo.grid_h || views.grid_w != geo.grid_w) {
    throw InputError("sca: view features do not match the geometry");
  }
  const Tensor offsets = reshape(block.offsets(queries), {cells * r, m * k * 2});
  const Tensor weights = reshape(sca_attention_weights(queries, block, cfg), {cells * r, m * k});
  const Tensor values = block.value(views.tokens);
  const std::size_t per_view = views.grid_h * views.grid_w;

  Tensor acc;
  for (std::size_t v = 0; v < views.n_views; ++v) {
    const auto& pairs = geo.views[v];
    const std::size_t n = pairs.cell.size();
    if (n == 0) continue;
    const Tensor grid =
        permute(reshape(slice(values, 0, v * per_view, per_view), {views.grid_h, views.grid_w, hidden}), {2, 0, 1});
    std::vector<std::size_t> idx(n);
    std::vector<double> base(n * k * m * 2);
    for (std::size_t p = 0; p < n; ++p) {
      idx[p] = pairs.cell[p] * r + pairs.ref[p];
      for (std::size_t s = 0; s < k * m; ++s) {
        base[(p * k * m + s) * 2] = pairs.col[p];
        base[(p * k * m + s) * 2 + 1] = pairs.row[p];
      }
    }
    // (n, M, K, 2) -> (n*K, M, 2) so each sampled row holds one point per head.
    const Tensor off = reshape(permute(reshape(gather_rows(offsets, idx), {n, m, k, 2}), {0, 2, 1, 3}), {n * k, m, 2});
    const Tensor loc = add(off, Tensor::from({n * k, m, 2}, std::move(base)));
    const Tensor sampled = sample_bilinear_2d(grid, loc);  // (n*K, M, d)
    const Tensor w = reshape(permute(reshape(gather_rows(weights, idx), {n, m, k}), {0, 2, 1}), {n * k, m, 1});
    const Tensor contrib = sum_axis(reshape(mul(sampled, w), {n, k, hidden}), 1);
    const Tensor into_cells = scatter_rows(contrib, pairs.cell, cells);
    acc = acc.defined() ? add(acc, into_cells) : into_cells;
  }
  if (!acc.defined()) acc = Tensor::zeros({cells, hidden});
  std::vector<double> inv(cells);
  for (std::size_t c = 0; c < cells; ++c) inv[c] = geo.hit_count[c] ? 1.0 / static_cast<double>(geo.hit_count[c]) : 0.0;
  return block.output(mul(acc, column(std::move(inv))));
}

VolumeFeature spatial_cross_attention(const ViewFeatures& views, const SCAGeometry& geo, const SCAParams& params,
                                      const SCAConfig& cfg, const VolumeSpec& spec) {
  const std::size_t width = params.query_table.dim(1);
  Tensor q = add(params.query_table, sinusoid_3d(spec.H(), spec.W(), spec.Z(), width));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto& blk = params.blocks.at(b);
    q = blk.norm(add(q, sca_attention(q, views, geo, blk, cfg)));
  }
  std::vector<double> hit(geo.cells);
  for (std::size_t c = 0; c < geo.cells; ++c) hit[c] = geo.hit_count[c] ? 1.0 : 0.0;
  return volume_from_tokens(mul(q, column(std::move(hit))), spec);
}

// ---------------------------------------------------------------------------

void MMIMConfig::validate(std::size_t joint_width) const {
  if (heads == 0 || points == 0 || hidden == 0) throw ConfigError("mmim: heads, points and hidden must be >= 1");
  if (joint_width % heads != 0) throw ConfigError("mmim: joint width 2C must be divisible by heads");
}

void MMIMBlockParams::collect(const std::string& prefix, ParamList& out) const {
  value.collect(prefix + ".value", out);
  offsets.collect(prefix + ".offsets", out);
  logits.collect(prefix + ".logits", out);
  output.collect(prefix + ".output", out);
  norm1.collect(prefix + ".norm1", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  norm2.collect(prefix + ".norm2", out);
}

MMIMParams MMIMParams::init(const MMIMConfig& cfg, std::size_t joint_width, Rng& rng) {
  cfg.validate(joint_width);
  MMIMParams p;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    MMIMBlockParams blk;
    blk.value = Linear::init(joint_width, joint_width, rng);
    blk.offsets = Linear::zeros(joint_width, cfg.heads * cfg.points * 3);
    blk.logits = Linear::init(joint_width, cfg.heads * cfg.points, rng);
    blk.output = Linear::init(joint_width, joint_width, rng);
    blk.norm1 = LayerNormParams::init(joint_width);
    blk.fc1 = Linear::init(joint_width, cfg.hidden, rng);
    blk.fc2 = Linear::init(cfg.hidden, joint_width, rng);
    blk.norm2 = LayerNormParams::init(joint_width);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

void MMIMParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".block" + std::to_string(b), out);
}

Tensor mmim_attention_weights(const Tensor& tokens, const MMIMBlockParams& block, const MMIMConfig& cfg) {
  return softmax(reshape(block.logits(tokens), {tokens.dim(0), cfg.heads, cfg.points}), 2);
}

Tensor mmim_attention(const Tensor& tokens, const MMIMBlockParams& block, const MMIMConfig& cfg,
                      const VolumeSpec& spec) {
  const std::size_t n = tokens.dim(0), joint = tokens.dim(1), m = cfg.heads, k = cfg.points;
  if (n != spec.cell_count()) throw InputError("mmim: token count does not match the volume");
  const Tensor volume = reshape(transpose(block.value(tokens)), {joint, spec.H(), spec.W(), spec.Z()});
  std::vector<double> base(n * k * m * 3);
  for (std::size_t t = 0; t < n; ++t) {
    const auto c = spec.coord_of(t);
    for (std::size_t s = 0; s < k * m; ++s) {
      double* b = base.data() + (t * k * m + s) * 3;
      b[0] = static_cast<double>(c.ix);
      b[1] = static_cast<double>(c.iy);
      b[2] = static_cast<double>(c.iz);
    }
  }
  const Tensor off = reshape(permute(reshape(block.offsets(tokens), {n, m, k, 3}), {0, 2, 1, 3}), {n * k, m, 3});
  const Tensor sampled = sample_trilinear_3d(volume, add(off, Tensor::from({n * k, m, 3}, std::move(base))));
  const Tensor w = reshape(permute(mmim_attention_weights(tokens, block, cfg), {0, 2, 1}), {n * k, m, 1});
  return block.output(sum_axis(reshape(mul(sampled, w), {n, k, joint}), 1));
}

std::pair<VolumeFeature, VolumeFeature> mmim_fuse(const VolumeFeature& f_v, const VolumeFeature& f_i,
                                                  const MMIMParams& params, const MMIMConfig& cfg) {
  if (!(f_v.spec == f_i.spec)) throw InputError("mmim: volume specs differ");
  if (f_v.data.shape() != f_i.data.shape()) throw InputError("mmim: volume shapes differ");
  const std::size_t c = f_v.channels();
  cfg.validate(2 * c);
  Tensor x = concat({volume_tokens(f_v), volume_tokens(f_i)}, 1);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto& blk = params.blocks.at(b);
    x = blk.norm1(add(x, mmim_attention(x, blk, cfg, f_v.spec)));
    x = blk.norm2(add(x, blk.fc2(gelu(blk.fc1(x)))));
  }
  return {volume_from_tokens(slice(x, 1, 0, c), f_v.spec), volume_from_tokens(slice(x, 1, c, c), f_v.spec)};
}

// ---------------------------------------------------------------------------

ImagePlaneMap build_image_plane_map(const VolumeSpec& spec, const std::vector<CameraModel>& rig, std::size_t grid_h,
                                    std::size_t grid_w) {
  ImagePlaneMap map;
  map.n_views = rig.size();
  map.grid_h = grid_h;
  map.grid_w = grid_w;
  const std::size_t per_view = grid_h * grid_w;
  std::vector<double> count(rig.size() * per_view, 0.0);
  for (std::size_t flat = 0; flat < spec.cell_count(); ++flat) {
    const Point3 center = volume_cell_center(spec, spec.coord_of(flat));
    for (std::size_t v : hit_views(rig, center)) {
      const auto proj = project_point(rig[v], center);
      const auto pc = std::min<std::size_t>(grid_w - 1, static_cast<std::size_t>(proj.u * grid_w / rig[v].width));
      const auto pr = std::min<std::size_t>(grid_h - 1, static_cast<std::size_t>(proj.v * grid_h / rig[v].height));
      const std::size_t target = v * per_view + pr * grid_w + pc;
      map.cell.push_back(flat);
      map.target.push_back(target);
      count[target] += 1.0;
    }
  }
  map.inv_count.resize(count.size());
  for (std::size_t i = 0; i < count.size(); ++i) map.inv_count[i] = count[i] > 0.0 ? 1.0 / count[i] : 0.0;
  return map;
}

Tensor project_volume_to_image_plane(const VolumeFeature& f_i, const ImagePlaneMap& map) {
  const std::size_t total = map.n_views * map.grid_h * map.grid_w;
  const Tensor summed = scatter_rows(gather_rows(volume_tokens(f_i), map.cell), map.target, total);
  return mul(summed, column(map.inv_count));
}

Tensor project_volume_to_image_plane(const VolumeFeature& f_i, const std::vector<CameraModel>& rig,
                                     std::size_t grid_h, std::size_t grid_w) {
  return project_volume_to_image_plane(f_i, build_image_plane_map(f_i.spec, rig, grid_h, grid_w));
}

}  // namespace volfuse
