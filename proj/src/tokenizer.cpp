// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "volfuse/errors.hpp"

namespace volfuse {

VoxelEmbedParams VoxelEmbedParams::init(std::size_t width, Rng& rng) {
  return {Linear::init(kVoxelFeatureDim, width, rng)};
}

void VoxelEmbedParams::collect(const std::string& prefix, ParamList& out) const { embed.collect(prefix + ".embed", out); }

PatchEmbedParams PatchEmbedParams::init(std::size_t patch, std::size_t width, std::size_t n_views, Rng& rng,
                                        std::size_t learned_pos_tokens) {
  PatchEmbedParams p;
  p.embed = Linear::init(3 * patch * patch, width, rng);
  p.view_embed = uniform_param({n_views, width}, 0.02, rng);
  if (learned_pos_tokens > 0) p.pos_table = uniform_param({learned_pos_tokens, width}, 0.02, rng);
  return p;
}

void PatchEmbedParams::collect(const std::string& prefix, ParamList& out) const {
  embed.collect(prefix + ".embed", out);
  out.emplace_back(prefix + ".view_embed", view_embed);
  if (pos_table.defined()) out.emplace_back(prefix + ".pos_table", pos_table);
}

namespace {

// Writes sin/cos pairs for one coordinate into channels [offset, offset+dim).
void encode_axis(double pos, std::size_t dim, double* out) {
  const std::size_t pairs = dim / 2;
  for (std::size_t i = 0; i < pairs; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(pairs));
    out[2 * i] = std::sin(pos * freq);
    out[2 * i + 1] = std::cos(pos * freq);
  }
}

}  // namespace

Tensor sinusoid_2d(std::size_t rows, std::size_t cols, std::size_t width) {
  const std::size_t per_axis = 2 * (width / 4);
  std::vector<double> data(rows * cols * width, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double* row = data.data() + (r * cols + c) * width;
      encode_axis(static_cast<double>(r), per_axis, row);
      encode_axis(static_cast<double>(c), per_axis, row + per_axis);
    }
  }
  return Tensor::from({rows * cols, width}, std::move(data));
}

Tensor sinusoid_3d(std::size_t h, std::size_t w, std::size_t z, std::size_t width) {
  const std::size_t per_axis = 2 * (width / 6);
  std::vector<double> data(h * w * z * width, 0.0);
  for (std::size_t ix = 0; ix < h; ++ix) {
    for (std::size_t iy = 0; iy < w; ++iy) {
      for (std::size_t iz = 0; iz < z; ++iz) {
        double* row = data.data() + ((ix * w + iy) * z + iz) * width;
        encode_axis(static_cast<double>(ix), per_axis, row);
        encode_axis(static_cast<double>(iy), per_axis, row + per_axis);
        encode_axis(static_cast<double>(iz), per_axis, row + 2 * per_axis);
      }
    }
  }
  return Tensor::from({h * w * z, width}, std::move(data));
}

std::vector<std::array<double, kVoxelFeatureDim>> decorate_points(const std::vector<LidarPoint>& points,
                                                                  const VolumeSpec& spec,
                                                                  std::vector<std::size_t>* voxel_of_point,
                                                                  std::vector<VolumeCoord>* coords,
                                                                  std::vector<std::size_t>* source) {
  // Group in-range points by cell, cells ordered by flat index.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (auto c = point_to_volume_coord(spec, Point3(p[0], p[1], p[2]))) groups[spec.flat_index(*c)].push_back(i);
  }
  if (groups.empty()) throw InputError("voxelize_dynamic: no points inside the perception range");

  const std::array<double, 3> lo{spec.x_range[0], spec.y_range[0], spec.z_range[0]};
  const std::array<double, 3> span{spec.x_range[1] - lo[0], spec.y_range[1] - lo[1], spec.z_range[1] - lo[2]};
  std::vector<std::array<double, kVoxelFeatureDim>> out;
  voxel_of_point->clear();
  coords->clear();
  source->clear();
  for (const auto& [flat, members] : groups) {
    const VolumeCoord c = spec.coord_of(flat);
    const Point3 center = volume_cell_center(spec, c);
    Point3 mean = Point3::Zero();
    for (std::size_t i : members) mean += Point3(points[i][0], points[i][1], points[i][2]);
    mean /= static_cast<double>(members.size());
    for (std::size_t i : members) {
      const auto& p = points[i];
      std::array<double, kVoxelFeatureDim> f{};
      for (int a = 0; a < 3; ++a) {
        f[a] = 2.0 * (p[a] - lo[a]) / span[a] - 1.0;
        f[4 + a] = (p[a] - mean(a)) / spec.cell_size[a];
        f[7 + a] = (p[a] - center(a)) / spec.cell_size[a];
      }
      f[3] = p[3];
      out.push_back(f);
      voxel_of_point->push_back(coords->size());
      source->push_back(i);
    }
    coords->push_back(c);
  }
  return out;
}

VoxelTokenBatch voxelize_dynamic(const std::vector<LidarPoint>& points, const VolumeSpec& spec,
                                 const VoxelEmbedParams& params) {
  spec.validate();
  VoxelTokenBatch batch;
  std::vector<std::size_t> voxel_of_point, source;
  const auto deco = decorate_points(points, spec, &voxel_of_point, &batch.coords, &source);
  const std::size_t n_vox = batch.coords.size();

  std::vector<double> flat;
  flat.reserve(deco.size() * kVoxelFeatureDim);
  for (const auto& f : deco) flat.insert(flat.end(), f.begin(), f.end());
  const Tensor x = Tensor::from({deco.size(), kVoxelFeatureDim}, std::move(flat));

  std::vector<double> inv_count(n_vox, 0.0);
  for (std::size_t v : voxel_of_point) inv_count[v] += 1.0;
  for (auto& v : inv_count) v = 1.0 / v;
  const Tensor pooled = scatter_rows(gelu(params.embed(x)), voxel_of_point, n_vox);
  batch.features = mul(pooled, Tensor::from({n_vox, 1}, std::move(inv_count)));

  batch.points_per_voxel.resize(n_vox);
  for (std::size_t j = 0; j < deco.size(); ++j) {
    const auto& p = points[source[j]];
    batch.points_per_voxel[voxel_of_point[j]].emplace_back(p[0], p[1], p[2]);
  }
  batch.mask.assign(n_vox, false);
  return batch;
}

Tensor patchify(const std::vector<Image>& images, std::size_t patch) {
  if (images.empty()) throw InputError("patchify: no images");
  if (patch == 0) throw ConfigError("patch size must be positive");
  const int h = images[0].height, w = images[0].width;
  for (const auto& img : images) {
    if (img.height != h || img.width != w) throw ConfigError("all views must share one image size");
  }
  if (h % static_cast<int>(patch) != 0 || w % static_cast<int>(patch) != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide image size " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  const std::size_t gh = h / patch, gw = w / patch, dim = 3 * patch * patch;
  std::vector<double> data(images.size() * gh * gw * dim);
  std::size_t t = 0;
  for (const auto& img : images) {
    for (std::size_t pr = 0; pr < gh; ++pr) {
      for (std::size_t pc = 0; pc < gw; ++pc, ++t) {
        double* out = data.data() + t * dim;
        for (std::size_t r = 0; r < patch; ++r) {
          const double* src = img.rgb.data() + ((pr * patch + r) * w + pc * patch) * 3;
          std::copy(src, src + 3 * patch, out + r * 3 * patch);
        }
      }
    }
  }
  return Tensor::from({images.size() * gh * gw, dim}, std::move(data));
}

std::vector<Image> unpatchify(std::span<const double> patches, std::size_t n_views, std::size_t grid_h,
                              std::size_t grid_w, std::size_t patch) {
  const std::size_t dim = 3 * patch * patch;
  if (patches.size() != n_views * grid_h * grid_w * dim) throw InputError("unpatchify: size mismatch");
  const int h = static_cast<int>(grid_h * patch), w = static_cast<int>(grid_w * patch);
  std::vector<Image> images;
  std::size_t t = 0;
  for (std::size_t v = 0; v < n_views; ++v) {
    Image img{h, w, std::vector<double>(static_cast<std::size_t>(h) * w * 3)};
    for (std::size_t pr = 0; pr < grid_h; ++pr) {
      for (std::size_t pc = 0; pc < grid_w; ++pc, ++t) {
        const double* in = patches.data() + t * dim;
        for (std::size_t r = 0; r < patch; ++r) {
          std::copy(in + r * 3 * patch, in + (r + 1) * 3 * patch, img.rgb.data() + ((pr * patch + r) * w + pc * patch) * 3);
        }
      }
    }
    images.push_back(std::move(img));
  }
  return images;
}

PatchTokenBatch embed_patches(const std::vector<Image>& images, std::size_t patch, const PatchEmbedParams& params) {
  PatchTokenBatch batch;
  batch.targets = patchify(images, patch);
  batch.n_views = images.size();
  batch.patch = patch;
  batch.grid_h = images[0].height / patch;
  batch.grid_w = images[0].width / patch;
  const std::size_t per_view = batch.per_view();
  const std::size_t width = params.embed.out();
  if (params.view_embed.dim(0) < batch.n_views) throw ConfigError("embed_patches: fewer view embeddings than views");
  for (std::size_t v = 0; v < batch.n_views; ++v) batch.view_index.insert(batch.view_index.end(), per_view, v);

  Tensor pos;
  if (params.pos_table.defined()) {
    if (params.pos_table.dim(0) != per_view) throw ConfigError("embed_patches: learned position table size mismatch");
    std::vector<std::size_t> idx(batch.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % per_view;
    pos = gather_rows(params.pos_table, idx);
  } else {
    const Tensor one = sinusoid_2d(batch.grid_h, batch.grid_w, width);
    std::vector<Tensor> copies(batch.n_views, one);
    pos = concat(copies, 0);
  }
  batch.features = add(add(params.embed(batch.targets), pos), gather_rows(params.view_embed, batch.view_index));
  batch.mask.assign(batch.size(), false);
  return batch;
}

std::size_t mask_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0) || !(ratio < 1.0)) throw ConfigError("mask ratio must lie in [0, 1)");
  // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

std::vector<bool> make_mask_plan(std::size_t n, double ratio, std::uint64_t seed) {
  const std::size_t count = mask_count(n, ratio);
  Rng rng(seed);
  std::vector<bool> mask(n, false);
  for (std::size_t i : sample_without_replacement(n, count, rng)) mask[i] = true;
  return mask;
}

}  // namespace volfuse
