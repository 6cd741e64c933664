// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "volfuse/fusion.hpp"
#include "volfuse/gradcheck.hpp"
#include "volfuse/tokenizer.hpp"

using namespace volfuse;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false, double amp = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-amp, amp);
  return Tensor::from(std::move(shape), std::move(data), grad);
}

void jitter(const ParamList& params, Rng& rng, double amount) {
  for (const auto& [name, t] : params)
    for (auto& v : t.node()->data) v += rng.uniform(-amount, amount);
}

void set_identity(Linear& l) {
  auto w = l.w.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < std::min(l.in(), l.out()); ++i) w[i * l.out() + i] = 1.0;
  if (l.b.defined()) {
    auto b = l.b.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
}

void set_zero(Linear& l) {
  for (auto& v : l.w.mutable_data()) v = 0.0;
  if (l.b.defined())
    for (auto& v : l.b.mutable_data()) v = 0.0;
}

// 4 x 4 x 2 cells of 4 m around the sensor.
VolumeSpec tiny_volume() {
  VolumeSpec s;
  s.x_range = {-8.0, 8.0};
  s.y_range = {-8.0, 8.0};
  s.z_range = {-5.0, 3.0};
  s.cell_size = {4.0, 4.0, 4.0};
  return s;
}

VolumeSpec bev(VolumeSpec s) {
  s.cell_size[2] = s.z_range[1] - s.z_range[0];
  return s;
}

CameraModel forward_camera(double yaw = 0.0, int size = 16) {
  return make_camera(Point3(0.0, 0.0, -0.2), yaw, M_PI / 2.0, size, size);
}

ViewFeatures random_views(std::size_t n_views, std::size_t gh, std::size_t gw, std::size_t c, Rng& rng,
                          bool grad = false) {
  return {random_tensor({n_views * gh * gw, c}, rng, grad), n_views, gh, gw};
}

}  // namespace

TEST(Scatter, SingleTokenAndInversePair) {
  const VolumeSpec spec = tiny_volume();
  Rng rng(1);
  const Tensor feat = random_tensor({1, 5}, rng);
  const VolumeCoord c{2, 1, 1};
  const auto vol = scatter_lidar_to_volume(feat, {c}, spec);
  EXPECT_EQ(vol.data.shape(), (Shape{5, 4, 4, 2}));
  std::size_t nonzero_cells = 0;
  const Tensor tokens = volume_tokens(vol);
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    bool nz = false;
    for (std::size_t j = 0; j < 5; ++j) nz |= tokens[f * 5 + j] != 0.0;
    nonzero_cells += nz;
  }
  EXPECT_EQ(nonzero_cells, 1u);
  const Tensor back = gather_voxel_tokens(vol, {c});
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(back[j], feat[j]);
  // Untouched cell: zero, no error.
  const Tensor other = gather_voxel_tokens(vol, {{0, 0, 0}, {3, 3, 1}});
  EXPECT_EQ(other.shape(), (Shape{2, 5}));
  for (std::size_t i = 0; i < other.numel(); ++i) EXPECT_EQ(other[i], 0.0);
  EXPECT_THROW(gather_voxel_tokens(vol, {{4, 0, 0}}), InputError);
}

TEST(Scatter, GatherOfScatterIsBitwiseThroughIdentityFusion) {
  const VolumeSpec spec = tiny_volume();
  Rng rng(2);
  std::vector<VolumeCoord> coords;
  for (std::size_t f = 0; f < spec.cell_count(); f += 3) coords.push_back(spec.coord_of(f));
  const Tensor feats = random_tensor({coords.size(), 6}, rng);
  const auto f_v = scatter_lidar_to_volume(feats, coords, spec);
  const VolumeFeature f_i{random_tensor({6, 4, 4, 2}, rng), spec};
  MMIMConfig cfg{0, 2, 1, 8};
  const auto params = MMIMParams::init(cfg, 12, rng);
  const auto [v_out, i_out] = mmim_fuse(f_v, f_i, params, cfg);
  const Tensor back = gather_voxel_tokens(v_out, coords);
  for (std::size_t i = 0; i < feats.numel(); ++i) ASSERT_EQ(back[i], feats[i]);
  for (std::size_t i = 0; i < f_i.data.numel(); ++i) ASSERT_EQ(i_out.data[i], f_i.data[i]);
}

TEST(SCAGeometryTest, HitCountMatchesBruteForce) {
  const VolumeSpec spec = tiny_volume();
  const std::vector<CameraModel> rig{forward_camera(0.0), forward_camera(M_PI / 2.0), forward_camera(M_PI)};
  const auto geo = build_sca_geometry(spec, rig, 4, 4, 3, 17);
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    std::set<std::size_t> views;
    for (const auto& p : reference_points(spec, spec.coord_of(f), 3, 17))
      for (std::size_t v : hit_views(rig, p)) views.insert(v);
    EXPECT_EQ(geo.hit_count[f], views.size());
  }
}

TEST(SCA, InvisibleCellsAreZero) {
  const VolumeSpec spec = tiny_volume();
  const std::vector<CameraModel> rig{forward_camera()};
  SCAConfig cfg{2, 8, 2, 2, 2};
  Rng rng(3);
  const auto params = SCAParams::init(cfg, spec, 8, rng);
  const auto geo = build_sca_geometry(spec, rig, 4, 4, cfg.n_ref, 5);
  const auto out = spatial_cross_attention(random_views(1, 4, 4, 8, rng), geo, params, cfg, spec);
  const Tensor tokens = volume_tokens(out);
  std::size_t zero_cells = 0, visible = 0;
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    bool any = false;
    for (std::size_t j = 0; j < 8; ++j) any |= tokens[f * 8 + j] != 0.0;
    if (geo.hit_count[f] == 0) {
      EXPECT_FALSE(any);
      ++zero_cells;
    } else {
      EXPECT_TRUE(any);
      ++visible;
    }
  }
  EXPECT_GT(zero_cells, 0u);
  EXPECT_GT(visible, 0u);
}

void run_sca_degenerate(const VolumeSpec& spec) {
  const std::vector<CameraModel> rig{forward_camera()};
  SCAConfig cfg{1, 6, 1, 1, 1};
  Rng rng(4);
  auto params = SCAParams::init(cfg, spec, 6, rng);
  auto& blk = params.blocks[0];
  set_identity(blk.value);
  set_identity(blk.output);
  const auto geo = build_sca_geometry(spec, rig, 4, 4, 1, 0);
  const auto views = random_views(1, 4, 4, 6, rng);
  const Tensor q = random_tensor({spec.cell_count(), 6}, rng);
  const Tensor out = sca_attention(q, views, geo, blk, cfg);
  const Tensor grid = permute(reshape(views.tokens, {4, 4, 6}), {2, 0, 1});
  std::size_t checked = 0;
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    const Point3 center = volume_cell_center(spec, spec.coord_of(f));
    if (hit_views(rig, center).empty()) {
      for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out[f * 6 + j], 0.0);
      continue;
    }
    const auto proj = project_point(rig[0], center);
    const Tensor expected = sample_bilinear_2d(grid, proj.u / 4.0 - 0.5, proj.v / 4.0 - 0.5);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out[f * 6 + j], expected[j]);
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(SCA, DegenerateReductionIsBilinearSample) { run_sca_degenerate(tiny_volume()); }
TEST(SCA, DegenerateReductionBev) { run_sca_degenerate(bev(tiny_volume())); }

TEST(SCA, WeightsSumToOne) {
  SCAConfig cfg{1, 8, 3, 4, 2};
  Rng rng(5);
  const auto params = SCAParams::init(cfg, tiny_volume(), 8, rng);
  const Tensor w = sca_attention_weights(random_tensor({32, 8}, rng, false, 3.0), params.blocks[0], cfg);
  EXPECT_EQ(w.shape(), (Shape{32, 3, 2, 4}));
  for (std::size_t row = 0; row < 32 * 3 * 2; ++row) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += w[row * 4 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SCA, DuplicatedViewInvariance) {
  for (const VolumeSpec& spec : {tiny_volume(), bev(tiny_volume())}) {
    const CameraModel a = forward_camera(0.0), b = forward_camera(0.9);
    SCAConfig cfg{2, 8, 3, 2, 2};
    Rng rng(6);
    auto params = SCAParams::init(cfg, spec, 8, rng);
    ParamList list;
    params.collect("sca", list);
    jitter(list, rng, 0.2);
    const auto views = random_views(2, 4, 4, 8, rng);
    const Tensor& t = views.tokens;
    const auto run = [&](const std::vector<CameraModel>& rig, const Tensor& tokens) {
      const auto geo = build_sca_geometry(spec, rig, 4, 4, cfg.n_ref, 9);
      return volume_tokens(spatial_cross_attention({tokens, rig.size(), 4, 4}, geo, params, cfg, spec));
    };
    const auto max_diff = [](const Tensor& x, const Tensor& y, const std::vector<bool>& keep) {
      double worst = 0.0;
      for (std::size_t i = 0; i < x.numel(); ++i)
        if (keep[i / x.dim(1)]) worst = std::max(worst, std::abs(x[i] - y[i]));
      return worst;
    };
    const std::vector<bool> all(spec.cell_count(), true);
    // Every hit view cloned: sum and |V_hit| both double.
    const Tensor base = run({a, b}, t);
    EXPECT_LE(max_diff(base, run({a, b, a, b}, concat({t, t}, 0)), all), 1e-10);
    EXPECT_LE(max_diff(run({b}, slice(t, 0, 16, 16)), run({b, b}, concat({slice(t, 0, 16, 16), slice(t, 0, 16, 16)}, 0)), all),
              1e-10);
    // Cloning only b leaves every cell seen by a single view unchanged.
    const auto geo = build_sca_geometry(spec, {a, b}, 4, 4, cfg.n_ref, 9);
    std::vector<bool> single(spec.cell_count());
    std::size_t n_single = 0;
    for (std::size_t c = 0; c < single.size(); ++c) n_single += single[c] = geo.hit_count[c] <= 1;
    ASSERT_GT(n_single, 0u);
    EXPECT_LE(max_diff(base, run({a, b, b}, concat({t, slice(t, 0, 16, 16)}, 0)), single), 1e-10);
  }
}

TEST(MMIM, ZeroBlocksIsIdentity) {
  Rng rng(7);
  const VolumeSpec spec = tiny_volume();
  const VolumeFeature fv{random_tensor({4, 4, 4, 2}, rng), spec}, fi{random_tensor({4, 4, 4, 2}, rng), spec};
  MMIMConfig cfg{0, 2, 4, 16};
  const auto [v, i] = mmim_fuse(fv, fi, MMIMParams::init(cfg, 8, rng), cfg);
  for (std::size_t k = 0; k < fv.data.numel(); ++k) {
    ASSERT_EQ(v.data[k], fv.data[k]);
    ASSERT_EQ(i.data[k], fi.data[k]);
  }
}

void run_mmim_checks(const VolumeSpec& spec) {
  Rng rng(8);
  const std::size_t c = 4, n = spec.cell_count();
  // Weight normalization with random parameters.
  {
    MMIMConfig cfg{1, 4, 3, 16};
    auto params = MMIMParams::init(cfg, 2 * c, rng);
    const Tensor w = mmim_attention_weights(random_tensor({n, 2 * c}, rng, false, 3.0), params.blocks[0], cfg);
    for (std::size_t row = 0; row < n * 4; ++row) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += w[row * 3 + k];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  // K=1, zero offsets, identity maps, zero MLP: attention returns its input.
  MMIMConfig cfg{1, 2, 1, 16};
  auto params = MMIMParams::init(cfg, 2 * c, rng);
  auto& blk = params.blocks[0];
  set_identity(blk.value);
  set_identity(blk.output);
  set_zero(blk.fc1);
  set_zero(blk.fc2);
  const VolumeFeature fv{random_tensor({c, spec.H(), spec.W(), spec.Z()}, rng), spec};
  const VolumeFeature fi{random_tensor({c, spec.H(), spec.W(), spec.Z()}, rng), spec};
  const Tensor joint = concat({volume_tokens(fv), volume_tokens(fi)}, 1);
  const Tensor attn = mmim_attention(joint, blk, cfg, spec);
  for (std::size_t k = 0; k < joint.numel(); ++k) ASSERT_EQ(attn[k], joint[k]);
  const auto [v, i] = mmim_fuse(fv, fi, params, cfg);
  EXPECT_EQ(v.data.shape(), fv.data.shape());
  EXPECT_EQ(i.data.shape(), fi.data.shape());
}

TEST(MMIM, NormalizationAndDegenerateReduction) { run_mmim_checks(tiny_volume()); }
TEST(MMIM, NormalizationAndDegenerateReductionBev) { run_mmim_checks(bev(tiny_volume())); }

TEST(MMIM, RejectsMismatchedInputs) {
  Rng rng(9);
  const VolumeFeature a{random_tensor({4, 4, 4, 2}, rng), tiny_volume()};
  const VolumeFeature b{random_tensor({4, 4, 4, 1}, rng), bev(tiny_volume())};
  MMIMConfig cfg{1, 2, 1, 8};
  EXPECT_THROW(mmim_fuse(a, b, MMIMParams::init(cfg, 8, rng), cfg), InputError);
  MMIMConfig odd{1, 3, 1, 8};
  EXPECT_THROW(odd.validate(8), ConfigError);
}

TEST(ImagePlane, OpticalAxisCellHitsCenterPatch) {
  VolumeSpec spec;
  spec.x_range = {-12.0, 12.0};
  spec.y_range = {-2.0, 2.0};
  spec.z_range = {-2.0, 2.0};
  spec.cell_size = {4.0, 4.0, 4.0};  // 6 x 1 x 1, centers on the x axis
  const auto cam = make_camera(Point3(0, 0, 0), 0.0, M_PI / 2.0, 12, 12);
  std::vector<double> data(3 * 6, 0.0);
  // Cell ix=4 has center x=6, straight ahead.
  for (std::size_t ch = 0; ch < 3; ++ch) data[ch * 6 + 4] = 1.0 + static_cast<double>(ch);
  const VolumeFeature vol{Tensor::from({3, 6, 1, 1}, data), spec};
  const Tensor out = project_volume_to_image_plane(vol, {cam}, 3, 3);
  EXPECT_EQ(out.shape(), (Shape{9, 3}));
  for (std::size_t p = 0; p < 9; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      // Cells at x=2, 6, 10 share the center patch; only one is nonzero.
      EXPECT_EQ(out[p * 3 + ch], p == 4 ? (1.0 + ch) / 3.0 : 0.0);
    }
  }
}

TEST(ImagePlane, MeanOfCollidingCellsAndBehindCamera) {
  VolumeSpec spec;
  spec.x_range = {-12.0, 12.0};
  spec.y_range = {-2.0, 2.0};
  spec.z_range = {-2.0, 2.0};
  spec.cell_size = {4.0, 4.0, 4.0};
  const auto cam = make_camera(Point3(0, 0, 0), 0.0, M_PI / 2.0, 12, 12);
  const auto map = build_image_plane_map(spec, {cam}, 3, 3);
  // Cells behind the camera (x < 0) never contribute.
  for (std::size_t c : map.cell) EXPECT_GE(volume_cell_center(spec, spec.coord_of(c)).x(), 0.0);
  EXPECT_EQ(map.cell.size(), 3u);
  std::vector<double> data{0, 0, 0, 2.0, 4.0, 9.0};
  const Tensor out = project_volume_to_image_plane(VolumeFeature{Tensor::from({1, 6, 1, 1}, data), spec}, map);
  EXPECT_DOUBLE_EQ(out[4], 5.0);
}

TEST(FusionGradient, TinyEndToEnd) {
  const VolumeSpec spec = tiny_volume();
  const std::vector<CameraModel> rig{forward_camera(0.0, 16)};
  const std::size_t c = 8;
  Rng rng(10);
  SCAConfig sca_cfg{1, 8, 2, 2, 2};
  MMIMConfig mm_cfg{1, 2, 2, 16};
  auto sca = SCAParams::init(sca_cfg, spec, c, rng);
  auto mm = MMIMParams::init(mm_cfg, 2 * c, rng);
  ParamList leaves;
  sca.collect("sca", leaves);
  mm.collect("mmim", leaves);
  jitter(leaves, rng, 0.15);
  const auto geo = build_sca_geometry(spec, rig, 4, 4, sca_cfg.n_ref, 3);
  const auto plane = build_image_plane_map(spec, rig, 4, 4);
  const auto views = random_views(1, 4, 4, c, rng, true);
  std::vector<VolumeCoord> coords{{2, 1, 0}, {3, 2, 1}, {1, 3, 0}};
  const Tensor vox = random_tensor({3, c}, rng, true);
  leaves.emplace_back("views", views.tokens);
  leaves.emplace_back("voxels", vox);
  const Tensor w_img = random_tensor({16, c}, rng);
  const Tensor w_vox = random_tensor({3, c}, rng);
  const auto loss = [&] {
    const auto f_i = spatial_cross_attention(views, geo, sca, sca_cfg, spec);
    const auto f_v = scatter_lidar_to_volume(vox, coords, spec);
    const auto [v2, i2] = mmim_fuse(f_v, f_i, mm, mm_cfg);
    return add(sum(mul(project_volume_to_image_plane(i2, plane), w_img)),
               sum(mul(gather_voxel_tokens(v2, coords), w_vox)));
  };
  const auto report = check_gradients(loss, leaves);
  EXPECT_LE(report.max_rel_error, 1e-5) << report.worst_input << "[" << report.worst_index
                                        << "] analytic=" << report.worst_analytic
                                        << " numeric=" << report.worst_numeric;
}
