// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/checks.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include "volfuse/fusion.hpp"
#include "volfuse/gradcheck.hpp"
#include "volfuse/model.hpp"
#include "volfuse/oracles.hpp"
#include "volfuse/reconstruct.hpp"
#include "volfuse/tokenizer.hpp"

namespace volfuse {

namespace {

struct Measure {
  double value = 0.0;
  std::string detail;
};

struct CheckDef {
  const char* name;
  double tolerance;
  std::function<Measure(std::uint64_t)> run;
};

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// sum(y * w) for a fixed random w.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, -1.0, 1.0, false)));
}

// Distinct values spaced at least 1/n apart in [-1, 1], shuffled, so that no
// min-reduction sits near a tie.
Tensor spaced_tensor(Shape shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + (2.0 * i + 1.0 + rng.uniform(-0.5, 0.5)) / n;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Moves every coordinate at least `margin` away from the integer lattice,
// where bilinear and trilinear interpolation have kinks.
void off_lattice(Tensor& t, double margin) {
  for (auto& v : t.mutable_data()) {
    const double frac = v - std::floor(v);
    if (frac < margin) v += margin;
    if (frac > 1.0 - margin) v -= margin;
  }
}

// Smallest distance of any sampling coordinate of the first MMIM block to the
// integer lattice; cell indices are integers, so this is the offsets' distance.
double mmim_lattice_margin(const Tensor& tokens, const MMIMBlockParams& block) {
  NoGradGuard no_grad;
  double margin = 1.0;
  const Tensor offsets = block.offsets(tokens);
  for (double v : offsets.data()) {
    const double frac = v - std::floor(v);
    margin = std::min({margin, frac, 1.0 - frac});
  }
  return margin;
}

void jitter(const ParamList& params, Rng& rng, double amount) {
  for (const auto& [name, t] : params)
    for (auto& v : t.node()->data) v += rng.uniform(-amount, amount);
}

void set_identity(Linear& l) {
  auto w = l.w.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < std::min(l.in(), l.out()); ++i) w[i * l.out() + i] = 1.0;
  if (l.b.defined())
    for (auto& v : l.b.mutable_data()) v = 0.0;
}

void set_zero(Linear& l) {
  for (auto& v : l.w.mutable_data()) v = 0.0;
  if (l.b.defined())
    for (auto& v : l.b.mutable_data()) v = 0.0;
}

// Folds several gradient reports into one measurement.
class GradAccumulator {
 public:
  void add(const std::string& label, const GradCheckReport& r) {
    if (r.max_rel_error >= worst_.value) {
      worst_.value = r.max_rel_error;
      char buf[96];
      std::snprintf(buf, sizeof buf, " (analytic %.6g, numeric %.6g)", r.worst_analytic, r.worst_numeric);
      worst_.detail = label + ": worst at " + r.worst_input + "[" + std::to_string(r.worst_index) + "]" + buf;
    }
    coords_ += r.coordinates;
  }
  Measure result() const {
    Measure m = worst_;
    m.detail += " over " + std::to_string(coords_) + " coordinates";
    return m;
  }

 private:
  Measure worst_;
  std::size_t coords_ = 0;
};

VolumeSpec tiny_volume() {
  VolumeSpec s;
  s.x_range = {-4.0, 4.0};
  s.y_range = {-4.0, 4.0};
  s.z_range = {-3.0, 1.0};
  s.cell_size = {2.0, 2.0, 2.0};
  return s;
}

VolumeSpec bev(VolumeSpec s) {
  s.cell_size[2] = s.z_range[1] - s.z_range[0];
  return s;
}

VolumeSpec desk_volume() { return desk_config().volume; }

CameraModel forward_camera(double yaw = 0.0, int size = 16) {
  return make_camera(Point3(0.0, 0.0, -0.2), yaw, std::numbers::pi / 2.0, size, size);
}

// ---------------------------------------------------------------------------
// Gradient checks.

Measure grad_elementwise(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 1));
  GradAccumulator acc;
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 1, 4}, rng), c = random_tensor({1, 3, 1}, rng);
  acc.add("add/sub/mul", check_gradients([&] { return project(mul(sub(add(a, c), b), c), 1); },
                                         {{"a", a}, {"b", b}, {"c", c}}));
  auto x = random_tensor({12}, rng, -4, 4);
  acc.add("scale", check_gradients([&] { return project(scale(x, -0.3), 2); }, {{"x", x}}));
  acc.add("gelu", check_gradients([&] { return project(gelu(x), 3); }, {{"x", x}}));
  acc.add("tanh", check_gradients([&] { return project(tanh(x), 4); }, {{"x", x}}));
  acc.add("softplus", check_gradients([&] { return project(softplus(x), 5); }, {{"x", x}}));
  return acc.result();
}

Measure grad_matmul(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 2));
  GradAccumulator acc;
  auto x = random_tensor({2, 3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
  acc.add("linear", check_gradients([&] { return project(linear(x, w, b), 6); }, {{"x", x}, {"w", w}, {"b", b}}));
  acc.add("matmul", check_gradients([&] { return project(matmul(x, w), 7); }, {{"x", x}, {"w", w}}));
  auto p = random_tensor({2, 3, 4}, rng), q = random_tensor({2, 4, 2}, rng);
  acc.add("bmm", check_gradients([&] { return project(bmm(p, q), 8); }, {{"a", p}, {"b", q}}));
  auto m = random_tensor({3, 5}, rng);
  acc.add("transpose", check_gradients([&] { return project(mul(transpose(m), transpose(m)), 9); }, {{"m", m}}));
  return acc.result();
}

Measure grad_shape_ops(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 3));
  GradAccumulator acc;
  auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
  acc.add("concat/slice/reshape/permute", check_gradients(
                                              [&] {
                                                auto c = concat({a, b, a}, 1);
                                                auto s = slice(c, 1, 2, 4);
                                                auto p = permute(reshape(s, {2, 2, 2, 2}), {3, 1, 0, 2});
                                                return project(mul(p, p), 10);
                                              },
                                              {{"a", a}, {"b", b}}));
  auto x = random_tensor({5, 3}, rng);
  const std::vector<std::size_t> gi{4, 0, 4, 2}, si{1, 1, 0, 3};
  acc.add("gather/scatter",
          check_gradients([&] { return project(scatter_rows(gather_rows(mul(x, x), gi), si, 6), 11); }, {{"x", x}}));
  return acc.result();
}

Measure grad_reductions(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 4));
  GradAccumulator acc;
  auto x = spaced_tensor({3, 4, 2}, rng);
  acc.add("sum", check_gradients([&] { return scale(sum(mul(x, x)), 0.5); }, {{"x", x}}));
  acc.add("mean", check_gradients([&] { return mean(mul(x, x)); }, {{"x", x}}));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    acc.add("sum_axis", check_gradients([&] { return project(sum_axis(x, axis), 12 + axis); }, {{"x", x}}));
    acc.add("min_axis", check_gradients([&] { return project(min_axis(x, axis), 20 + axis); }, {{"x", x}}));
  }
  return acc.result();
}

Measure grad_softmax(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 5));
  GradAccumulator acc;
  auto x = random_tensor({3, 4, 2}, rng, -3, 3);
  for (std::size_t axis = 0; axis < 3; ++axis)
    acc.add("softmax", check_gradients([&] { return project(softmax(x, axis), 30 + axis); }, {{"x", x}}));
  return acc.result();
}

Measure grad_layer_norm(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 6));
  GradAccumulator acc;
  auto x = random_tensor({4, 6}, rng, -2, 2), g = random_tensor({6}, rng, 0.5, 1.5), b = random_tensor({6}, rng);
  acc.add("layer_norm", check_gradients([&] { return project(layer_norm(x, g, b), 40); },
                                        {{"x", x}, {"gamma", g}, {"beta", b}}));
  return acc.result();
}

Measure grad_sampling(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 7));
  GradAccumulator acc;
  auto grid = random_tensor({4, 5, 6}, rng);
  auto loc2 = random_tensor({7, 2, 2}, rng, -1.5, 6.5);
  off_lattice(loc2, 1e-3);
  acc.add("bilinear", check_gradients([&] { return project(sample_bilinear_2d(grid, loc2), 41); },
                                      {{"grid", grid}, {"loc", loc2}}));
  auto vol = random_tensor({4, 3, 4, 2}, rng);
  auto loc3 = random_tensor({6, 2, 3}, rng, -1.2, 3.8);
  off_lattice(loc3, 1e-3);
  acc.add("trilinear", check_gradients([&] { return project(sample_trilinear_3d(vol, loc3), 42); },
                                       {{"volume", vol}, {"loc", loc3}}));
  return acc.result();
}

Measure grad_encoder(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 8));
  const EncoderConfig cfg{2, 8, 2, 2};
  const auto params = EncoderParams::init(cfg, rng);
  ParamList leaves;
  params.collect("encoder", leaves);
  jitter(leaves, rng, 0.1);
  auto x = random_tensor({5, 8}, rng);
  leaves.emplace_back("tokens", x);
  GradAccumulator acc;
  acc.add("encoder", check_gradients_extrapolated([&] { return project(encode(x, cfg, params), 50); }, leaves));
  return acc.result();
}

Measure grad_sca(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 9));
  const VolumeSpec spec = tiny_volume();
  const std::vector<CameraModel> rig{forward_camera(0.0), forward_camera(1.2)};
  const SCAConfig cfg{2, 8, 2, 2, 2};
  auto params = SCAParams::init(cfg, spec, 8, rng);
  ParamList leaves;
  params.collect("sca", leaves);
  jitter(leaves, rng, 0.15);
  const auto geo = build_sca_geometry(spec, rig, 4, 4, cfg.n_ref, seed);
  const ViewFeatures views{random_tensor({32, 8}, rng), 2, 4, 4};
  leaves.emplace_back("views", views.tokens);
  GradAccumulator acc;
  acc.add("sca", check_gradients_extrapolated(
                     [&] { return project(spatial_cross_attention(views, geo, params, cfg, spec).data, 51); }, leaves));
  return acc.result();
}

Measure grad_mmim(std::uint64_t seed) {
  const VolumeSpec spec = tiny_volume();
  const MMIMConfig cfg{1, 2, 2, 16};
  // Redraw until no sampling point sits on a kink of the trilinear interpolant.
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(mix_seed(seed, 10, attempt));
    auto params = MMIMParams::init(cfg, 8, rng);
    ParamList leaves;
    params.collect("mmim", leaves);
    jitter(leaves, rng, 0.15);
    const VolumeFeature fv{random_tensor({4, 4, 4, 2}, rng), spec}, fi{random_tensor({4, 4, 4, 2}, rng), spec};
    const Tensor joint = concat({volume_tokens(fv), volume_tokens(fi)}, 1);
    if (mmim_lattice_margin(joint, params.blocks[0]) < 1e-3) continue;
    leaves.emplace_back("f_v", fv.data);
    leaves.emplace_back("f_i", fi.data);
    GradAccumulator acc;
    acc.add("mmim", check_gradients_extrapolated(
                        [&] {
                          const auto [v, i] = mmim_fuse(fv, fi, params, cfg);
                          return add(project(v.data, 52), project(i.data, 53));
                        },
                        leaves));
    return acc.result();
  }
}

Measure grad_voxel_decoder(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 11));
  const EncoderConfig cfg{1, 8, 2, 2};
  const auto params = VoxelDecoderParams::init(cfg, 4, rng);
  ParamList leaves;
  params.collect("voxel_decoder", leaves);
  jitter(leaves, rng, 0.2);
  auto masked = random_tensor({3, 8}, rng), negatives = random_tensor({2, 8}, rng);
  leaves.emplace_back("masked", masked);
  leaves.emplace_back("negatives", negatives);
  std::vector<std::vector<Point3>> gt(3);
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t k = 0; k <= 2 * v; ++k) gt[v].emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  GradAccumulator acc;
  acc.add("voxel_decoder", check_gradients_extrapolated(
                               [&] {
                                 const auto p = decode_voxels(masked, negatives, cfg, params, {2.0, 2.0, 3.0});
                                 return add(voxel_chamfer_loss(p.points, gt),
                                            occupancy_loss(p.occupancy_logits, {1, 1, 1, 0, 0}));
                               },
                               leaves));
  return acc.result();
}

Measure grad_patch_decoder(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 12));
  const EncoderConfig cfg{1, 8, 2, 2};
  const auto params = PatchDecoderParams::init(cfg, 2, rng);
  ParamList leaves;
  params.collect("patch_decoder", leaves);
  jitter(leaves, rng, 0.2);
  auto x = random_tensor({4, 8}, rng);
  leaves.emplace_back("tokens", x);
  const Tensor target = random_tensor({4, 12}, rng, 0.0, 1.0, false);
  GradAccumulator acc;
  acc.add("patch_decoder",
          check_gradients_extrapolated([&] { return image_loss(decode_patches(x, cfg, params).pixels, target, {true, false, true, true}); },
                          leaves));
  return acc.result();
}

Measure grad_full_pipeline(std::uint64_t seed) {
  RunConfig cfg = tiny_run_config();
  cfg.seed = seed;
  const Scene scene = generate_scene(tiny_scene_spec(seed));
  const Model model(cfg, model_shape_for(scene, cfg.patch_size));
  const ParamList leaves = model.named_params();
  Rng rng(mix_seed(seed, 13));
  jitter(leaves, rng, 0.15);
  GradAccumulator acc;
  acc.add("full pipeline",
          check_gradients_extrapolated([&] { return model.forward(scene, mix_seed(seed, 14)).total; }, leaves));
  return acc.result();
}

// ---------------------------------------------------------------------------
// Geometry.

Measure geometry_round_trip(std::uint64_t seed) {
  const auto rig = SceneSpec{}.rig();
  Rng rng(mix_seed(seed, 20));
  std::size_t checked = 0;
  double worst = 0.0;
  while (checked < 1000) {
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
    for (const auto& cam : rig) {
      if (hit_views({cam}, p).empty()) continue;
      const auto proj = project_point(cam, p);
      const Eigen::Matrix3d k3 = cam.K().leftCols<3>();
      const Eigen::Vector3d c = k3.inverse() * Eigen::Vector3d(proj.u * proj.depth, proj.v * proj.depth, proj.depth);
      const Eigen::Vector4d ego = cam.Rt().inverse() * Eigen::Vector4d(c.x(), c.y(), c.z(), 1.0);
      worst = std::max(worst, (ego.head<3>() - p).norm());
      ++checked;
    }
  }
  return {worst, std::to_string(checked) + " in-frustum projections, max error in meters"};
}

Measure geometry_partition(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 21));
  std::size_t bad = 0;
  for (const VolumeSpec& spec : {desk_volume(), bev(desk_volume()), VolumeSpec{}}) {
    for (int i = 0; i < 2000; ++i) {
      const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
      const auto c = point_to_volume_coord(spec, p);
      if (!c) {
        ++bad;
        continue;
      }
      const Point3 center = volume_cell_center(spec, *c);
      for (int a = 0; a < 3; ++a) {
        if (p(a) < center(a) - 0.5 * spec.cell_size[a] || p(a) >= center(a) + 0.5 * spec.cell_size[a]) ++bad;
      }
    }
    for (std::size_t f = 0; f < spec.cell_count(); f += 1 + spec.cell_count() / 5000) {
      if (spec.flat_index(spec.coord_of(f)) != f) ++bad;
      if (point_to_volume_coord(spec, volume_cell_center(spec, spec.coord_of(f))) != spec.coord_of(f)) ++bad;
    }
    // Upper faces are open.
    if (point_to_volume_coord(spec, Point3(spec.x_range[1], 0.0, 0.0))) ++bad;
    if (!point_to_volume_coord(spec, Point3(spec.x_range[0], spec.y_range[0], spec.z_range[0]))) ++bad;
  }
  return {static_cast<double>(bad), "partition violations over 3 grids"};
}

Measure geometry_hit_views(std::uint64_t seed) {
  const auto rig = SceneSpec{}.rig();
  Rng rng(mix_seed(seed, 22));
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const Point3 p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 3));
    std::vector<std::size_t> expected;
    for (std::size_t v = 0; v < rig.size(); ++v) {
      const Eigen::Vector4d cam = rig[v].Rt() * Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0);
      if (cam.z() <= kMinHitDepth) continue;
      const Eigen::Vector3d uvw = rig[v].K() * cam;
      const double u = uvw.x() / uvw.z(), vv = uvw.y() / uvw.z();
      if (u >= 0 && u < rig[v].width && vv >= 0 && vv < rig[v].height) expected.push_back(v);
    }
    if (hit_views(rig, p) != expected) ++mismatches;
  }
  return {static_cast<double>(mismatches), "mismatching view sets over 1000 points"};
}

// ---------------------------------------------------------------------------
// Attention structure.

Measure sca_normalization(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 30));
  const SCAConfig cfg{1, 8, 3, 4, 2};
  const auto params = SCAParams::init(cfg, tiny_volume(), 8, rng);
  const Tensor w = sca_attention_weights(random_tensor({32, 8}, rng, -3, 3, false), params.blocks[0], cfg);
  double worst = 0.0;
  for (std::size_t row = 0; row < w.numel() / 4; ++row) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += w[row * 4 + k];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return {worst, "max |sum of weights - 1|"};
}

Measure sca_duplicated_view(std::uint64_t seed) {
  double worst = 0.0;
  for (const VolumeSpec& spec : {tiny_volume(), bev(tiny_volume())}) {
    const CameraModel a = forward_camera(0.0), b = forward_camera(0.9);
    const SCAConfig cfg{2, 8, 3, 2, 2};
    Rng rng(mix_seed(seed, 31));
    auto params = SCAParams::init(cfg, spec, 8, rng);
    ParamList list;
    params.collect("sca", list);
    jitter(list, rng, 0.2);
    const Tensor t = random_tensor({32, 8}, rng, -1, 1, false);
    const Tensor tb = slice(t, 0, 16, 16);
    const auto run = [&](const std::vector<CameraModel>& rig, const Tensor& tokens) {
      const auto geo = build_sca_geometry(spec, rig, 4, 4, cfg.n_ref, seed);
      return volume_tokens(spatial_cross_attention({tokens, rig.size(), 4, 4}, geo, params, cfg, spec));
    };
    const auto geo = build_sca_geometry(spec, {a, b}, 4, 4, cfg.n_ref, seed);
    const auto diff = [&](const Tensor& x, const Tensor& y, bool single_only) {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (single_only && geo.hit_count[i / x.dim(1)] > 1) continue;
        worst = std::max(worst, std::abs(x[i] - y[i]));
      }
    };
    const Tensor base = run({a, b}, t);
    diff(base, run({a, b, a, b}, concat({t, t}, 0)), false);
    diff(run({b}, tb), run({b, b}, concat({tb, tb}, 0)), false);
    diff(base, run({a, b, b}, concat({t, tb}, 0)), true);
  }
  return {worst, "max change from cloning views (3D and BEV)"};
}

Measure sca_degenerate(std::uint64_t seed) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (const VolumeSpec& spec : {tiny_volume(), bev(tiny_volume())}) {
    const std::vector<CameraModel> rig{forward_camera()};
    const SCAConfig cfg{1, 6, 1, 1, 1};
    Rng rng(mix_seed(seed, 32));
    auto params = SCAParams::init(cfg, spec, 6, rng);
    auto& blk = params.blocks[0];
    set_identity(blk.value);
    set_identity(blk.output);
    const auto geo = build_sca_geometry(spec, rig, 4, 4, 1, 0);
    const ViewFeatures views{random_tensor({16, 6}, rng, -1, 1, false), 1, 4, 4};
    const Tensor q = random_tensor({spec.cell_count(), 6}, rng, -1, 1, false);
    const Tensor out = sca_attention(q, views, geo, blk, cfg);
    const Tensor grid = permute(reshape(views.tokens, {4, 4, 6}), {2, 0, 1});
    for (std::size_t f = 0; f < spec.cell_count(); ++f) {
      const Point3 center = volume_cell_center(spec, spec.coord_of(f));
      if (hit_views(rig, center).empty()) {
        for (std::size_t j = 0; j < 6; ++j) worst = std::max(worst, std::abs(out[f * 6 + j]));
        continue;
      }
      const auto proj = project_point(rig[0], center);
      const Tensor expected = sample_bilinear_2d(grid, proj.u / 4.0 - 0.5, proj.v / 4.0 - 0.5);
      for (std::size_t j = 0; j < 6; ++j) worst = std::max(worst, std::abs(out[f * 6 + j] - expected[j]));
      ++checked;
    }
  }
  return {worst, "K=1 zero-offset SCA vs bilinear sample over " + std::to_string(checked) + " visible cells"};
}

Measure mmim_normalization(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 33));
  const MMIMConfig cfg{1, 4, 3, 16};
  const auto params = MMIMParams::init(cfg, 8, rng);
  const Tensor w = mmim_attention_weights(random_tensor({32, 8}, rng, -3, 3, false), params.blocks[0], cfg);
  double worst = 0.0;
  for (std::size_t row = 0; row < w.numel() / 3; ++row) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += w[row * 3 + k];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return {worst, "max |sum of weights - 1|"};
}

Measure mmim_identity(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 34));
  double worst = 0.0;
  for (const VolumeSpec& spec : {tiny_volume(), bev(tiny_volume())}) {
    const Shape s{4, spec.H(), spec.W(), spec.Z()};
    const VolumeFeature fv{random_tensor(s, rng, -1, 1, false), spec}, fi{random_tensor(s, rng, -1, 1, false), spec};
    const MMIMConfig cfg{0, 2, 4, 16};
    const auto [v, i] = mmim_fuse(fv, fi, MMIMParams::init(cfg, 8, rng), cfg);
    for (std::size_t k = 0; k < fv.data.numel(); ++k) {
      worst = std::max(worst, std::abs(v.data[k] - fv.data[k]));
      worst = std::max(worst, std::abs(i.data[k] - fi.data[k]));
    }
  }
  return {worst, "L=0 output vs input"};
}

Measure mmim_degenerate(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 35));
  double worst = 0.0;
  for (const VolumeSpec& spec : {tiny_volume(), bev(tiny_volume())}) {
    const MMIMConfig cfg{1, 2, 1, 16};
    auto params = MMIMParams::init(cfg, 8, rng);
    auto& blk = params.blocks[0];
    set_identity(blk.value);
    set_identity(blk.output);
    set_zero(blk.fc1);
    set_zero(blk.fc2);
    const Tensor joint = random_tensor({spec.cell_count(), 8}, rng, -1, 1, false);
    const Tensor attn = mmim_attention(joint, blk, cfg, spec);
    for (std::size_t k = 0; k < joint.numel(); ++k) worst = std::max(worst, std::abs(attn[k] - joint[k]));
  }
  return {worst, "K=1 zero-offset MMIM attention vs its input"};
}

// ---------------------------------------------------------------------------
// Losses and masking.

Tensor points_tensor(const std::vector<Point3>& pts) {
  std::vector<double> flat;
  for (const auto& p : pts) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  return Tensor::from({pts.size(), 3}, std::move(flat));
}

Measure chamfer_oracle(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 40));
  const auto cloud = [&](std::size_t n) {
    std::vector<Point3> pts;
    for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    return pts;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = cloud(1 + rng.below(32)), b = cloud(1 + rng.below(32));
    worst = std::max(worst, std::abs(chamfer_loss(points_tensor(a), points_tensor(b)).item() - oracle::chamfer_brute_force(a, b)));
  }
  return {worst, "200 random pairs, |A|,|B| <= 32"};
}

Measure bce_oracle(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 41));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-12, 12);
      y[i] = static_cast<double>(rng.below(2));
    }
    worst = std::max(worst, std::abs(occupancy_loss(Tensor::from({n}, x), y).item() -
                                     static_cast<double>(oracle::bce_direct(x, y))));
  }
  return {worst, "100 random logit sets vs long double oracle"};
}

Measure loss_literals(std::uint64_t) {
  double worst = 0.0;
  const auto dev = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  dev(chamfer_loss(points_tensor({Point3(0, 0, 0)}), points_tensor({Point3(1, 0, 0)})).item(), 2.0);
  dev(occupancy_loss(Tensor::zeros({4}), {0, 1, 1, 0}).item(), std::log(2.0));
  dev(occupancy_loss(Tensor::full({3}, 1e3), {1, 1, 1}).item(), 0.0);
  dev(voxel_loss(Tensor::scalar(0.0), Tensor::scalar(0.0)).item(), 0.0);
  dev(voxel_loss(Tensor::scalar(1.5), Tensor::scalar(0.5)).item(), 2.0);
  const Tensor target = Tensor::full({3, 4}, 0.5);
  dev(image_loss(target, target, {true, false, true}).item(), 0.0);
  dev(image_loss(Tensor::full({3, 4}, 0.75), target, {true, false, true}).item(), 0.0625);
  dev(total_loss(Tensor::scalar(2.0), Tensor::scalar(0.5), 1.0, 0.0).item(), 2.0);
  return {worst, "max deviation from literal values"};
}

Measure mask_counts(std::uint64_t seed) {
  std::size_t bad = 0;
  for (std::size_t n = 0; n <= 2000; n += 7) {
    const auto l = make_mask_plan(n, 0.70, mix_seed(seed, n));
    const auto c = make_mask_plan(n, 0.75, mix_seed(seed, n, 1));
    if (static_cast<std::size_t>(std::count(l.begin(), l.end(), true)) != (70 * n) / 100) ++bad;
    if (static_cast<std::size_t>(std::count(c.begin(), c.end(), true)) != (3 * n) / 4) ++bad;
  }
  return {static_cast<double>(bad), "plans with a count other than floor(ratio n), n = 0..2000"};
}

Measure mask_determinism(std::uint64_t seed) {
  std::size_t bad = 0;
  for (std::size_t n : {150u, 1056u}) {
    if (make_mask_plan(n, 0.75, seed) != make_mask_plan(n, 0.75, seed)) ++bad;
    if (make_mask_plan(n, 0.75, seed) == make_mask_plan(n, 0.75, seed + 1)) ++bad;
  }
  return {static_cast<double>(bad), "same seed must repeat, different seeds must differ"};
}

Measure voxelize_permutation(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 42));
  const auto params = VoxelEmbedParams::init(8, rng);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 400; ++i) pts.push_back({rng.uniform(-55, 55), rng.uniform(-55, 55), rng.uniform(-5, 3), rng.uniform()});
  const auto a = voxelize_dynamic(pts, desk_volume(), params);
  for (std::size_t i = pts.size() - 1; i > 0; --i) std::swap(pts[i], pts[rng.below(i + 1)]);
  const auto b = voxelize_dynamic(pts, desk_volume(), params);
  if (a.coords != b.coords) return {1.0, "voxel sets differ"};
  double worst = 0.0;
  for (std::size_t i = 0; i < a.features.numel(); ++i) worst = std::max(worst, std::abs(a.features[i] - b.features[i]));
  return {worst, "max feature change under point shuffling"};
}

Measure patchify_round_trip(std::uint64_t seed) {
  const Scene scene = generate_scene(tiny_scene_spec(seed));
  const Tensor p = patchify(scene.images, 8);
  const auto back = unpatchify(p.data(), scene.images.size(), 2, 2, 8);
  std::size_t bad = 0;
  for (std::size_t v = 0; v < back.size(); ++v) bad += back[v] == scene.images[v] ? 0 : 1;
  return {static_cast<double>(bad), "views not restored exactly"};
}

Measure scene_determinism(std::uint64_t seed) {
  const Scene a = generate_scene(tiny_scene_spec(seed)), b = generate_scene(tiny_scene_spec(seed));
  std::size_t bad = a.points == b.points ? 0 : 1;
  bad += a.images == b.images ? 0 : 1;
  const Scene c = scene_from_json(scene_to_json(a));
  bad += c.points == a.points ? 0 : 1;
  bad += c.images == a.images ? 0 : 1;
  bad += c.cameras == a.cameras ? 0 : 1;
  return {static_cast<double>(bad), "differences across regeneration and file round trip"};
}

const std::vector<CheckDef>& registry() {
  static const std::vector<CheckDef> defs = {
      {"grad.ops.elementwise", 1e-5, grad_elementwise},
      {"grad.ops.matmul", 1e-5, grad_matmul},
      {"grad.ops.shape", 1e-5, grad_shape_ops},
      {"grad.ops.reductions", 1e-5, grad_reductions},
      {"grad.ops.softmax", 1e-5, grad_softmax},
      {"grad.ops.layer_norm", 1e-5, grad_layer_norm},
      {"grad.ops.sampling", 1e-5, grad_sampling},
      {"grad.encoder", 1e-5, grad_encoder},
      {"grad.sca", 1e-5, grad_sca},
      {"grad.mmim", 1e-5, grad_mmim},
      {"grad.voxel_decoder", 1e-5, grad_voxel_decoder},
      {"grad.patch_decoder", 1e-5, grad_patch_decoder},
      {"grad.full_pipeline", 1e-4, grad_full_pipeline},
      {"geometry.round_trip", 1e-9, geometry_round_trip},
      {"geometry.partition", 0.0, geometry_partition},
      {"geometry.hit_views", 0.0, geometry_hit_views},
      {"attention.sca_normalization", 1e-12, sca_normalization},
      {"attention.sca_duplicated_view", 1e-10, sca_duplicated_view},
      {"attention.sca_degenerate", 0.0, sca_degenerate},
      {"attention.mmim_normalization", 1e-12, mmim_normalization},
      {"attention.mmim_identity", 0.0, mmim_identity},
      {"attention.mmim_degenerate", 0.0, mmim_degenerate},
      {"loss.chamfer_oracle", 0.0, chamfer_oracle},
      {"loss.bce_oracle", 1e-10, bce_oracle},
      {"loss.literal_cases", 1e-15, loss_literals},
      {"mask.exact_counts", 0.0, mask_counts},
      {"mask.determinism", 0.0, mask_determinism},
      {"tokenizer.voxel_permutation", 1e-12, voxelize_permutation},
      {"tokenizer.patchify_round_trip", 0.0, patchify_round_trip},
      {"scene.determinism", 0.0, scene_determinism},
  };
  return defs;
}

}  // namespace

std::vector<std::string> check_names() {
  std::vector<std::string> names;
  for (const auto& d : registry()) names.emplace_back(d.name);
  return names;
}

std::vector<CheckResult> run_checks(std::uint64_t seed, const std::string& prefix) {
  std::vector<CheckResult> out;
  for (const auto& d : registry()) {
    if (!std::string_view(d.name).starts_with(prefix)) continue;
    CheckResult r;
    r.name = d.name;
    r.tolerance = d.tolerance;
    const auto start = std::chrono::steady_clock::now();
    try {
      const Measure m = d.run(seed);
      r.measured = m.value;
      r.detail = m.detail;
      r.passed = std::isfinite(m.value) && m.value <= d.tolerance;
    } catch (const std::exception& e) {
      r.measured = std::numeric_limits<double>::infinity();
      r.detail = std::string("threw: ") + e.what();
      r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

SceneSpec tiny_scene_spec(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.n_boxes = 2;
  s.range = tiny_volume();
  s.box_length = {1.0, 1.6};
  s.box_width = {0.8, 1.2};
  s.box_height = {0.8, 1.6};
  s.placement_range = {-3.0, 3.0};
  s.min_box_distance = 1.8;
  s.lidar.azimuth_steps = 48;
  s.n_cameras = 1;
  s.camera_hfov_deg = 90.0;
  s.image_height = 16;
  s.image_width = 16;
  return s;
}

RunConfig tiny_run_config() {
  RunConfig c;
  c.volume = tiny_volume();
  c.mask_ratio_lidar = 0.5;
  c.mask_ratio_camera = 0.5;
  c.width = 8;
  c.encoder_lidar = {1, 2, 2};
  c.encoder_camera = {1, 2, 2};
  c.sca = {1, 8, 2, 2, 2};
  c.mmim = {1, 2, 2, 16};
  c.decoder_voxel = {1, 2, 2};
  c.decoder_image = {1, 2, 2};
  c.n_pts = 4;
  c.total_steps = 10;
  c.optimizer.warmup_steps = 2;
  return c;
}

}  // namespace volfuse
