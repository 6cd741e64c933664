// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "volfuse/errors.hpp"

namespace volfuse {

using nlohmann::json;

std::string to_string(InteractionSpace s) { return s == InteractionSpace::kBev ? "bev" : "volume3d"; }

InteractionSpace interaction_space_from_string(const std::string& s) {
  if (s == "volume3d") return InteractionSpace::kVolume3D;
  if (s == "bev") return InteractionSpace::kBev;
  throw ConfigError("interaction_space: expected \"volume3d\" or \"bev\", got \"" + s + "\"");
}

VolumeSpec RunConfig::effective_volume() const {
  VolumeSpec v = volume;
  if (interaction_space == InteractionSpace::kBev) v.cell_size[2] = v.z_range[1] - v.z_range[0];
  return v;
}

void RunConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  try {
    effective_volume().validate();
  } catch (const GeometryError& e) {
    fail(std::string("volume: ") + e.what());
  }
  if (!(mask_ratio_lidar >= 0.0 && mask_ratio_lidar < 1.0)) fail("mask_ratio_lidar: must lie in [0, 1)");
  if (!(mask_ratio_camera >= 0.0 && mask_ratio_camera < 1.0)) fail("mask_ratio_camera: must lie in [0, 1)");
  if (patch_size == 0) fail("patch_size: must be >= 1");
  if (width == 0) fail("width: must be >= 1");
  if (n_pts == 0) fail("n_pts: must be >= 1");
  if (n_train_scenes == 0) fail("n_train_scenes: must be >= 1");
  if (batch_size == 0) fail("batch_size: must be >= 1");
  if (total_steps == 0) fail("total_steps: must be >= 1");
  if (!(w_voxel >= 0.0) || !(w_image >= 0.0) || w_voxel + w_image == 0.0)
    fail("loss_weights: must be non-negative and not both zero");
  const auto& o = optimizer;
  if (!(o.base_lr >= 0.0)) fail("optimizer.base_lr: must be >= 0");
  if (!(o.weight_decay >= 0.0)) fail("optimizer.weight_decay: must be >= 0");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) fail("optimizer.beta1: must lie in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) fail("optimizer.beta2: must lie in [0, 1)");
  if (!(o.eps > 0.0)) fail("optimizer.eps: must be > 0");
  const auto check_stack = [&](const char* name, const StackConfig& s) {
    try {
      encoder_config(s).validate();
    } catch (const ConfigError& e) {
      fail(std::string(name) + ": " + e.what());
    }
  };
  check_stack("encoder_lidar", encoder_lidar);
  check_stack("encoder_camera", encoder_camera);
  check_stack("decoder_voxel", decoder_voxel);
  check_stack("decoder_image", decoder_image);
  try {
    sca.validate();
  } catch (const ConfigError& e) {
    fail(std::string("sca: ") + e.what());
  }
  try {
    mmim.validate(2 * width);
  } catch (const ConfigError& e) {
    fail(std::string("mmim: ") + e.what());
  }
}

RunConfig desk_config() {
  RunConfig c;
  c.volume.cell_size = {5.0, 5.0, 4.0};
  return c;
}

RunConfig full_scale_config() {
  RunConfig c;
  c.volume.cell_size = {0.5, 0.5, 4.0};
  c.sca.blocks = 6;
  c.sca.hidden = 256;
  c.optimizer.base_lr = 5e-4;
  c.optimizer.warmup_steps = 1000;
  return c;
}

void apply_lr_preset(RunConfig& cfg, const std::string& preset) {
  if (preset == "desk") {
    cfg.optimizer.base_lr = 1e-3;
  } else if (preset == "supplement") {
    cfg.optimizer.base_lr = 5e-4;
  } else if (preset == "main-text") {
    cfg.optimizer.base_lr = 2.5e-5;
  } else {
    throw ConfigError("lr preset: expected desk, supplement or main-text, got \"" + preset + "\"");
  }
}

namespace {

json range_json(const std::array<double, 2>& r) { return json::array({r[0], r[1]}); }

json stack_json(const StackConfig& s) {
  return {{"depth", s.depth}, {"heads", s.heads}, {"mlp_ratio", s.mlp_ratio}};
}

// Reads members of one JSON object, remembering which keys were consumed so
// that leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("expected a string");
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  template <std::size_t N>
  void get_array(const char* key, std::array<double, N>& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_array() || it->size() != N) throw ConfigError(field(key) + ": expected " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      if (!(*it)[i].is_number()) throw ConfigError(field(key) + ": expected numbers");
      out[i] = (*it)[i].template get<double>();
    }
  }

  /// Nested member, or nullptr when absent.
  const json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_stack(const json* j, const std::string& path, StackConfig& s) {
  if (!j) return;
  ObjectReader r(*j, path);
  r.get("depth", s.depth);
  r.get("heads", s.heads);
  r.get("mlp_ratio", s.mlp_ratio);
  r.finish();
}

}  // namespace

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_train_scenes"] = c.n_train_scenes;
  j["n_val_scenes"] = c.n_val_scenes;
  j["volume"] = {{"x_range", range_json(c.volume.x_range)},
                 {"y_range", range_json(c.volume.y_range)},
                 {"z_range", range_json(c.volume.z_range)},
                 {"cell_size", json::array({c.volume.cell_size[0], c.volume.cell_size[1], c.volume.cell_size[2]})}};
  j["interaction_space"] = to_string(c.interaction_space);
  j["mask_ratio_lidar"] = c.mask_ratio_lidar;
  j["mask_ratio_camera"] = c.mask_ratio_camera;
  j["patch_size"] = c.patch_size;
  j["width"] = c.width;
  j["learned_patch_pos"] = c.learned_patch_pos;
  j["encoder_lidar"] = stack_json(c.encoder_lidar);
  j["encoder_camera"] = stack_json(c.encoder_camera);
  j["sca"] = {{"blocks", c.sca.blocks},
              {"hidden", c.sca.hidden},
              {"n_ref", c.sca.n_ref},
              {"points", c.sca.points},
              {"heads", c.sca.heads}};
  j["mmim"] = {{"blocks", c.mmim.blocks}, {"heads", c.mmim.heads}, {"points", c.mmim.points}, {"hidden", c.mmim.hidden}};
  j["decoder_voxel"] = stack_json(c.decoder_voxel);
  j["decoder_image"] = stack_json(c.decoder_image);
  j["n_pts"] = c.n_pts;
  j["loss_weights"] = {{"voxel", c.w_voxel}, {"image", c.w_image}};
  j["masked_only_img_loss"] = c.masked_only_img_loss;
  j["optimizer"] = {{"base_lr", c.optimizer.base_lr},     {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},         {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},             {"warmup_steps", c.optimizer.warmup_steps}};
  j["total_steps"] = c.total_steps;
  j["batch_size"] = c.batch_size;
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text, const RunConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c = base;
  ObjectReader r(doc, "");
  r.get("seed", c.seed);
  r.get("n_train_scenes", c.n_train_scenes);
  r.get("n_val_scenes", c.n_val_scenes);
  if (const json* v = r.child("volume")) {
    ObjectReader vr(*v, "volume");
    vr.get_array("x_range", c.volume.x_range);
    vr.get_array("y_range", c.volume.y_range);
    vr.get_array("z_range", c.volume.z_range);
    vr.get_array("cell_size", c.volume.cell_size);
    vr.finish();
  }
  std::string space = to_string(c.interaction_space);
  r.get("interaction_space", space);
  c.interaction_space = interaction_space_from_string(space);
  r.get("mask_ratio_lidar", c.mask_ratio_lidar);
  r.get("mask_ratio_camera", c.mask_ratio_camera);
  r.get("patch_size", c.patch_size);
  r.get("width", c.width);
  r.get("learned_patch_pos", c.learned_patch_pos);
  read_stack(r.child("encoder_lidar"), "encoder_lidar", c.encoder_lidar);
  read_stack(r.child("encoder_camera"), "encoder_camera", c.encoder_camera);
  if (const json* s = r.child("sca")) {
    ObjectReader sr(*s, "sca");
    sr.get("blocks", c.sca.blocks);
    sr.get("hidden", c.sca.hidden);
    sr.get("n_ref", c.sca.n_ref);
    sr.get("points", c.sca.points);
    sr.get("heads", c.sca.heads);
    sr.finish();
  }
  if (const json* m = r.child("mmim")) {
    ObjectReader mr(*m, "mmim");
    mr.get("blocks", c.mmim.blocks);
    mr.get("heads", c.mmim.heads);
    mr.get("points", c.mmim.points);
    mr.get("hidden", c.mmim.hidden);
    mr.finish();
  }
  read_stack(r.child("decoder_voxel"), "decoder_voxel", c.decoder_voxel);
  read_stack(r.child("decoder_image"), "decoder_image", c.decoder_image);
  r.get("n_pts", c.n_pts);
  if (const json* w = r.child("loss_weights")) {
    ObjectReader wr(*w, "loss_weights");
    wr.get("voxel", c.w_voxel);
    wr.get("image", c.w_image);
    wr.finish();
  }
  r.get("masked_only_img_loss", c.masked_only_img_loss);
  if (const json* o = r.child("optimizer")) {
    ObjectReader orr(*o, "optimizer");
    orr.get("base_lr", c.optimizer.base_lr);
    orr.get("weight_decay", c.optimizer.weight_decay);
    orr.get("beta1", c.optimizer.beta1);
    orr.get("beta2", c.optimizer.beta2);
    orr.get("eps", c.optimizer.eps);
    orr.get("warmup_steps", c.optimizer.warmup_steps);
    orr.finish();
  }
  r.get("total_steps", c.total_steps);
  r.get("batch_size", c.batch_size);
  r.finish();
  c.validate();
  return c;
}

RunConfig load_config_file(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

}  // namespace volfuse
