// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "volfuse/errors.hpp"
#include "volfuse/random.hpp"

namespace volfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'V', 'F', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint64_t kEvalStream = 0xE7A1;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double))) {
    throw FormatError("checkpoint: truncated data for " + what);
  }
  return v;
}

std::string mismatch(const std::string& field, std::size_t ckpt, std::size_t scene) {
  return field + ": checkpoint has " + std::to_string(ckpt) + ", scene has " + std::to_string(scene);
}

ModelShape checked_shape(const Checkpoint& ckpt, const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw InputError("at least one scene is required");
  const ModelShape s = model_shape_for(scenes[0], ckpt.config.patch_size);
  if (s.n_views != ckpt.shape.n_views) throw ConfigError(mismatch("n_views", ckpt.shape.n_views, s.n_views));
  if (s.grid_h != ckpt.shape.grid_h) {
    throw ConfigError(mismatch("grid_h (image height / patch_size)", ckpt.shape.grid_h, s.grid_h));
  }
  if (s.grid_w != ckpt.shape.grid_w) {
    throw ConfigError(mismatch("grid_w (image width / patch_size)", ckpt.shape.grid_w, s.grid_w));
  }
  return ckpt.shape;
}

ModelShape common_shape(const std::vector<Scene>& scenes, std::size_t patch) {
  if (scenes.empty()) throw InputError("at least one scene is required");
  const ModelShape s = model_shape_for(scenes[0], patch);
  for (std::size_t i = 1; i < scenes.size(); ++i) {
    if (model_shape_for(scenes[i], patch) != s) {
      throw InputError("scene " + std::to_string(i) + ": sensor layout differs from scene 0");
    }
  }
  return s;
}

Model restored_model(const Checkpoint& ckpt, const ModelShape& shape) {
  Model model(ckpt.config, shape);
  const ParamList params = model.named_params();
  if (params.size() != ckpt.names.size()) {
    throw ConfigError(mismatch("parameter count", ckpt.names.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (name != ckpt.names[i]) {
      throw ConfigError("parameter " + std::to_string(i) + ": checkpoint has " + ckpt.names[i] + ", model has " + name);
    }
    if (t.shape() != ckpt.shapes[i]) {
      throw ConfigError("parameter " + name + ": checkpoint shape " + shape_str(ckpt.shapes[i]) + ", model shape " + shape_str(t.shape()));
    }
    Tensor leaf = t;
    std::copy(ckpt.values[i].begin(), ckpt.values[i].end(), leaf.mutable_data().begin());
  }
  return model;
}

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

json points_json(const std::vector<Point3>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({p.x(), p.y(), p.z()});
  return arr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.step, r.loss_total, r.loss_chamfer,
                r.loss_occ, r.loss_img, r.lr, r.grad_norm);
  return buf;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics: unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      throw FormatError("metrics: line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields");
    }
    MetricsRow r;
    try {
      std::size_t used = 0;
      r.step = std::stoull(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("step");
      double* fields[] = {&r.loss_total, &r.loss_chamfer, &r.loss_occ, &r.loss_img, &r.lr, &r.grad_norm};
      for (std::size_t k = 0; k < 6; ++k) {
        // strtod rather than stod: stod rejects subnormals (ERANGE on underflow).
        const std::string& s = cells[k + 1];
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) throw std::invalid_argument("value");
        if (errno == ERANGE && !std::isfinite(v)) throw std::out_of_range("value");
        *fields[k] = v;
      }
    } catch (const std::exception&) {
      throw FormatError("metrics: malformed line " + std::to_string(lineno));
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_file(const std::string& path) { return parse_metrics_csv(read_text(path)); }

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json header;
  header["config"] = json::parse(config_to_json(ckpt.config));
  header["shape"] = {{"n_views", ckpt.shape.n_views}, {"grid_h", ckpt.shape.grid_h}, {"grid_w", ckpt.shape.grid_w}};
  header["step"] = ckpt.step;
  header["random_state"] = {{"seed", ckpt.config.seed}, {"next_step", ckpt.step}};
  json params = json::array();
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) params.push_back({{"name", ckpt.names[i]}, {"shape", ckpt.shapes[i]}});
  header["params"] = params;
  const std::string text = header.dump();

  const fs::path tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
      write_doubles(out, ckpt.values[i]);
      write_doubles(out, ckpt.m[i]);
      write_doubles(out, ckpt.v[i]);
    }
    if (!out) throw InputError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw FormatError("checkpoint: " + path + " is not a volfuse checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 30)) throw FormatError("checkpoint: bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw FormatError("checkpoint: truncated header");

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.config = config_from_json(header.at("config").dump());
    const json& s = header.at("shape");
    ckpt.shape = {s.at("n_views").get<std::size_t>(), s.at("grid_h").get<std::size_t>(), s.at("grid_w").get<std::size_t>()};
    ckpt.step = header.at("step").get<std::size_t>();
    for (const auto& p : header.at("params")) {
      ckpt.names.push_back(p.at("name").get<std::string>());
      ckpt.shapes.push_back(p.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    const std::size_t n = shape_numel(ckpt.shapes[i]);
    ckpt.values.push_back(read_doubles(in, n, ckpt.names[i]));
    ckpt.m.push_back(read_doubles(in, n, ckpt.names[i]));
    ckpt.v.push_back(read_doubles(in, n, ckpt.names[i]));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training

Trainer::Trainer(const RunConfig& cfg, std::vector<Scene> scenes)
    : scenes_(std::move(scenes)),
      model_(cfg, common_shape(scenes_, cfg.patch_size)),
      opt_(cfg.optimizer, model_.named_params()) {}

Trainer::Trainer(const Checkpoint& ckpt, std::vector<Scene> scenes)
    : scenes_(std::move(scenes)),
      model_(restored_model(ckpt, checked_shape(ckpt, scenes_))),
      opt_(ckpt.config.optimizer, model_.named_params()),
      step_(ckpt.step) {
  common_shape(scenes_, ckpt.config.patch_size);
  opt_.first_moments() = ckpt.m;
  opt_.second_moments() = ckpt.v;
}

std::uint64_t Trainer::mask_key(std::size_t step, std::size_t slot) const {
  return mix_seed(config().seed, step, slot);
}

MetricsRow Trainer::train_step() {
  const RunConfig& cfg = config();
  MetricsRow row;
  row.step = step_;
  row.lr = learning_rate(cfg.optimizer, step_, cfg.total_steps);
  opt_.zero_grad();
  try {
    Tensor total, chamfer, occ, img;
    const auto acc = [](Tensor& into, const Tensor& t) { into = into.defined() ? add(into, t) : t; };
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Scene& scene = scenes_[(step_ * cfg.batch_size + b) % scenes_.size()];
      const ForwardResult r = model_.forward(scene, mask_key(step_, b));
      acc(total, r.total);
      acc(chamfer, r.chamfer);
      acc(occ, r.occupancy);
      acc(img, r.image);
    }
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    const Tensor loss = scale(total, inv_b);
    row.loss_total = loss.item();
    row.loss_chamfer = chamfer.item() * inv_b;
    row.loss_occ = occ.item() * inv_b;
    row.loss_img = img.item() * inv_b;
    backward(loss);
    row.grad_norm = opt_.grad_norm();
    opt_.step(step_, row.lr);
  } catch (const NumericError& e) {
    throw TrainingAborted("training aborted at step " + std::to_string(step_) + ": " + e.what(), step_);
  }
  ++step_;
  return row;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config();
  c.shape = model_.shape();
  c.step = step_;
  for (const auto& [name, t] : opt_.params()) {
    c.names.push_back(name);
    c.shapes.push_back(t.shape());
    c.values.emplace_back(t.data().begin(), t.data().end());
  }
  c.m = opt_.first_moments();
  c.v = opt_.second_moments();
  return c;
}

std::vector<Scene> load_scene_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw InputError("scene directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no scene files in " + dir);
  std::vector<Scene> scenes;
  for (const auto& f : files) scenes.push_back(read_scene_file(f.string()));
  return scenes;
}

std::uint64_t eval_mask_key(const RunConfig& cfg) { return mix_seed(cfg.seed, kEvalStream); }

// ---------------------------------------------------------------------------
// Artifacts

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<std::uint8_t> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::string magic;
  int maxval = 0;
  Image img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0) throw FormatError("ppm: unsupported header in " + path);
  in.get();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError("ppm: truncated " + path);
  img.rgb.resize(bytes.size());
  std::transform(bytes.begin(), bytes.end(), img.rgb.begin(), [](std::uint8_t b) { return b / 255.0; });
  return img;
}

void dump_reconstruction(const Model& model, const Scene& scene, std::uint64_t mask_key, const std::string& out_dir) {
  NoGradGuard no_grad;
  const ForwardResult r = model.forward(scene, mask_key);
  const ModelShape& s = model.shape();
  const std::size_t patch = model.config().patch_size;
  const std::size_t dim = 3 * patch * patch;

  std::vector<double> masked(r.target_pixels.data().begin(), r.target_pixels.data().end());
  std::vector<double> recon = masked;
  for (std::size_t i = 0; i < r.patch_mask.size(); ++i) {
    if (!r.patch_mask[i]) continue;
    std::fill_n(masked.begin() + i * dim, dim, 0.5);
    std::copy_n(r.predicted_pixels.data().begin() + i * dim, dim, recon.begin() + i * dim);
  }
  const auto masked_images = unpatchify(masked, s.n_views, s.grid_h, s.grid_w, patch);
  const auto recon_images = unpatchify(recon, s.n_views, s.grid_h, s.grid_w, patch);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  for (std::size_t v = 0; v < s.n_views; ++v) {
    const std::string stem = "view" + std::to_string(v);
    write_ppm((dir / (stem + "_original.ppm")).string(), scene.images[v]);
    write_ppm((dir / (stem + "_masked.ppm")).string(), masked_images[v]);
    write_ppm((dir / (stem + "_reconstructed.ppm")).string(), recon_images[v]);
  }

  std::vector<Point3> predicted, target;
  const VolumeSpec& vol = model.volume();
  if (r.predicted_points.defined()) {
    const std::size_t n_pts = r.predicted_points.dim(1);
    const auto data = r.predicted_points.data();
    for (std::size_t j = 0; j < r.masked_coords.size(); ++j) {
      const Point3 center = volume_cell_center(vol, r.masked_coords[j]);
      for (std::size_t k = 0; k < n_pts; ++k) {
        const double* p = data.data() + (j * n_pts + k) * 3;
        predicted.push_back(center + Point3(p[0], p[1], p[2]));
      }
    }
  }
  for (const auto& pts : r.masked_points) target.insert(target.end(), pts.begin(), pts.end());
  write_text(dir / "predicted_points.json", points_json(predicted).dump() + "\n");
  write_text(dir / "target_points.json", points_json(target).dump() + "\n");
}

void reconstruct_from_checkpoint(const std::string& ckpt_path, const std::string& scene_path,
                                 const std::string& out_dir) {
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const Scene scene = read_scene_file(scene_path);
  const Model model = restored_model(ckpt, checked_shape(ckpt, {scene}));
  dump_reconstruction(model, scene, eval_mask_key(ckpt.config), out_dir);
}

PretrainResult pretrain_run(const RunConfig& cfg, const std::vector<Scene>& scenes, const std::string& out_dir,
                            const std::function<void(const MetricsRow&)>& on_step) {
  cfg.validate();
  if (scenes.size() < cfg.n_train_scenes + cfg.n_val_scenes) {
    throw InputError("need " + std::to_string(cfg.n_train_scenes + cfg.n_val_scenes) + " scenes (train + val), found " +
                     std::to_string(scenes.size()));
  }
  const std::vector<Scene> train(scenes.begin(), scenes.begin() + static_cast<std::ptrdiff_t>(cfg.n_train_scenes));
  const std::vector<Scene> val(scenes.begin() + static_cast<std::ptrdiff_t>(cfg.n_train_scenes),
                               scenes.begin() + static_cast<std::ptrdiff_t>(cfg.n_train_scenes + cfg.n_val_scenes));
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  PretrainResult result;
  Trainer trainer(cfg, train);
  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  if (!csv) throw InputError("cannot write " + (dir / "metrics.csv").string());
  csv << kMetricsHeader << "\n";
  const auto start = std::chrono::steady_clock::now();
  while (trainer.step() < cfg.total_steps) {
    MetricsRow row;
    try {
      row = trainer.train_step();
    } catch (const TrainingAborted& e) {
      result.aborted = true;
      result.abort_message = e.what();
      write_checkpoint((dir / "last_good.ckpt").string(), trainer.checkpoint());
      break;
    }
    csv << format_metrics_row(row) << "\n" << std::flush;
    result.rows.push_back(row);
    if (on_step) on_step(row);
  }
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json run;
  run["config"] = json::parse(config_to_json(cfg));
  run["steps_completed"] = result.rows.size();
  run["wall_time_s"] = result.wall_time_s;
  run["aborted"] = result.aborted;
  if (result.aborted) run["abort_message"] = result.abort_message;
  if (!result.aborted) {
    write_checkpoint((dir / "final.ckpt").string(), trainer.checkpoint());
    dump_reconstruction(trainer.model(), train[0], eval_mask_key(cfg), (dir / "recon").string());
    if (!val.empty()) {
      NoGradGuard no_grad;
      double acc = 0.0;
      for (const auto& s : val) acc += trainer.model().forward(s, eval_mask_key(cfg)).total.item();
      run["val_loss_total"] = acc / static_cast<double>(val.size());
    }
  }
  write_text(dir / "run.json", run.dump(2) + "\n");
  return result;
}

std::string make_report(const std::string& metrics_path) {
  const auto rows = read_metrics_file(metrics_path);
  if (rows.empty()) throw FormatError("metrics: no data rows in " + metrics_path);
  const std::size_t window = std::min<std::size_t>(20, rows.size());
  double smoothed = 0.0;
  for (std::size_t i = rows.size() - window; i < rows.size(); ++i) smoothed += rows[i].loss_total;
  smoothed /= static_cast<double>(window);
  const MetricsRow& last = rows.back();

  json report;
  report["steps"] = rows.size();
  report["initial_loss_total"] = rows.front().loss_total;
  report["final_loss_total"] = last.loss_total;
  report["final_smoothed_loss_total"] = smoothed;
  report["smoothing_window"] = window;
  report["loss_reduction_factor"] = rows.front().loss_total / smoothed;
  report["final_losses"] = {{"total", last.loss_total},
                            {"chamfer", last.loss_chamfer},
                            {"occupancy", last.loss_occ},
                            {"image", last.loss_img}};
  report["wall_time_s"] = nullptr;
  const fs::path run_path = fs::path(metrics_path).parent_path() / "run.json";
  if (fs::exists(run_path)) {
    try {
      const json run = json::parse(read_text(run_path.string()));
      if (run.contains("wall_time_s")) report["wall_time_s"] = run["wall_time_s"];
    } catch (const json::exception& e) {
      throw FormatError("report: bad " + run_path.string() + ": " + e.what());
    }
  }
  return report.dump(2) + "\n";
}

}  // namespace volfuse
