// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "volfuse/model.hpp"
#include "volfuse/optim.hpp"

namespace volfuse {

struct MetricsRow {
  std::size_t step = 0;
  double loss_total = 0.0;
  double loss_chamfer = 0.0;
  double loss_occ = 0.0;
  double loss_img = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "step,loss_total,loss_chamfer,loss_occ,loss_img,lr,grad_norm";

/// One CSV line, every float printed with %.17g so that it parses back exactly.
std::string format_metrics_row(const MetricsRow& row);
/// Throws FormatError on a wrong header or malformed row.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::vector<MetricsRow> read_metrics_file(const std::string& path);

/// Thrown when a step produces a non-finite loss or gradient.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Parameters, optimizer moments and the step counter. All randomness after
/// initialization is drawn from streams keyed by (seed, step, batch slot), so
/// the seed and step are the complete random state.
struct Checkpoint {
  RunConfig config;
  ModelShape shape;
  std::size_t step = 0;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

class Trainer {
 public:
  /// Fresh parameters sized for the first scene; every scene must share its
  /// sensor layout.
  Trainer(const RunConfig& cfg, std::vector<Scene> scenes);
  /// Restores parameters, moments and step. Throws ConfigError naming the
  /// first field that does not match the scenes.
  Trainer(const Checkpoint& ckpt, std::vector<Scene> scenes);

  std::size_t step() const { return step_; }
  const Model& model() const { return model_; }
  const RunConfig& config() const { return model_.config(); }

  /// Mask key of batch slot `slot` at `step`.
  std::uint64_t mask_key(std::size_t step, std::size_t slot) const;

  /// One optimizer step. On a non-finite loss or gradient the parameters are
  /// left untouched and TrainingAborted is thrown.
  MetricsRow train_step();
  Checkpoint checkpoint() const;

 private:
  std::vector<Scene> scenes_;
  Model model_;
  AdamW opt_;
  std::size_t step_ = 0;
};

/// Loads every *.json scene in `dir`, sorted by file name.
std::vector<Scene> load_scene_dir(const std::string& dir);

/// Key used for reconstruction dumps and fixed-mask evaluation.
std::uint64_t eval_mask_key(const RunConfig& cfg);

/// Writes view<i>_original.ppm, view<i>_masked.ppm, view<i>_reconstructed.ppm
/// and predicted_points.json / target_points.json (masked voxels, ego frame).
void dump_reconstruction(const Model& model, const Scene& scene, std::uint64_t mask_key, const std::string& out_dir);

/// Loads a checkpoint and dumps the reconstruction of `scene_path`.
void reconstruct_from_checkpoint(const std::string& ckpt_path, const std::string& scene_path,
                                 const std::string& out_dir);

struct PretrainResult {
  std::vector<MetricsRow> rows;
  double wall_time_s = 0.0;
  bool aborted = false;
  std::string abort_message;
};

/// Trains on the first n_train_scenes scenes for cfg.total_steps, writing
/// metrics.csv, run.json, final.ckpt and recon/ under `out_dir`. On abort,
/// last_good.ckpt holds the state before the failing step.
PretrainResult pretrain_run(const RunConfig& cfg, const std::vector<Scene>& scenes, const std::string& out_dir,
                            const std::function<void(const MetricsRow&)>& on_step = {});

/// JSON summary of a metrics file; wall time is read from run.json next to it.
std::string make_report(const std::string& metrics_path);

void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

}  // namespace volfuse
