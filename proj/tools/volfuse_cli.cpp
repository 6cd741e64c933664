// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

// volfuse command-line driver: scene generation, pre-training, checks,
// reconstruction dumps and run reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "volfuse/checks.hpp"
#include "volfuse/errors.hpp"
#include "volfuse/pipeline.hpp"
#include "volfuse/random.hpp"

namespace fs = std::filesystem;
using namespace volfuse;

namespace {

int gen_scenes(std::uint64_t seed, std::size_t count, const std::string& out, bool full_scale) {
  fs::create_directories(out);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec spec;
    spec.seed = mix_seed(seed, i);
    if (full_scale) {
      spec.image_height = 256;
      spec.image_width = 704;
    }
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.json", i);
    write_scene_file((fs::path(out) / name).string(), generate_scene(spec));
  }
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

RunConfig resolve_config(const std::string& path, bool full_scale, const std::string& lr_preset) {
  const RunConfig base = full_scale ? full_scale_config() : desk_config();
  RunConfig cfg = path.empty() ? base : load_config_file(path, base);
  if (!lr_preset.empty()) apply_lr_preset(cfg, lr_preset);
  cfg.validate();
  return cfg;
}

int pretrain(const RunConfig& cfg, const std::string& scenes_dir, const std::string& out, bool quiet) {
  const auto scenes = load_scene_dir(scenes_dir);
  const auto result = pretrain_run(cfg, scenes, out, [&](const MetricsRow& r) {
    if (!quiet && (r.step % 10 == 0 || r.step + 1 == cfg.total_steps)) {
      std::printf("step %5zu  loss %.6f  chamfer %.6f  occ %.6f  img %.6f  lr %.3g\n", r.step, r.loss_total,
                  r.loss_chamfer, r.loss_occ, r.loss_img, r.lr);
      std::fflush(stdout);
    }
  });
  if (result.aborted) {
    std::cerr << result.abort_message << "\nlast good state written to " << (fs::path(out) / "last_good.ckpt").string()
              << "\n";
    return 3;
  }
  std::printf("done: %zu steps in %.1f s, outputs in %s\n", result.rows.size(), result.wall_time_s, out.c_str());
  return 0;
}

int check(const RunConfig& cfg) {
  const auto results = run_checks(cfg.seed);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%-4s %-32s measured %-12.3g tolerance %-10.3g %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.measured, r.tolerance, r.detail.c_str());
    if (!r.passed) ++failed;
  }
  std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
  if (failed) {
    for (const auto& r : results)
      if (!r.passed) std::fprintf(stderr, "failed: %s\n", r.name.c_str());
    return 1;
  }
  return 0;
}

int report(const std::string& metrics, const std::string& out) {
  const std::string text = make_report(metrics);
  std::ofstream f(out);
  if (!f) throw InputError("cannot write " + out);
  f << text;
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volfuse: multi-modal masked autoencoder pre-training on synthetic driving scenes"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t count = 1;
  std::string out, config_path, scenes_dir, ckpt, scene_file, metrics, lr_preset;
  bool full_scale = false, quiet = false;

  auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic scene files");
  gen->add_option("--seed", seed, "Base seed")->required();
  gen->add_option("--count", count, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--paper-preset", full_scale, "256x704 images instead of 64x176");

  auto* pre = app.add_subcommand("pretrain", "Run masked multi-modal pre-training");
  pre->add_option("--config", config_path, "Run config JSON (desk defaults when omitted)");
  pre->add_option("--scenes", scenes_dir, "Directory of scene files")->required();
  pre->add_option("--out", out, "Output directory")->required();
  pre->add_flag("--paper-preset", full_scale, "Start from the full-scale preset");
  pre->add_option("--lr-preset", lr_preset, "desk | supplement | main-text");
  pre->add_flag("--quiet", quiet, "No per-step progress");

  auto* chk = app.add_subcommand("check", "Run the gradient, oracle and invariant checks");
  chk->add_option("--config", config_path, "Run config JSON; its seed seeds the checks");

  auto* rec = app.add_subcommand("reconstruct", "Dump reconstructions from a checkpoint");
  rec->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  rec->add_option("--scene", scene_file, "Scene file")->required();
  rec->add_option("--out", out, "Output directory")->required();

  auto* rep = app.add_subcommand("report", "Summarize a metrics file as JSON");
  rep->add_option("--metrics", metrics, "metrics.csv")->required();
  rep->add_option("--out", out, "Output JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return gen_scenes(seed, count, out, full_scale);
    if (pre->parsed()) return pretrain(resolve_config(config_path, full_scale, lr_preset), scenes_dir, out, quiet);
    if (chk->parsed()) return check(resolve_config(config_path, false, ""));
    if (rec->parsed()) {
      reconstruct_from_checkpoint(ckpt, scene_file, out);
      std::cout << "wrote reconstruction to " << out << "\n";
      return 0;
    }
    if (rep->parsed()) return report(metrics, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
