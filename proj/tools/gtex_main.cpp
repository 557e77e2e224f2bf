// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface for the geometry-texture implicit representation:
// dataset synthesis, preparation, joint training, iso-surface extraction,
// texture transfer, latent interpolation, and evaluation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gtex/apps.hpp"
#include "gtex/boxcar.hpp"
#include "gtex/checkpoint.hpp"
#include "gtex/config.hpp"
#include "gtex/data.hpp"
#include "gtex/extract.hpp"
#include "gtex/metrics.hpp"
#include "gtex/train.hpp"

namespace fs = std::filesystem;
using namespace gtex;

namespace {

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t count = 8;
  std::string out;
  int resolution = 24;
};

struct PrepareArgs {
  std::string data, out;
  PrepareOptions opt;
};

struct TrainArgs {
  std::string data, config, out;
  std::int64_t steps = -1;
  std::int64_t seed = -1;
  bool quiet = false;
};

struct ExtractArgs {
  std::string ckpt, instance, out;
  std::size_t res = 128;
  int workers = 1;
};

struct TransferArgs {
  std::string ckpt, shape_of, texture_of, out;
  std::size_t res = 128;
  int workers = 1;
};

struct InterpArgs {
  std::string ckpt, from, to, kind = "shape", out, shape_of;
  std::size_t steps = 4;
  std::size_t res = 96;
  int workers = 1;
};

struct EvalArgs {
  std::string ckpt, data, out;
  std::size_t res = 96;
  std::uint64_t seed = 900;
  std::size_t held_sdf = 4000, held_surface = 4000, chamfer_n = 20000;
  int workers = 1;
};

LatentCode pose_for(const ImplicitModel& model, const LatentRegistry& registry,
                    const TrainConfig& config, const std::string& id, bool& present) {
  present = config.pose_conditioning && registry.has_pose(id);
  if (!present) return LatentCode{CodeKind::Pose, ad::Tensor::zeros({model.dims().pose})};
  return model.lift_pose(nullptr, registry.pose_observation(id));
}

int run_synth(const SynthArgs& a) {
  write_family(generate_family(a.seed, a.count, {}, a.resolution), a.out);
  std::cout << "wrote " << a.count << " instances + template to " << a.out << "\n";
  return 0;
}

int run_prepare(const PrepareArgs& a) {
  Manifest m = prepare_dataset(a.data, a.out, a.opt);
  std::cout << "prepared " << m.instances.size() << " instances into " << a.out << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig config = load_config(a.config);
  if (a.steps >= 0) config.steps = static_cast<std::size_t>(a.steps);
  if (a.seed >= 0) config.seed = static_cast<std::uint64_t>(a.seed);

  const Manifest manifest = load_manifest(a.data);
  TrainingSet set = load_training_set(manifest);

  std::ofstream csv(a.out + ".loss.csv");
  if (!csv) throw Error("cannot write loss log next to " + a.out);
  csv << loss_csv_header() << "\n";
  csv.precision(10);

  TrainResult result =
      train(set.instances, set.tmpl(), config, [&](const LossRow& row) {
        csv << to_csv(row) << "\n";
        if (!a.quiet && (row.step % 100 == 0 || row.step + 1 == config.steps)) {
          std::cerr << "step " << row.step << " total " << row.total << " geo " << row.geo
                    << " tex " << row.tex << " kps " << row.kps << "\n";
        }
      });

  save_checkpoint(make_checkpoint(result.model, result.registry, config,
                                  set.tmpl().instance_id, config.steps),
                  a.out);
  std::cout << "checkpoint written to " << a.out << " (" << config.steps << " steps)\n";
  return 0;
}

int run_extract(const ExtractArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  RestoredModel restored = restore_model(ckpt);
  GridSpec grid;
  grid.resolution = a.res;
  LatentCode zs = restored.registry.shape(a.instance);
  LatentCode zt = restored.registry.texture(a.instance);
  Mesh mesh = extract_instance(restored.model, zs, grid, a.workers);
  if (mesh.triangles.empty()) throw Error("extraction produced an empty mesh");
  bool pose_present = false;
  LatentCode zp = pose_for(restored.model, restored.registry, ckpt.config, a.instance,
                           pose_present);
  mesh = colorize(restored.model, mesh, zs, zt, pose_present ? &zp : nullptr);
  export_mesh(mesh, a.out);
  std::cout << "extracted " << a.instance << ": " << mesh.vertices.size() << " vertices, "
            << mesh.triangles.size() << " triangles -> " << a.out << "\n";
  return 0;
}

int run_transfer(const TransferArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  RestoredModel restored = restore_model(ckpt);
  GridSpec grid;
  grid.resolution = a.res;
  LatentCode zs = restored.registry.shape(a.shape_of);
  LatentCode zt = restored.registry.texture(a.texture_of);
  bool pose_present = false;
  LatentCode zp = pose_for(restored.model, restored.registry, ckpt.config, a.texture_of,
                           pose_present);
  Mesh mesh = texture_transfer(restored.model, zs, zt, grid,
                               pose_present ? &zp : nullptr, a.workers);
  export_mesh(mesh, a.out);
  std::cout << "shape of " << a.shape_of << " with texture of " << a.texture_of << " -> "
            << a.out << "\n";
  return 0;
}

int run_interp(const InterpArgs& a) {
  if (a.kind != "shape" && a.kind != "tex") throw Error("interp kind must be shape or tex");
  if (a.steps < 1) throw Error("interp needs at least 1 step");
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  RestoredModel restored = restore_model(ckpt);
  GridSpec grid;
  grid.resolution = a.res;
  fs::create_directories(a.out);

  const std::string shape_id = a.shape_of.empty() ? a.from : a.shape_of;
  bool pose_present = false;
  LatentCode zp =
      pose_for(restored.model, restored.registry, ckpt.config, a.from, pose_present);
  const LatentCode* zp_arg = pose_present ? &zp : nullptr;

  if (a.kind == "shape") {
    LatentCode za = restored.registry.shape(a.from);
    LatentCode zb = restored.registry.shape(a.to);
    LatentCode zt = restored.registry.texture(a.from);
    for (std::size_t i = 0; i <= a.steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(a.steps);
      LatentCode z = interpolate_codes(za, zb, t);
      Mesh mesh = extract_instance(restored.model, z, grid, a.workers);
      if (mesh.triangles.empty()) throw Error("empty extraction at t=" + std::to_string(t));
      mesh = colorize(restored.model, mesh, z, zt, zp_arg);
      char name[32];
      std::snprintf(name, sizeof(name), "interp_%03zu.obj", i);
      export_mesh(mesh, fs::path(a.out) / name);
    }
  } else {
    LatentCode zs = restored.registry.shape(shape_id);
    LatentCode ta = restored.registry.texture(a.from);
    LatentCode tb = restored.registry.texture(a.to);
    // geometry is independent of the texture code: extract once, tint K+1 times
    Mesh base = extract_instance(restored.model, zs, grid, a.workers);
    if (base.triangles.empty()) throw Error("empty extraction for " + shape_id);
    for (std::size_t i = 0; i <= a.steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(a.steps);
      Mesh mesh = colorize(restored.model, base, zs, interpolate_codes(ta, tb, t), zp_arg);
      char name[32];
      std::snprintf(name, sizeof(name), "interp_%03zu.obj", i);
      export_mesh(mesh, fs::path(a.out) / name);
    }
  }
  std::cout << "wrote " << a.steps + 1 << " meshes to " << a.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  RestoredModel restored = restore_model(ckpt);
  const Manifest manifest = load_manifest(a.data);

  const ManifestEntry& tentry = manifest.tmpl();
  const Keypoints template_kps = load_keypoints(fs::path(a.data) / tentry.keypoints);

  std::vector<EvalInstance> dataset;
  for (const auto& entry : manifest.instances) {
    restored.registry.shape(entry.id);  // must exist in the checkpoint
    dataset.push_back(EvalInstance{entry.id, load_obj(fs::path(a.data) / entry.mesh),
                                   load_keypoints(fs::path(a.data) / entry.keypoints)});
  }

  EvalOptions opt;
  opt.grid.resolution = a.res;
  opt.held_out_sdf = a.held_sdf;
  opt.held_out_surface = a.held_surface;
  opt.chamfer_samples = a.chamfer_n;
  opt.seed = a.seed;
  opt.sdf_clamp = ckpt.config.clamp;
  opt.workers = a.workers;

  ModelFields fields(restored.model, restored.registry);
  EvalReport report = evaluate(fields, dataset, template_kps, opt);

  std::ofstream out(a.out);
  if (!out) throw Error("cannot write report: " + a.out);
  out << report_to_json(report).dump(2) << "\n";
  std::cout << "chamfer " << report.aggregate.chamfer << " sdf_mae "
            << report.aggregate.sdf_mae << " color_mae " << report.aggregate.color_mae
            << " keypoint_residual " << report.aggregate.keypoint_residual << " -> "
            << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-texture joint implicit representation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic boxcar dataset");
  cmd_synth->add_option("--seed", synth.seed, "rng seed");
  cmd_synth->add_option("--count", synth.count, "number of instances")
      ->check(CLI::PositiveNumber);
  cmd_synth->add_option("--out", synth.out, "output directory")->required();
  cmd_synth->add_option("--resolution", synth.resolution, "wheel tessellation");

  PrepareArgs prep;
  auto* cmd_prepare = app.add_subcommand("prepare", "normalize and sample supervision");
  cmd_prepare->add_option("--data", prep.data, "raw dataset directory")->required();
  cmd_prepare->add_option("--out", prep.out, "prepared output directory")->required();
  cmd_prepare->add_option("--sdf", prep.opt.sdf_count, "SDF samples per instance");
  cmd_prepare->add_option("--surface", prep.opt.surface_count,
                          "surface samples per instance");
  cmd_prepare->add_option("--seed", prep.opt.seed, "sampling seed");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "joint auto-decoder training");
  cmd_train->add_option("--data", tr.data, "prepared dataset directory")->required();
  cmd_train->add_option("--config", tr.config, "training config JSON")->required();
  cmd_train->add_option("--out", tr.out, "checkpoint output path")->required();
  cmd_train->add_option("--steps", tr.steps, "override config steps");
  cmd_train->add_option("--seed", tr.seed, "override config seed");
  cmd_train->add_flag("--quiet", tr.quiet, "suppress progress output");

  ExtractArgs ex;
  auto* cmd_extract = app.add_subcommand("extract", "reconstruct one instance as a mesh");
  cmd_extract->add_option("--ckpt", ex.ckpt, "checkpoint path")->required();
  cmd_extract->add_option("--instance", ex.instance, "instance id")->required();
  cmd_extract->add_option("--res", ex.res, "grid resolution");
  cmd_extract->add_option("--out", ex.out, "output mesh (.obj or .ply)")->required();
  cmd_extract->add_option("--workers", ex.workers, "field evaluation workers");

  TransferArgs tf;
  auto* cmd_transfer = app.add_subcommand("transfer", "couple shape and texture codes");
  cmd_transfer->add_option("--ckpt", tf.ckpt, "checkpoint path")->required();
  cmd_transfer->add_option("--shape-of", tf.shape_of, "geometry source instance")
      ->required();
  cmd_transfer->add_option("--texture-of", tf.texture_of, "texture source instance")
      ->required();
  cmd_transfer->add_option("--res", tf.res, "grid resolution");
  cmd_transfer->add_option("--out", tf.out, "output mesh (.obj or .ply)")->required();
  cmd_transfer->add_option("--workers", tf.workers, "field evaluation workers");

  InterpArgs in;
  auto* cmd_interp = app.add_subcommand("interp", "latent space interpolation");
  cmd_interp->add_option("--ckpt", in.ckpt, "checkpoint path")->required();
  cmd_interp->add_option("--from", in.from, "start instance id")->required();
  cmd_interp->add_option("--to", in.to, "end instance id")->required();
  cmd_interp->add_option("--kind", in.kind, "shape or tex");
  cmd_interp->add_option("--steps", in.steps, "interpolation steps");
  cmd_interp->add_option("--shape-of", in.shape_of,
                         "geometry used for tex interpolation (default: --from)");
  cmd_interp->add_option("--res", in.res, "grid resolution");
  cmd_interp->add_option("--out", in.out, "output directory")->required();
  cmd_interp->add_option("--workers", in.workers, "field evaluation workers");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "metrics on a prepared dataset");
  cmd_eval->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
  cmd_eval->add_option("--data", ev.data, "prepared dataset directory")->required();
  cmd_eval->add_option("--out", ev.out, "report JSON path")->required();
  cmd_eval->add_option("--res", ev.res, "extraction resolution");
  cmd_eval->add_option("--seed", ev.seed, "held-out sampling seed");
  cmd_eval->add_option("--held-sdf", ev.held_sdf, "held-out SDF samples");
  cmd_eval->add_option("--held-surface", ev.held_surface, "held-out surface samples");
  cmd_eval->add_option("--chamfer-samples", ev.chamfer_n, "chamfer samples per side");
  cmd_eval->add_option("--workers", ev.workers, "field evaluation workers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_synth->parsed()) return run_synth(synth);
    if (cmd_prepare->parsed()) return run_prepare(prep);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_extract->parsed()) return run_extract(ex);
    if (cmd_transfer->parsed()) return run_transfer(tf);
    if (cmd_interp->parsed()) return run_interp(in);
    if (cmd_eval->parsed()) return run_eval(ev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
