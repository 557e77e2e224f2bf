// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gtex/checkpoint.hpp"
#include "gtex/config.hpp"
#include "gtex/data.hpp"
#include "gtex/losses.hpp"
#include "gtex/model.hpp"

namespace gtex {

/// One row of the auto-decoder training set: supervision sampled from a
/// normalized instance plus its semantic keypoints (aligned to the template's
/// name order) and ground-truth yaw.
struct TrainingInstance {
  std::string instance_id;
  SdfSamples sdf;
  SurfaceSamples surface;
  Keypoints keypoints;
  double yaw = 0.0;
};

/// Per-instance trainable codes, optimized jointly with the network weights.
/// Shape and texture codes start from N(0, sigma^2); the pose observation is
/// a free 2-vector supervised toward the sin-cos encoding when pose
/// conditioning is on. Iteration order is instance-id sorted.
class LatentRegistry {
 public:
  LatentRegistry() = default;

  LatentRegistry(const Dims& dims, const std::vector<std::string>& ids, std::uint64_t seed,
                 double sigma, bool with_pose) {
    std::size_t k = 0;
    for (const std::string& id : ids) {
      if (entries_.count(id)) throw Error("duplicate instance id: " + id);
      Rng rng = Rng::stream(seed, k++);
      Entry e;
      e.shape = gaussian(dims.shape, rng, sigma, "z_shape/" + id);
      e.tex = gaussian(dims.tex, rng, sigma, "z_tex/" + id);
      if (with_pose) e.pose_obs = gaussian(2, rng, sigma, "o_pose/" + id);
      entries_.emplace(id, std::move(e));
    }
  }

  bool has(const std::string& id) const { return entries_.count(id) > 0; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
  }

  LatentCode shape(const std::string& id) const {
    return LatentCode{CodeKind::Shape, entry(id).shape};
  }
  LatentCode texture(const std::string& id) const {
    return LatentCode{CodeKind::Texture, entry(id).tex};
  }
  bool has_pose(const std::string& id) const { return entry(id).pose_obs.defined(); }
  ad::Tensor pose_observation(const std::string& id) const {
    const auto& e = entry(id);
    if (!e.pose_obs.defined()) throw Error("no pose code for instance " + id);
    return e.pose_obs;
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    for (const auto& [id, e] : entries_) {
      out.push_back(e.shape);
      out.push_back(e.tex);
      if (e.pose_obs.defined()) out.push_back(e.pose_obs);
    }
    return out;
  }

  std::vector<ad::Tensor> parameters_for(const std::string& id) const {
    const auto& e = entry(id);
    std::vector<ad::Tensor> out = {e.shape, e.tex};
    if (e.pose_obs.defined()) out.push_back(e.pose_obs);
    return out;
  }

  void insert_raw(const std::string& id, ad::Tensor shape, ad::Tensor tex,
                  ad::Tensor pose_obs) {
    Entry e;
    e.shape = std::move(shape);
    e.tex = std::move(tex);
    e.pose_obs = std::move(pose_obs);
    entries_.emplace(id, std::move(e));
  }

 private:
  struct Entry {
    ad::Tensor shape, tex, pose_obs;
  };

  static ad::Tensor gaussian(std::size_t dim, Rng& rng, double sigma, std::string name) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal(0.0, sigma);
    return ad::Tensor({dim}, std::move(v), true, std::move(name));
  }

  const Entry& entry(const std::string& id) const {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error("instance not in latent registry: " + id);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

struct LossRow {
  std::uint64_t step = 0;
  double total = 0, tex = 0, geo = 0, kps = 0, tp_sdf = 0, pose = 0;
};

inline std::string loss_csv_header() {
  return "step,loss_total,loss_tex,loss_geo,loss_kps,loss_tp_sdf,loss_pose";
}

inline std::string to_csv(const LossRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << "," << r.total << "," << r.tex << "," << r.geo << "," << r.kps << ","
     << r.tp_sdf << "," << r.pose;
  return os.str();
}

struct TrainResult {
  ImplicitModel model;
  LatentRegistry registry;
  std::vector<LossRow> log;
};

namespace detail {

inline std::vector<std::size_t> draw_batch(Rng& rng, std::size_t population,
                                           std::size_t count) {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = rng.uniform_index(population);
  return out;
}

/// Mean of scalar tensors (they are never empty here).
inline ad::Tensor mean_of(ad::Tape* tape, const std::vector<ad::Tensor>& xs) {
  ad::Tensor acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ad::add(tape, acc, xs[i]);
  return ad::scale(tape, acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace detail

/// Joint auto-decoder training: every step samples SDF/surface/template
/// minibatches and all keypoints, then takes one Adam step on the network
/// weights and the selected instances' latent codes simultaneously. Codes of
/// instances outside a step's selection are untouched. Deterministic for a
/// fixed config (single worker).
inline TrainResult train(const std::vector<TrainingInstance>& dataset,
                         const TrainingInstance& tmpl, const TrainConfig& config,
                         const std::function<void(const LossRow&)>& on_step = nullptr) {
  if (dataset.empty()) throw Error("train: empty dataset");
  if (tmpl.sdf.size() == 0) throw Error("train: template has no SDF samples");
  for (const auto& inst : dataset) {
    if (inst.sdf.size() == 0 || inst.surface.size() == 0)
      throw Error("train: instance '" + inst.instance_id + "' has no samples");
    if (inst.keypoints.names != tmpl.keypoints.names)
      throw Error("train: keypoints of '" + inst.instance_id +
                  "' are not aligned with the template");
  }

  TrainResult result{config.build_model(),
                     LatentRegistry(config.dims, [&] {
                                      std::vector<std::string> ids;
                                      for (const auto& i : dataset) ids.push_back(i.instance_id);
                                      return ids;
                                    }(),
                                    mix_seed(config.seed, 0xC0DE5), config.code_init_sigma,
                                    config.pose_conditioning),
                     {}};
  ImplicitModel& model = result.model;
  LatentRegistry& registry = result.registry;

  std::vector<ad::Tensor> model_params = model.parameters();
  ad::AdamState opt(config.optimizer);
  Rng rng(mix_seed(config.seed, 0xBA7C4));
  const LocalFeature z_loc = LocalFeature::zero(config.dims.loc);

  const std::size_t n_total = dataset.size();
  const std::size_t n_sel = config.batch.instances_per_step == 0
                                ? n_total
                                : std::min(config.batch.instances_per_step, n_total);
  const std::size_t sdf_per_inst = std::max<std::size_t>(1, config.batch.sdf_points / n_sel);
  const std::size_t surf_per_inst =
      std::max<std::size_t>(1, config.batch.surface_points / n_sel);

  for (std::uint64_t step = 0; step < config.steps; ++step) {
    ad::Tape tape;
    std::vector<ad::Tensor> geo_terms, tex_terms, kps_terms, pose_terms;
    std::vector<ad::Tensor> step_params = model_params;

    for (std::size_t j = 0; j < n_sel; ++j) {
      // rotating selection keeps subset mode deterministic without draws
      const TrainingInstance& inst = dataset[(step * n_sel + j) % n_total];
      const LatentCode zs = registry.shape(inst.instance_id);
      const LatentCode zt = registry.texture(inst.instance_id);

      std::optional<LatentCode> zp;
      if (config.pose_conditioning) {
        zp = model.lift_pose(&tape, registry.pose_observation(inst.instance_id));
        pose_terms.push_back(
            loss_pose(&tape, registry.pose_observation(inst.instance_id), inst.yaw));
      }

      const auto sdf_batch = detail::draw_batch(rng, inst.sdf.size(), sdf_per_inst);
      const auto surf_batch = detail::draw_batch(rng, inst.surface.size(), surf_per_inst);
      geo_terms.push_back(
          loss_geo(&tape, model, inst.sdf, sdf_batch, zs, config.clamp));
      tex_terms.push_back(loss_tex(&tape, model, inst.surface, surf_batch, zs, zt,
                                   zp ? &*zp : nullptr, z_loc));
      kps_terms.push_back(loss_kps(&tape, model, inst.keypoints, tmpl.keypoints, zs));

      const auto inst_params = registry.parameters_for(inst.instance_id);
      step_params.insert(step_params.end(), inst_params.begin(), inst_params.end());
    }

    const auto tp_batch =
        detail::draw_batch(rng, tmpl.sdf.size(), std::max<std::size_t>(1, config.batch.template_points));
    LossComponents components;
    components.geo = detail::mean_of(&tape, geo_terms);
    components.tex = detail::mean_of(&tape, tex_terms);
    components.kps = detail::mean_of(&tape, kps_terms);
    components.tp_sdf = loss_tp_sdf(&tape, model, tmpl.sdf, tp_batch);
    components.pose = pose_terms.empty() ? ad::Tensor::scalar(0.0)
                                         : detail::mean_of(&tape, pose_terms);
    ad::Tensor objective = total_loss(&tape, components, config.weights);

    LossRow row{step,
                objective.item(),
                components.tex.item(),
                components.geo.item(),
                components.kps.item(),
                components.tp_sdf.item(),
                components.pose.item()};

    if (config.code_reg > 0) {
      // standard auto-decoder code penalty; not part of the reported total
      ad::Tensor reg = ad::Tensor::scalar(0.0);
      for (std::size_t j = 0; j < n_sel; ++j) {
        const TrainingInstance& inst = dataset[(step * n_sel + j) % n_total];
        const ad::Tensor zs = registry.shape(inst.instance_id).vector;
        const ad::Tensor zt = registry.texture(inst.instance_id).vector;
        reg = ad::add(&tape, reg, ad::sum(&tape, ad::mul(&tape, zs, zs)));
        reg = ad::add(&tape, reg, ad::sum(&tape, ad::mul(&tape, zt, zt)));
      }
      objective = ad::add(&tape, objective, ad::scale(&tape, reg, config.code_reg));
    }

    if (!std::isfinite(objective.item())) {
      throw Error("training diverged (non-finite loss) at step " + std::to_string(step));
    }

    ad::backward(objective, tape);
    ad::adam_step(step_params, opt);

    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prepared-dataset glue.

struct TrainingSet {
  std::vector<TrainingInstance> instances;  // template included
  std::size_t template_index = 0;

  const TrainingInstance& tmpl() const { return instances[template_index]; }
};

/// Loads every prepared instance (sample caches + normalized keypoints),
/// aligning keypoints to the template's name order.
inline TrainingSet load_training_set(const Manifest& prepared) {
  const ManifestEntry& tentry = prepared.tmpl();
  if (tentry.keypoints.empty()) throw Error("prepared template has no keypoints");
  const Keypoints template_kps = load_keypoints(prepared.dir / tentry.keypoints);

  TrainingSet set;
  for (const auto& entry : prepared.instances) {
    if (entry.samples.empty())
      throw Error("instance '" + entry.id + "' has no prepared samples");
    InstanceSamples samples = load_samples(prepared.dir / entry.samples);
    Keypoints kps = align_keypoints(load_keypoints(prepared.dir / entry.keypoints),
                                    template_kps.names);
    if (entry.id == prepared.template_id) set.template_index = set.instances.size();
    set.instances.push_back(TrainingInstance{entry.id, std::move(samples.sdf),
                                             std::move(samples.surface), std::move(kps),
                                             entry.yaw});
  }
  return set;
}

// ---------------------------------------------------------------------------
// Checkpoint glue.

inline Checkpoint make_checkpoint(const ImplicitModel& model, const LatentRegistry& registry,
                                  const TrainConfig& config, const std::string& template_id,
                                  std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.step = step;
  ckpt.template_id = template_id;
  ckpt.instance_ids = registry.ids();
  for (const auto& t : model.parameters()) ckpt.tensors.emplace_back(t.name(), t);
  for (const auto& id : ckpt.instance_ids) {
    ckpt.tensors.emplace_back("z_shape/" + id, registry.shape(id).vector);
    ckpt.tensors.emplace_back("z_tex/" + id, registry.texture(id).vector);
    if (registry.has_pose(id))
      ckpt.tensors.emplace_back("o_pose/" + id, registry.pose_observation(id));
  }
  return ckpt;
}

struct RestoredModel {
  ImplicitModel model;
  LatentRegistry registry;
};

inline RestoredModel restore_model(const Checkpoint& ckpt) {
  RestoredModel out{ckpt.config.build_model(), LatentRegistry()};
  for (ad::Tensor& param : out.model.parameters()) {
    const ad::Tensor* stored = ckpt.find(param.name());
    if (!stored) throw Error("checkpoint missing tensor: " + param.name());
    if (stored->shape() != param.shape())
      throw Error("checkpoint shape mismatch for tensor: " + param.name());
    std::copy(stored->value().begin(), stored->value().end(), param.value().begin());
  }
  for (const std::string& id : ckpt.instance_ids) {
    const ad::Tensor* zs = ckpt.find("z_shape/" + id);
    const ad::Tensor* zt = ckpt.find("z_tex/" + id);
    if (!zs || !zt) throw Error("checkpoint missing latent codes for instance " + id);
    auto clone = [](const ad::Tensor& t, const std::string& name) {
      return ad::Tensor(std::vector<std::size_t>(t.shape()),
                        std::vector<double>(t.value().begin(), t.value().end()), true, name);
    };
    const ad::Tensor* op = ckpt.find("o_pose/" + id);
    out.registry.insert_raw(id, clone(*zs, "z_shape/" + id), clone(*zt, "z_tex/" + id),
                            op ? clone(*op, "o_pose/" + id) : ad::Tensor());
  }
  return out;
}

}  // namespace gtex
