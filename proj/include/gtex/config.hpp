// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gtex/adam.hpp"
#include "gtex/model.hpp"

namespace gtex {

/// Weights of the total objective: L = L_tex + w_g L_geo + w_k L_kps
/// + w_t L_tp_sdf + w_p L_pose. The texture term carries implicit weight 1.
struct LossWeights {
  double w_g = 1.0;
  double w_k = 0.5;
  double w_t = 0.5;
  double w_p = 0.1;

  void validate() const {
    if (w_g < 0 || w_k < 0 || w_t < 0 || w_p < 0)
      throw Error("loss weights must be nonnegative");
  }
};

struct BatchConfig {
  std::size_t sdf_points = 4096;       // per step, split across selected instances
  std::size_t surface_points = 2048;
  std::size_t template_points = 1024;
  std::size_t instances_per_step = 0;  // 0 = all instances every step
};

struct TrainConfig {
  Dims dims;
  MlpSpec mlp_warp{128, 5};
  MlpSpec mlp_sdf{128, 5};
  MlpSpec mlp_tex{128, 5};
  LossWeights weights;
  ad::AdamConfig optimizer;
  BatchConfig batch;
  std::uint64_t seed = 42;
  bool pose_conditioning = false;
  double clamp = 0.1;          // SDF clamp band in loss_geo; 0 disables
  double code_reg = 1e-4;      // L2 penalty on latent codes; 0 disables
  double surface_tolerance = 0.01;
  std::size_t steps = 2000;
  double code_init_sigma = 0.01;

  ImplicitModel build_model() const {
    return ImplicitModel(dims, mlp_warp, mlp_sdf, mlp_tex, seed, surface_tolerance);
  }
};

namespace detail {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void get_spec(const nlohmann::json& j, const char* key, MlpSpec& spec) {
  if (!j.contains(key)) return;
  get_if(j.at(key), "width", spec.width);
  get_if(j.at(key), "depth", spec.depth);
}

}  // namespace detail

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    detail::get_if(d, "shape", c.dims.shape);
    detail::get_if(d, "tex", c.dims.tex);
    detail::get_if(d, "pose", c.dims.pose);
    detail::get_if(d, "lift", c.dims.lift);
    detail::get_if(d, "loc", c.dims.loc);
  }
  if (j.contains("mlp")) {
    detail::get_spec(j.at("mlp"), "warp", c.mlp_warp);
    detail::get_spec(j.at("mlp"), "sdf", c.mlp_sdf);
    detail::get_spec(j.at("mlp"), "tex", c.mlp_tex);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    detail::get_if(w, "w_g", c.weights.w_g);
    detail::get_if(w, "w_k", c.weights.w_k);
    detail::get_if(w, "w_t", c.weights.w_t);
    detail::get_if(w, "w_p", c.weights.w_p);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::get_if(o, "lr", c.optimizer.lr);
    detail::get_if(o, "beta1", c.optimizer.beta1);
    detail::get_if(o, "beta2", c.optimizer.beta2);
    detail::get_if(o, "eps", c.optimizer.eps);
  }
  if (j.contains("batch")) {
    const auto& b = j.at("batch");
    detail::get_if(b, "sdf_points", c.batch.sdf_points);
    detail::get_if(b, "surface_points", c.batch.surface_points);
    detail::get_if(b, "template_points", c.batch.template_points);
    detail::get_if(b, "instances_per_step", c.batch.instances_per_step);
  }
  detail::get_if(j, "seed", c.seed);
  detail::get_if(j, "pose_conditioning", c.pose_conditioning);
  detail::get_if(j, "clamp", c.clamp);
  detail::get_if(j, "code_reg", c.code_reg);
  detail::get_if(j, "surface_tolerance", c.surface_tolerance);
  detail::get_if(j, "steps", c.steps);
  detail::get_if(j, "code_init_sigma", c.code_init_sigma);
  c.weights.validate();
  return c;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {
      {"dims",
       {{"shape", c.dims.shape},
        {"tex", c.dims.tex},
        {"pose", c.dims.pose},
        {"lift", c.dims.lift},
        {"loc", c.dims.loc}}},
      {"mlp",
       {{"warp", {{"width", c.mlp_warp.width}, {"depth", c.mlp_warp.depth}}},
        {"sdf", {{"width", c.mlp_sdf.width}, {"depth", c.mlp_sdf.depth}}},
        {"tex", {{"width", c.mlp_tex.width}, {"depth", c.mlp_tex.depth}}}}},
      {"weights",
       {{"w_g", c.weights.w_g},
        {"w_k", c.weights.w_k},
        {"w_t", c.weights.w_t},
        {"w_p", c.weights.w_p}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"batch",
       {{"sdf_points", c.batch.sdf_points},
        {"surface_points", c.batch.surface_points},
        {"template_points", c.batch.template_points},
        {"instances_per_step", c.batch.instances_per_step}}},
      {"seed", c.seed},
      {"pose_conditioning", c.pose_conditioning},
      {"clamp", c.clamp},
      {"code_reg", c.code_reg},
      {"surface_tolerance", c.surface_tolerance},
      {"steps", c.steps},
      {"code_init_sigma", c.code_init_sigma},
  };
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const TrainConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file: " + path.string());
  out << config_to_json(c).dump(2) << "\n";
}

}  // namespace gtex
