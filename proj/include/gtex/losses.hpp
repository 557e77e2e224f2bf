// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gtex/config.hpp"
#include "gtex/model.hpp"
#include "gtex/sampling.hpp"

namespace gtex {

namespace detail {

inline ad::Tensor gather_points(const std::vector<Vec3>& points,
                                std::span<const std::size_t> batch) {
  std::vector<double> v;
  v.reserve(batch.size() * 3);
  for (std::size_t i : batch) {
    v.push_back(points[i].x);
    v.push_back(points[i].y);
    v.push_back(points[i].z);
  }
  return ad::Tensor({batch.size(), 3}, std::move(v));
}

inline ad::Tensor gather_scalars(const std::vector<double>& values,
                                 std::span<const std::size_t> batch) {
  std::vector<double> v;
  v.reserve(batch.size());
  for (std::size_t i : batch) v.push_back(values[i]);
  return ad::Tensor({batch.size(), 1}, std::move(v));
}

}  // namespace detail

/// Geometry data term: mean L1 between predicted and ground-truth SDF over
/// the batch, with both values clamped to [-clamp_band, clamp_band] first
/// (clamp_band <= 0 disables clamping).
inline ad::Tensor loss_geo(ad::Tape* tape, const ImplicitModel& model,
                           const SdfSamples& samples, std::span<const std::size_t> batch,
                           const LatentCode& z_shape, double clamp_band) {
  if (batch.empty()) throw Error("loss_geo: empty batch");
  ad::Tensor points = detail::gather_points(samples.points, batch);
  ad::Tensor target = detail::gather_scalars(samples.sdf, batch);
  ad::Tensor pred = model.instance_sdf(tape, points, z_shape);
  if (clamp_band > 0) {
    pred = ad::clamp(tape, pred, -clamp_band, clamp_band);
    target = ad::clamp(tape, target, -clamp_band, clamp_band);
  }
  return ad::l1_mean(tape, pred, target);
}

/// Texture data term: mean per-point L1 color error over surface samples.
/// The surface-tolerance check is suppressed: ground-truth points are
/// on-surface by construction.
inline ad::Tensor loss_tex(ad::Tape* tape, const ImplicitModel& model,
                           const SurfaceSamples& samples, std::span<const std::size_t> batch,
                           const LatentCode& z_shape, const LatentCode& z_tex,
                           const LatentCode* z_pose, const LocalFeature& z_loc) {
  if (batch.empty()) throw Error("loss_tex: empty batch");
  ad::Tensor points = detail::gather_points(samples.points, batch);
  std::vector<double> c;
  c.reserve(batch.size() * 3);
  for (std::size_t i : batch) {
    c.push_back(samples.colors[i].x);
    c.push_back(samples.colors[i].y);
    c.push_back(samples.colors[i].z);
  }
  ad::Tensor target({batch.size(), 3}, std::move(c));
  ad::Tensor pred = model.surface_color(tape, points, z_shape, z_tex, z_pose, z_loc,
                                        /*enforce_surface=*/false);
  return ad::l1_mean(tape, pred, target);
}

/// Direct supervision of the template SDF decoder F; never touches the warp.
inline ad::Tensor loss_tp_sdf(ad::Tape* tape, const ImplicitModel& model,
                              const SdfSamples& template_samples,
                              std::span<const std::size_t> batch) {
  if (batch.empty()) throw Error("loss_tp_sdf: empty batch");
  ad::Tensor points = detail::gather_points(template_samples.points, batch);
  ad::Tensor target = detail::gather_scalars(template_samples.sdf, batch);
  return ad::l1_mean(tape, model.template_sdf(tape, points), target);
}

/// Sparse correspondence term: mean L1 between warped instance keypoints and
/// the name-matched template keypoints.
inline ad::Tensor loss_kps(ad::Tape* tape, const ImplicitModel& model,
                           const Keypoints& instance_kps, const Keypoints& template_kps,
                           const LatentCode& z_shape) {
  if (instance_kps.size() == 0) throw Error("loss_kps: no keypoints");
  if (instance_kps.names != template_kps.names) {
    throw Error("loss_kps: keypoint names do not match the template");
  }
  std::vector<double> src, dst;
  src.reserve(instance_kps.size() * 3);
  dst.reserve(instance_kps.size() * 3);
  for (std::size_t i = 0; i < instance_kps.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      src.push_back(instance_kps.positions[i][k]);
      dst.push_back(template_kps.positions[i][k]);
    }
  }
  ad::Tensor points({instance_kps.size(), 3}, std::move(src));
  ad::Tensor target({instance_kps.size(), 3}, std::move(dst));
  return ad::l1_mean(tape, model.warp(tape, points, z_shape), target);
}

/// Orientation term on the sin-cos encoding.
inline ad::Tensor loss_pose(ad::Tape* tape, const ad::Tensor& o_pred, double yaw_true) {
  if (o_pred.size() != 2) throw Error("loss_pose: expected a 2-vector");
  const auto o_true = encode_pose(yaw_true);
  ad::Tensor pred = o_pred.rank() == 2 ? o_pred : ad::repeat_row(tape, o_pred, 1);
  ad::Tensor target({1, 2}, {o_true[0], o_true[1]});
  return ad::l1_mean(tape, pred, target);
}

struct LossComponents {
  ad::Tensor tex, geo, kps, tp_sdf, pose;
};

/// L = L_tex + w_g L_geo + w_k L_kps + w_t L_tp_sdf + w_p L_pose.
inline ad::Tensor total_loss(ad::Tape* tape, const LossComponents& c,
                             const LossWeights& w) {
  struct Term {
    const char* name;
    const ad::Tensor* value;
  } terms[] = {{"tex", &c.tex}, {"geo", &c.geo}, {"kps", &c.kps},
               {"tp_sdf", &c.tp_sdf}, {"pose", &c.pose}};
  for (const auto& t : terms) {
    if (!t.value->defined() || t.value->size() != 1)
      throw Error(std::string("total_loss: component '") + t.name + "' must be scalar");
    if (!std::isfinite(t.value->item()))
      throw Error(std::string("total_loss: component '") + t.name + "' is not finite");
  }
  ad::Tensor out = ad::add(tape, c.tex, ad::scale(tape, c.geo, w.w_g));
  out = ad::add(tape, out, ad::scale(tape, c.kps, w.w_k));
  out = ad::add(tape, out, ad::scale(tape, c.tp_sdf, w.w_t));
  out = ad::add(tape, out, ad::scale(tape, c.pose, w.w_p));
  return out;
}

}  // namespace gtex
