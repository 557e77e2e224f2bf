// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gtex/common.hpp"
#include "gtex/tensor.hpp"

namespace gtex {

enum class CodeKind { Shape, Texture, Pose };

inline const char* code_kind_name(CodeKind k) {
  switch (k) {
    case CodeKind::Shape: return "shape";
    case CodeKind::Texture: return "texture";
    case CodeKind::Pose: return "pose";
  }
  return "?";
}

/// Conditioning vector with a fixed kind. The vector is rank-1 and may be a
/// trainable parameter (auto-decoder codes) or a derived value (lifted pose).
struct LatentCode {
  CodeKind kind;
  ad::Tensor vector;

  std::size_t dim() const { return vector.size(); }

  void expect(CodeKind k) const {
    if (kind != k) {
      throw Error(std::string("latent code kind mismatch: expected ") + code_kind_name(k) +
                  ", got " + code_kind_name(kind));
    }
  }
};

/// Local texture feature; identically zero in this artifact.
struct LocalFeature {
  ad::Tensor vector;

  static LocalFeature zero(std::size_t dim) {
    return LocalFeature{ad::Tensor::zeros({dim})};
  }

  void validate() const {
    for (double v : vector.value())
      if (v != 0.0) throw Error("local feature must be identically zero");
  }
};

struct Dims {
  std::size_t shape = 64;
  std::size_t tex = 64;
  std::size_t pose = 16;
  std::size_t lift = 64;
  std::size_t loc = 16;
};

struct MlpSpec {
  std::size_t width = 128;
  std::size_t depth = 5;  // hidden layers
};

enum class Activation { Softplus, Relu };

namespace detail {

inline ad::Tensor activate(ad::Tape* tape, const ad::Tensor& x, Activation act) {
  return act == Activation::Softplus ? ad::softplus(tape, x) : ad::relu(tape, x);
}

inline ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain,
                         const std::string& name) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return ad::Tensor({fan_in, fan_out}, std::move(w), true, name);
}

}  // namespace detail

/// Plain fully connected stack: hidden layers with one activation, linear
/// head. Weights are row-major [in x out]; forward maps [N x in] -> [N x out].
struct Mlp {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;
  Activation act = Activation::Softplus;

  ad::Tensor forward(ad::Tape* tape, const ad::Tensor& x) const {
    ad::Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = ad::linear(tape, h, weights[l], biases[l]);
      if (l + 1 < weights.size()) h = detail::activate(tape, h, act);
    }
    return h;
  }

  void collect(std::vector<ad::Tensor>& out) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l]);
      out.push_back(biases[l]);
    }
  }
};

inline Mlp make_mlp(std::size_t in, const MlpSpec& spec, std::size_t out, Activation act,
                    Rng& rng, const std::string& name, double head_gain = 1.0) {
  Mlp mlp;
  mlp.act = act;
  std::size_t prev = in;
  // sqrt(2) keeps signal variance through the one-sided activations
  const double hidden_gain = std::sqrt(2.0);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    mlp.weights.push_back(
        detail::xavier(prev, spec.width, rng, hidden_gain, name + ".w" + std::to_string(l)));
    mlp.biases.push_back(
        ad::Tensor::zeros({spec.width}, true, name + ".b" + std::to_string(l)));
    prev = spec.width;
  }
  mlp.weights.push_back(detail::xavier(prev, out, rng, head_gain,
                                       name + ".w" + std::to_string(spec.depth)));
  mlp.biases.push_back(
      ad::Tensor::zeros({out}, true, name + ".b" + std::to_string(spec.depth)));
  return mlp;
}

// ---------------------------------------------------------------------------
// Pose encoding: yaw -> unit 2-vector, its inverse, both exact.

inline std::array<double, 2> encode_pose(double yaw) {
  if (!std::isfinite(yaw)) throw Error("encode_pose: yaw must be finite");
  return {std::sin(yaw), std::cos(yaw)};
}

inline double decode_pose(const std::array<double, 2>& o) {
  if (o[0] == 0.0 && o[1] == 0.0) throw Error("decode_pose: zero vector has no angle");
  return std::atan2(o[0], o[1]);  // in (-pi, pi]
}

// ---------------------------------------------------------------------------

/// The implicit model of the representation:
///   p_tp = p + warp_mlp(p, z_shape)            (residual warp into template space)
///   s    = sdf_mlp(lift(p_tp))                 (template signed distance)
///   c    = sigmoid(tex_mlp(lift(p_tp), z_pose, fuse(z_tex, z_loc)))
/// The positional lift is a single linear layer shared by F and T. Texture is
/// defined only on the surface; surface_color enforces that unless asked not
/// to. Instance geometry never reads texture or pose codes.
class ImplicitModel {
 public:
  ImplicitModel(const Dims& dims, const MlpSpec& warp_spec, const MlpSpec& sdf_spec,
                const MlpSpec& tex_spec, std::uint64_t seed, double surface_tolerance = 0.01)
      : dims_(dims), surface_tolerance_(surface_tolerance) {
    {
      Rng rng = Rng::stream(seed, 1);
      // tiny head keeps the warp within 1e-3 of identity at initialization
      warp_ = make_mlp(3 + dims.shape, warp_spec, 3, Activation::Softplus, rng, "warp",
                       1e-5);
    }
    {
      Rng rng = Rng::stream(seed, 2);
      lift_w_ = detail::xavier(3, dims.lift, rng, 1.0, "lift.w");
      lift_b_ = ad::Tensor::zeros({dims.lift}, true, "lift.b");
    }
    {
      Rng rng = Rng::stream(seed, 3);
      // zero head: initial predictions sit at 0, inside the training clamp
      // band, where the clamped geometry loss still has gradient
      sdf_ = make_mlp(dims.lift, sdf_spec, 1, Activation::Softplus, rng, "sdf", 0.0);
    }
    {
      Rng rng = Rng::stream(seed, 4);
      tex_ = make_mlp(dims.lift + dims.pose + dims.tex, tex_spec, 3, Activation::Relu, rng,
                      "tex");
    }
    {
      Rng rng = Rng::stream(seed, 5);
      // single hidden layer fusing global and local texture codes
      fuse_ = make_mlp(dims.tex + dims.loc, MlpSpec{dims.tex, 1}, dims.tex,
                       Activation::Relu, rng, "fuse");
    }
    {
      Rng rng = Rng::stream(seed, 6);
      pose_lift_ = make_mlp(2, MlpSpec{dims.pose, 1}, dims.pose, Activation::Softplus, rng,
                            "pose");
    }
  }

  const Dims& dims() const { return dims_; }
  double surface_tolerance() const { return surface_tolerance_; }

  /// Instance space -> template space, p_tp = p + delta(p, z_shape).
  ad::Tensor warp(ad::Tape* tape, const ad::Tensor& points, const LatentCode& z_shape) const {
    z_shape.expect(CodeKind::Shape);
    check_points(points);
    const std::size_t n = points.rows();
    ad::Tensor input =
        ad::concat_cols(tape, points, ad::repeat_row(tape, z_shape.vector, n));
    ad::Tensor delta = warp_.forward(tape, input);
    return ad::add(tape, points, delta);
  }

  /// Template SDF F at template-space points.
  ad::Tensor template_sdf(ad::Tape* tape, const ad::Tensor& points_tp) const {
    check_points(points_tp);
    return sdf_.forward(tape, lift(tape, points_tp));
  }

  /// Instance SDF: F composed with the warp.
  ad::Tensor instance_sdf(ad::Tape* tape, const ad::Tensor& points,
                          const LatentCode& z_shape) const {
    return template_sdf(tape, warp(tape, points, z_shape));
  }

  /// Surface texture at instance-space surface points. Colors are sigmoid
  /// bounded in (0,1)^3. With enforce_surface (the query contract), every
  /// point must satisfy |instance_sdf| <= surface_tolerance.
  ad::Tensor surface_color(ad::Tape* tape, const ad::Tensor& points,
                           const LatentCode& z_shape, const LatentCode& z_tex,
                           const LatentCode* z_pose, const LocalFeature& z_loc,
                           bool enforce_surface = true) const {
    z_shape.expect(CodeKind::Shape);
    z_tex.expect(CodeKind::Texture);
    if (z_pose) z_pose->expect(CodeKind::Pose);
    check_points(points);
    if (z_tex.dim() != dims_.tex || z_loc.vector.size() != dims_.loc) {
      throw Error("surface_color: texture/local code dimensions do not match the model");
    }
    if (enforce_surface) enforce_on_surface(points, z_shape);

    const std::size_t n = points.rows();
    ad::Tensor lifted = lift(tape, warp(tape, points, z_shape));
    ad::Tensor pose_row = z_pose ? z_pose->vector : ad::Tensor::zeros({dims_.pose});
    ad::Tensor fused =
        fuse_.forward(tape, ad::concat_cols(tape, z_tex.vector, z_loc.vector));
    ad::Tensor input = ad::concat_cols(
        tape, ad::concat_cols(tape, lifted, ad::repeat_row(tape, pose_row, n)),
        ad::repeat_row(tape, fused, n));
    return ad::sigmoid(tape, tex_.forward(tape, input));
  }

  /// Pose 2-vector -> d_pose latent through the small pose MLP.
  LatentCode lift_pose(ad::Tape* tape, const ad::Tensor& o) const {
    if (o.size() != 2) throw Error("lift_pose: expected a 2-vector");
    // rank-1 [2] acts as a single row; repeat_row(.,1) keeps it on the tape
    ad::Tensor row = o.rank() == 2 ? o : ad::repeat_row(tape, o, 1);
    return LatentCode{CodeKind::Pose, pose_lift_.forward(tape, row)};
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    warp_.collect(out);
    out.push_back(lift_w_);
    out.push_back(lift_b_);
    sdf_.collect(out);
    tex_.collect(out);
    fuse_.collect(out);
    pose_lift_.collect(out);
    return out;
  }

  /// Worst |instance_sdf| over the given points (used by colorize errors).
  std::pair<double, std::size_t> max_abs_sdf(const ad::Tensor& points,
                                             const LatentCode& z_shape) const {
    ad::Tensor s = instance_sdf(nullptr, points, z_shape);
    double worst = 0;
    std::size_t worst_i = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::abs(s.value()[i]) > worst) {
        worst = std::abs(s.value()[i]);
        worst_i = i;
      }
    }
    return {worst, worst_i};
  }

 private:
  ad::Tensor lift(ad::Tape* tape, const ad::Tensor& points_tp) const {
    return ad::linear(tape, points_tp, lift_w_, lift_b_);
  }

  void enforce_on_surface(const ad::Tensor& points, const LatentCode& z_shape) const {
    const auto [worst, worst_i] = max_abs_sdf(points, z_shape);
    if (worst > surface_tolerance_) {
      throw Error("surface_color: point " + std::to_string(worst_i) +
                  " is off the surface (|sdf| = " + std::to_string(worst) +
                  " > tolerance " + std::to_string(surface_tolerance_) + ")");
    }
  }

  static void check_points(const ad::Tensor& points) {
    if (points.rank() != 2 || points.shape()[1] != 3) {
      throw Error("expected a batch of 3-vectors, got " +
                  ad::detail::shape_str(points.shape()));
    }
  }

  Dims dims_;
  double surface_tolerance_;
  Mlp warp_, sdf_, tex_, fuse_, pose_lift_;
  ad::Tensor lift_w_, lift_b_;
};

}  // namespace gtex
