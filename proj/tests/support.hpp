// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gtex/model.hpp"

namespace gtex::testing {

/// The fresh model's SDF head is zero-initialized (its field is identically
/// zero until trained). Tests that need a nontrivial untrained field install
/// random head weights first.
inline void randomize_sdf_head(ImplicitModel& model, double scale, std::uint64_t seed) {
  ad::Tensor head;
  for (auto& p : model.parameters()) {
    if (p.name().rfind("sdf.w", 0) == 0) head = p;  // collect order: last one wins
  }
  Rng rng(seed);
  for (double& v : head.value()) v = rng.uniform(-scale, scale);
}

}  // namespace gtex::testing
