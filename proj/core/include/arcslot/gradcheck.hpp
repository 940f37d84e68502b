#pragma once
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "arcslot/tape.hpp"

namespace arcslot {

struct GradCheckReport {
  float max_rel_err = 0.f;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  bool pass = true;
};

// Compares the tape gradient of a scalar-valued function against central
// finite differences, coordinate by coordinate. f must be deterministic and
// smooth at x. Relative error uses a floored denominator: float32 central
// differences cannot resolve relative error on near-zero gradients.
GradCheckReport check_gradients(const std::function<Node(Tape&, Node)>& f, Tensor& x,
                                float h, float tol, float denom_floor = 1.0f);

// Same comparison for a loss built over parameters referenced inside
// build_loss. Samples coordinates uniformly across all listed tensors.
struct SampledGradCheckReport {
  float max_rel_err = 0.f;
  int checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  bool pass = true;
};

SampledGradCheckReport check_gradients_sampled(
    const std::function<Node(Tape&)>& build_loss,
    std::span<const std::pair<std::string, Tensor*>> params,
    int total_samples, float h, float tol, std::uint64_t seed,
    float denom_floor = 1.0f);

float fd_rel_err(float a, float b, float denom_floor);

}  // namespace arcslot
