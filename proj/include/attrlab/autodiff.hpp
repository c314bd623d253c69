#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attrlab/model.hpp"

namespace attrlab {

struct GradientSet {
  // Gradient of the seeded output w.r.t. each trace input, in trace.inputs
  // order, same shape as the input node's value (pixel column, token
  // embedding rows, or a scalar leaf).
  std::vector<Matrix> d_inputs;
  std::map<std::string, Matrix> d_params;
};

// Exact reverse-mode gradients of logits[target] through a completed trace.
GradientSet backward(const ForwardTrace& trace, int target);

// Same walk with an arbitrary seed on the logits row (cross-entropy training
// seeds softmax(logits) - onehot here).
GradientSet backward_from(const ForwardTrace& trace, const RowVector& d_logits);

// Central-difference check of d_input on randomly sampled coordinates.
// Returns the max relative error with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const ModelGraph& m, const Matrix& input, int target, double h,
                  int n_coords = 50, std::uint64_t seed = 0);
double grad_check_tokens(const ModelGraph& m, const std::vector<int>& tokens, int target,
                         double h, int n_coords = 50, std::uint64_t seed = 0);

}  // namespace attrlab
