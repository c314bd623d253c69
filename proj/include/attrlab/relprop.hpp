#pragma once

#include <utility>
#include <vector>

#include "attrlab/model.hpp"

namespace attrlab {

// Per-attention-layer propagation treatment. AttnLRP splits relevance across
// both factors of each bilinear product and crosses the softmax with a
// first-order rule; CPLRP holds the attention weights constant, sends all
// readout relevance through V, and skips the softmax entirely (Q, K and the
// weights receive exact zeros).
enum class AttnRule { AttnLRP, CPLRP };

struct RuleConfig {
  double epsilon = 1e-6;
  std::vector<AttnRule> attn_rule_per_layer;  // one entry per attention layer

  static RuleConfig uniform(int n_attention_layers, AttnRule rule, double eps = 1e-6);
};

struct NodeRelevanceSum {
  int node = -1;
  NodeKind kind = NodeKind::Leaf;
  AttnRole role = AttnRole::None;
  double sum = 0.0;
};

struct RelevanceMap {
  std::vector<Matrix> node_relevance;   // parallel to trace.nodes; empty = none
  std::vector<double> input_relevance;  // per feature, trace.inputs order
  // Relevance mass at every visited node, in trace order. Reported, not
  // asserted: the softmax rule does not conserve mass in general.
  std::vector<NodeRelevanceSum> audit;
};

// --- Rule kernels -------------------------------------------------------------

// Linear redistribution R_in[t,i] = sum_j x_ti W_ij / (y_tj + eps sign(y_tj)) R_out[t,j]
// with y = input * W. Rows are independent samples/positions.
Matrix epsilon_linear(const Matrix& R_out, const Matrix& input, const Matrix& W,
                      double eps);

// Bilinear split for O = A V. The factor pair (A_ji, V_ip) contributes
// A_ji V_ip against a 2*O_jp denominator, so A and V each carry half the
// incoming mass in the eps -> 0 limit.
std::pair<Matrix, Matrix> bilinear_av(const Matrix& R_O, const Matrix& A,
                                      const Matrix& V, double eps);

// Bilinear split for Z = Q K^T / sqrt(d_k), returning (R_Q, R_K).
std::pair<Matrix, Matrix> bilinear_qk(const Matrix& R_Z, const Matrix& Q,
                                      const Matrix& K, double d_k, double eps);

// Softmax relevance: R_Z[j,i] = Z_ji (R_A[j,i] - A_ji sum_i' R_A[j,i']).
Matrix softmax_rule(const Matrix& R_A, const Matrix& Z, const Matrix& A);

// Value-only treatment of O = A V: A acts as a constant weight matrix, V gets
// the full mass by the linear rule, A gets exact zeros. Returns (R_A, R_V).
std::pair<Matrix, Matrix> cp_value_only(const Matrix& R_O, const Matrix& A,
                                        const Matrix& V, double eps);

// --- Engine --------------------------------------------------------------------

// Seeds logits[target] with its own value and walks the trace backward,
// applying the configured rule at each attention layer, the linear rule at
// Linear/Embedding/MeanPool/Add nodes, pass-through at ReLU, and the bilinear
// split at multiplication nodes outside attention (scalar chains).
RelevanceMap propagate(const ForwardTrace& trace, int target, const RuleConfig& cfg);

}  // namespace attrlab
