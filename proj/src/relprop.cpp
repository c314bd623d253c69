#include "attrlab/relprop.hpp"

#include <cmath>
#include <stdexcept>

namespace attrlab {

RuleConfig RuleConfig::uniform(int n_attention_layers, AttnRule rule, double eps) {
  RuleConfig cfg;
  cfg.epsilon = eps;
  cfg.attn_rule_per_layer.assign(std::size_t(n_attention_layers), rule);
  return cfg;
}

Matrix epsilon_linear(const Matrix& R_out, const Matrix& input, const Matrix& W,
                      double eps) {
  if (eps <= 0.0) throw std::invalid_argument("epsilon_linear: eps must be positive");
  if (input.cols() != W.rows() || R_out.rows() != input.rows() ||
      R_out.cols() != W.cols()) {
    throw std::invalid_argument("epsilon_linear: shape mismatch");
  }
  const Matrix y = input * W;
  const Matrix g = R_out.cwiseQuotient(stabilized(y, eps));
  return input.cwiseProduct(g * W.transpose());
}

namespace {

// Shared kernel for C = scale * L * M with denominator 2*C: returns the
// relevance of L and of M.
std::pair<Matrix, Matrix> bilinear_split(const Matrix& R_C, const Matrix& L,
                                         const Matrix& M, const Matrix& C,
                                         double scale, double eps) {
  const Matrix g = R_C.cwiseQuotient(stabilized(2.0 * C, eps));
  Matrix r_l = scale * L.cwiseProduct(g * M.transpose());
  Matrix r_m = scale * M.cwiseProduct(L.transpose() * g);
  return {std::move(r_l), std::move(r_m)};
}

}  // namespace

std::pair<Matrix, Matrix> bilinear_av(const Matrix& R_O, const Matrix& A,
                                      const Matrix& V, double eps) {
  return bilinear_split(R_O, A, V, A * V, 1.0, eps);
}

std::pair<Matrix, Matrix> bilinear_qk(const Matrix& R_Z, const Matrix& Q,
                                      const Matrix& K, double d_k, double eps) {
  const double scale = 1.0 / std::sqrt(d_k);
  const Matrix Kt = K.transpose();
  auto [r_q, r_kt] = bilinear_split(R_Z, Q, Kt, scale * (Q * Kt), scale, eps);
  return {std::move(r_q), Matrix(r_kt.transpose())};
}

Matrix softmax_rule(const Matrix& R_A, const Matrix& Z, const Matrix& A) {
  if (R_A.rows() != Z.rows() || R_A.cols() != Z.cols() || A.rows() != Z.rows() ||
      A.cols() != Z.cols()) {
    throw std::invalid_argument("softmax_rule: shape mismatch");
  }
  Matrix r_z(Z.rows(), Z.cols());
  for (Eigen::Index j = 0; j < Z.rows(); ++j) {
    const double total = R_A.row(j).sum();
    r_z.row(j) = Z.row(j).cwiseProduct(R_A.row(j) - total * A.row(j));
  }
  return r_z;
}

std::pair<Matrix, Matrix> cp_value_only(const Matrix& R_O, const Matrix& A,
                                        const Matrix& V, double eps) {
  const Matrix O = A * V;
  const Matrix g = R_O.cwiseQuotient(stabilized(O, eps));
  Matrix r_v = V.cwiseProduct(A.transpose() * g);
  return {Matrix::Zero(A.rows(), A.cols()), std::move(r_v)};
}

namespace {

struct RelBuffer {
  std::vector<Matrix> rel;

  explicit RelBuffer(std::size_t n) : rel(n) {}

  void accum(int id, const Matrix& delta) {
    if (rel[id].size() == 0) {
      rel[id] = delta;
    } else {
      rel[id] += delta;
    }
  }

  bool has(int id) const { return rel[id].size() != 0; }
  const Matrix& at(int id) const { return rel[id]; }
};

}  // namespace

RelevanceMap propagate(const ForwardTrace& trace, int target, const RuleConfig& cfg) {
  if (trace.output < 0) throw std::invalid_argument("propagate: incomplete trace");
  if (target < 0 || target >= int(trace.logits.size())) {
    throw std::invalid_argument("propagate: target out of range");
  }
  if (cfg.epsilon <= 0.0) throw std::invalid_argument("propagate: eps must be positive");
  if (cfg.attn_rule_per_layer.size() != trace.attn.size()) {
    throw std::invalid_argument("propagate: rule config covers " +
                                std::to_string(cfg.attn_rule_per_layer.size()) +
                                " attention layers, model has " +
                                std::to_string(trace.attn.size()));
  }
  for (std::size_t i = 0; i < trace.attn.size(); ++i) {
    if (!trace.attn[i].softmax && cfg.attn_rule_per_layer[i] == AttnRule::CPLRP) {
      throw std::invalid_argument("propagate: CPLRP applies to softmax attention only "
                                  "(layer " + std::to_string(i) + " is linear)");
    }
  }

  const double eps = cfg.epsilon;
  RelBuffer buf(trace.nodes.size());

  Matrix seed = Matrix::Zero(1, trace.logits.size());
  seed(0, target) = trace.logits(target);
  buf.accum(trace.output, seed);

  RelevanceMap out;

  for (int id = int(trace.nodes.size()) - 1; id >= 0; --id) {
    if (!buf.has(id)) continue;
    const TraceNode& n = trace.nodes[id];
    const Matrix& r = buf.at(id);
    const AttnRule rule = n.attn_layer >= 0 ? cfg.attn_rule_per_layer[n.attn_layer]
                                            : AttnRule::AttnLRP;

    switch (n.kind) {
      case NodeKind::Leaf:
      case NodeKind::TokenEmbed:
        break;
      case NodeKind::PixelEmbed: {
        // X_td = p_t E_td has a single contributor per entry.
        const Matrix ratio = n.value.cwiseQuotient(stabilized(n.value, eps));
        buf.accum(n.lhs, ratio.cwiseProduct(r).rowwise().sum());
        break;
      }
      case NodeKind::Linear: {
        const Matrix& X = trace.nodes[n.lhs].value;
        buf.accum(n.lhs, epsilon_linear(r, X, n.weight, eps));
        break;
      }
      case NodeKind::Bilinear: {
        const Matrix& A = trace.nodes[n.lhs].value;
        const Matrix& B = trace.nodes[n.rhs].value;
        if (rule == AttnRule::CPLRP && n.role == AttnRole::Readout) {
          auto [r_a, r_v] = cp_value_only(r, A, B, eps);
          buf.accum(n.lhs, r_a);  // exact zeros, kept for the audit
          buf.accum(n.rhs, r_v);
          break;
        }
        const Matrix Le = n.trans_lhs ? Matrix(A.transpose()) : A;
        const Matrix Me = n.trans_rhs ? Matrix(B.transpose()) : B;
        auto [r_l, r_m] = bilinear_split(r, Le, Me, n.value, n.scale, eps);
        buf.accum(n.lhs, n.trans_lhs ? Matrix(r_l.transpose()) : r_l);
        buf.accum(n.rhs, n.trans_rhs ? Matrix(r_m.transpose()) : r_m);
        break;
      }
      case NodeKind::SoftmaxRows: {
        if (rule == AttnRule::CPLRP) {
          // Softmax propagation is skipped; the scores get exact zeros.
          buf.accum(n.lhs, Matrix::Zero(n.value.rows(), n.value.cols()));
          break;
        }
        buf.accum(n.lhs, softmax_rule(r, trace.nodes[n.lhs].value, n.value));
        break;
      }
      case NodeKind::Add: {
        // A sum is a linear layer with identity weights; split by contribution.
        const Matrix g = r.cwiseQuotient(stabilized(n.value, eps));
        buf.accum(n.lhs, trace.nodes[n.lhs].value.cwiseProduct(g));
        buf.accum(n.rhs, trace.nodes[n.rhs].value.cwiseProduct(g));
        break;
      }
      case NodeKind::Relu:
        buf.accum(n.lhs, r);
        break;
      case NodeKind::MeanPool: {
        const Matrix& X = trace.nodes[n.lhs].value;
        int count = int(X.rows());
        if (!n.active.empty()) {
          count = 0;
          for (std::uint8_t a : n.active) count += a ? 1 : 0;
        }
        const Matrix g = r.cwiseQuotient(stabilized(n.value, eps));
        Matrix r_x = Matrix::Zero(X.rows(), X.cols());
        for (Eigen::Index t = 0; t < X.rows(); ++t) {
          if (!n.active.empty() && !n.active[t]) continue;
          r_x.row(t) = (X.row(t) / double(count)).cwiseProduct(g.row(0));
        }
        buf.accum(n.lhs, r_x);
        break;
      }
    }
  }

  out.node_relevance = std::move(buf.rel);
  out.audit.reserve(out.node_relevance.size());
  for (std::size_t id = 0; id < out.node_relevance.size(); ++id) {
    if (out.node_relevance[id].size() == 0) continue;
    out.audit.push_back({int(id), trace.nodes[id].kind, trace.nodes[id].role,
                         out.node_relevance[id].sum()});
  }

  out.input_relevance.reserve(std::size_t(trace.feature_count()));
  for (const InputRef& in : trace.inputs) {
    const TraceNode& node = trace.nodes[in.node];
    Matrix& r = out.node_relevance[in.node];
    if (r.size() == 0) r = Matrix::Zero(node.value.rows(), node.value.cols());
    if (in.agg == FeatureAgg::Flatten) {
      for (Eigen::Index i = 0; i < r.size(); ++i) out.input_relevance.push_back(r.data()[i]);
    } else {
      for (Eigen::Index t = 0; t < r.rows(); ++t) out.input_relevance.push_back(r.row(t).sum());
    }
  }
  return out;
}

}  // namespace attrlab
