#include "attrlab/explain.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

#include "attrlab/autodiff.hpp"

namespace attrlab {

Attribution normalize(Attribution a) {
  double total = 0.0;
  for (double v : a.scores) total += v;
  if (total > 0.0) {
    for (double& v : a.scores) v /= total;
    a.normalized = true;
  }
  return a;
}

void write_attribution_csv(std::ostream& out, const Attribution& raw) {
  out << "index,raw,normalized\n";
  double total = 0.0;
  for (double v : raw.scores) total += v;
  char buf[64];
  for (std::size_t i = 0; i < raw.scores.size(); ++i) {
    out << i << ',';
    std::snprintf(buf, sizeof(buf), "%.12g", raw.scores[i]);
    out << buf << ',';
    if (total > 0.0) {
      std::snprintf(buf, sizeof(buf), "%.12g", raw.scores[i] / total);
      out << buf << '\n';
    } else {
      out << "nan\n";
    }
  }
}

// --- LOO -----------------------------------------------------------------------

Attribution loo(const ModelGraph& m, const Matrix& input, int target) {
  const double base = forward(m, input).logits(target);
  Attribution a;
  a.feature_kind = FeatureKind::Pixel;
  a.method = "loo";
  a.scores.reserve(std::size_t(input.size()));
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    Matrix removed = input;
    removed.data()[i] = 0.0;
    a.scores.push_back(base - forward(m, removed).logits(target));
  }
  return a;
}

Attribution loo(const ModelGraph& m, const std::vector<int>& tokens, int target) {
  const double base = forward(m, tokens).logits(target);
  Attribution a;
  a.feature_kind = FeatureKind::Token;
  a.method = "loo";
  a.scores.reserve(tokens.size());
  std::vector<std::uint8_t> mask(tokens.size(), 1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    mask[i] = 0;
    a.scores.push_back(base - forward(m, tokens, mask).logits(target));
    mask[i] = 1;
  }
  return a;
}

// --- Integrated Gradients ------------------------------------------------------

namespace {

void check_steps(int steps) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
}

}  // namespace

Attribution integrated_gradients(const ModelGraph& m, const Matrix& input,
                                 const Matrix& baseline, int target, int steps) {
  check_steps(steps);
  if (baseline.rows() != input.rows() || baseline.cols() != input.cols()) {
    throw std::invalid_argument("integrated_gradients: baseline shape mismatch");
  }
  Matrix avg_grad = Matrix::Zero(input.rows(), input.cols());
  for (int k = 0; k < steps; ++k) {
    const double alpha = (k + 0.5) / steps;
    const Matrix point = baseline + alpha * (input - baseline);
    GradientSet gs = backward(forward(m, point), target);
    // d_input comes back in the flattened leaf layout
    const Matrix& g = gs.d_inputs.at(0);
    for (Eigen::Index i = 0; i < avg_grad.size(); ++i) avg_grad.data()[i] += g.data()[i];
  }
  avg_grad /= double(steps);

  Attribution a;
  a.feature_kind = FeatureKind::Pixel;
  a.method = "ig";
  a.scores.reserve(std::size_t(input.size()));
  const Matrix delta = input - baseline;
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    a.scores.push_back(delta.data()[i] * avg_grad.data()[i]);
  }
  return a;
}

Attribution integrated_gradients(const ModelGraph& m, const std::vector<int>& tokens,
                                 int target, int steps) {
  check_steps(steps);
  const Matrix& E = m.params.at("embed");
  Matrix X(tokens.size(), E.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) X.row(Eigen::Index(i)) = E.row(tokens[i]);

  Matrix avg_grad = Matrix::Zero(X.rows(), X.cols());
  for (int k = 0; k < steps; ++k) {
    const double alpha = (k + 0.5) / steps;
    GradientSet gs = backward(forward_embedded(m, alpha * X), target);
    avg_grad += gs.d_inputs.at(0);
  }
  avg_grad /= double(steps);

  Attribution a;
  a.feature_kind = FeatureKind::Token;
  a.method = "ig";
  a.scores.reserve(tokens.size());
  const Matrix contrib = X.cwiseProduct(avg_grad);  // zero baseline
  for (Eigen::Index t = 0; t < contrib.rows(); ++t) a.scores.push_back(contrib.row(t).sum());
  return a;
}

// --- Attention Rollout ---------------------------------------------------------

std::vector<double> rollout_scores(const std::vector<Matrix>& attentions,
                                   const RolloutOptions& opts) {
  if (attentions.empty()) {
    throw std::invalid_argument("rollout: model has no softmax attention layers");
  }
  const Eigen::Index t = attentions.front().rows();
  Matrix acc = Matrix::Identity(t, t);
  for (const Matrix& layer : attentions) {
    Matrix a = layer;
    if (opts.residual) {
      a = 0.5 * (layer + Matrix::Identity(t, t));
      for (Eigen::Index r = 0; r < a.rows(); ++r) a.row(r) /= a.row(r).sum();
    }
    acc = a * acc;
  }

  RowVector readout;
  if (opts.readout == RolloutReadout::Pooled) {
    readout = acc.colwise().mean();
  } else {
    if (opts.position < 0 || opts.position >= t) {
      throw std::invalid_argument("rollout: readout position out of range");
    }
    readout = acc.row(opts.position);
  }
  return {readout.data(), readout.data() + readout.size()};
}

Attribution rollout(const ModelGraph& m, const std::vector<int>& tokens,
                    const RolloutOptions& opts) {
  ForwardTrace trace = forward(m, tokens);
  std::vector<Matrix> attentions;
  for (const AttnRecord& rec : trace.attn) {
    if (rec.softmax) attentions.push_back(trace.nodes[rec.weights].value);
  }
  Attribution a;
  a.feature_kind = FeatureKind::Token;
  a.method = "rollout";
  a.scores = rollout_scores(attentions, opts);
  return a;
}

// --- LRP explainers ------------------------------------------------------------

namespace {

Attribution from_relevance(const ForwardTrace& trace, int target, const RuleConfig& cfg,
                           FeatureKind kind, std::string method) {
  RelevanceMap rm = propagate(trace, target, cfg);
  Attribution a;
  a.feature_kind = kind;
  a.method = std::move(method);
  a.scores = std::move(rm.input_relevance);
  return a;
}

}  // namespace

Attribution attn_lrp(const ModelGraph& m, const Matrix& input, int target,
                     const RuleConfig& cfg) {
  return from_relevance(forward(m, input), target, cfg, FeatureKind::Pixel, "attnlrp");
}

Attribution attn_lrp(const ModelGraph& m, const std::vector<int>& tokens, int target,
                     const RuleConfig& cfg) {
  return from_relevance(forward(m, tokens), target, cfg, FeatureKind::Token, "attnlrp");
}

Attribution cp_lrp(const ModelGraph& m, const std::vector<int>& tokens, int target,
                   double eps) {
  const RuleConfig cfg = RuleConfig::uniform(m.attention_layer_count(), AttnRule::CPLRP, eps);
  Attribution a = from_relevance(forward(m, tokens), target, cfg, FeatureKind::Token, "cplrp");
  return a;
}

// --- Ablation families ---------------------------------------------------------

RuleConfig ablation_config(const AblationPlan& plan, int n_layers, double eps) {
  if (plan.k < 1 || plan.k > n_layers) {
    throw std::invalid_argument("ablation_config: k = " + std::to_string(plan.k) +
                                " out of range [1, " + std::to_string(n_layers) + "]");
  }
  RuleConfig cfg = RuleConfig::uniform(n_layers, AttnRule::AttnLRP, eps);
  switch (plan.family) {
    case AblationFamily::FrontToBack:
      for (int l = 0; l < plan.k; ++l) cfg.attn_rule_per_layer[l] = AttnRule::CPLRP;
      break;
    case AblationFamily::BackToFront:
      for (int l = plan.k - 1; l < n_layers; ++l) cfg.attn_rule_per_layer[l] = AttnRule::CPLRP;
      break;
    case AblationFamily::Single:
      cfg.attn_rule_per_layer[plan.k - 1] = AttnRule::CPLRP;
      break;
  }
  return cfg;
}

Attribution random_attribution(int n_features, FeatureKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Attribution a;
  a.feature_kind = kind;
  a.method = "random";
  a.scores.resize(std::size_t(n_features));
  for (double& v : a.scores) v = dist(rng);
  return a;
}

}  // namespace attrlab
