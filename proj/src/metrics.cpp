#include "attrlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace attrlab {

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("pearson: length mismatch, " + std::to_string(x.size()) +
                                " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) return {0.0, false};

  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, false};
  const double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), true};
}

namespace {

// Contiguous chunks of `chunk` features, sorted by total score. stable_sort
// keeps ascending chunk index on ties, which fixes the removal order for
// constant attributions.
std::vector<std::vector<int>> ordered_chunks(const std::vector<double>& scores,
                                             CurveOrder order, int chunk) {
  if (chunk < 1) throw std::invalid_argument("perturbation_curve: chunk must be >= 1");
  const int n = int(scores.size());
  std::vector<std::vector<int>> chunks;
  std::vector<double> totals;
  for (int start = 0; start < n; start += chunk) {
    std::vector<int> members;
    double total = 0.0;
    for (int i = start; i < std::min(start + chunk, n); ++i) {
      members.push_back(i);
      total += scores[i];
    }
    chunks.push_back(std::move(members));
    totals.push_back(total);
  }
  std::vector<int> idx(chunks.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (order == CurveOrder::MoRF) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return totals[a] > totals[b]; });
  } else {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return totals[a] < totals[b]; });
  }
  std::vector<std::vector<int>> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(std::move(chunks[i]));
  return out;
}

}  // namespace

PerturbationCurve perturbation_curve(const ModelGraph& m, const Matrix& input,
                                     const Attribution& attr, CurveOrder order,
                                     int chunk, int target) {
  if (int(attr.scores.size()) != int(input.size())) {
    throw std::invalid_argument("perturbation_curve: attribution does not cover the input");
  }
  PerturbationCurve curve{order, {}, chunk};
  curve.step_outputs.push_back(forward(m, input).logits(target));

  Matrix removed = input;
  for (const auto& members : ordered_chunks(attr.scores, order, chunk)) {
    for (int i : members) removed.data()[i] = 0.0;
    curve.step_outputs.push_back(forward(m, removed).logits(target));
  }
  return curve;
}

PerturbationCurve perturbation_curve(const ModelGraph& m, const std::vector<int>& tokens,
                                     const Attribution& attr, CurveOrder order,
                                     int chunk, int target) {
  if (attr.scores.size() != tokens.size()) {
    throw std::invalid_argument("perturbation_curve: attribution does not cover the input");
  }
  PerturbationCurve curve{order, {}, chunk};
  curve.step_outputs.push_back(forward(m, tokens).logits(target));

  std::vector<std::uint8_t> mask(tokens.size(), 1);
  int active = int(tokens.size());
  for (const auto& members : ordered_chunks(attr.scores, order, chunk)) {
    if (active - int(members.size()) < 1) break;  // keep at least one token
    for (int i : members) mask[i] = 0;
    active -= int(members.size());
    curve.step_outputs.push_back(forward(m, tokens, mask).logits(target));
  }
  return curve;
}

double aopc(const PerturbationCurve& curve) {
  if (curve.step_outputs.size() < 2) {
    throw std::invalid_argument("aopc: curve has no removal steps");
  }
  const double sum = std::accumulate(curve.step_outputs.begin() + 1,
                                     curve.step_outputs.end(), 0.0);
  return sum / double(curve.step_outputs.size() - 1);
}

namespace {

struct MethodAccumulator {
  double r_sum = 0.0;
  int r_count = 0;
  double lerf_sum = 0.0;
  double morf_sum = 0.0;
  int ok = 0;
  int excluded = 0;
  int failed = 0;
};

// Adapter-based core shared by the sequence and image suites. The adapter
// computes per-example attributions and curves.
template <typename Adapter>
std::vector<MetricsRow> run_suite(const Adapter& adapter, int n_examples,
                                  const std::vector<MethodSpec>& methods,
                                  const EvalSettings& settings) {
  if (methods.empty()) throw std::invalid_argument("evaluate_suite: no methods given");

  std::vector<MethodAccumulator> acc(methods.size());
  for (int i = 0; i < n_examples; ++i) {
    const int target = adapter.predicted_class(i);
    Attribution reference;
    try {
      reference = adapter.loo_reference(i, target);
    } catch (const std::exception& e) {
      std::cerr << "evaluate_suite: example " << i << ": LOO failed: " << e.what() << "\n";
      for (auto& a : acc) a.failed++;
      continue;
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      try {
        const Attribution attr = methods[mi].kind == ExplainerKind::LOO
                                     ? reference
                                     : adapter.explain(methods[mi], i, target, settings);
        const PearsonResult pr = pearson(attr.scores, reference.scores);
        if (pr.defined) {
          acc[mi].r_sum += pr.r;
          acc[mi].r_count++;
        } else {
          acc[mi].excluded++;
        }
        acc[mi].lerf_sum += aopc(adapter.curve(i, attr, CurveOrder::LeRF, settings, target));
        acc[mi].morf_sum += aopc(adapter.curve(i, attr, CurveOrder::MoRF, settings, target));
        acc[mi].ok++;
      } catch (const std::exception& e) {
        std::cerr << "evaluate_suite: example " << i << ", method " << methods[mi].name
                  << ": " << e.what() << "\n";
        acc[mi].failed++;
      }
    }
  }

  std::vector<MetricsRow> rows;
  rows.reserve(methods.size());
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    MetricsRow row;
    row.method = methods[mi].name;
    row.loo_r = acc[mi].r_count > 0 ? acc[mi].r_sum / acc[mi].r_count : 0.0;
    row.lerf = acc[mi].ok > 0 ? acc[mi].lerf_sum / acc[mi].ok : 0.0;
    row.morf = acc[mi].ok > 0 ? acc[mi].morf_sum / acc[mi].ok : 0.0;
    row.delta = row.lerf - row.morf;
    row.n_examples = acc[mi].ok;
    row.n_excluded = acc[mi].excluded;
    row.n_failed = acc[mi].failed;
    rows.push_back(std::move(row));
  }
  return rows;
}

int argmax(const RowVector& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return int(best);
}

struct SequenceAdapter {
  const ModelGraph& m;
  const SequenceDataset& data;

  int predicted_class(int i) const { return argmax(forward(m, data.sequences[i]).logits); }

  Attribution loo_reference(int i, int target) const {
    return loo(m, data.sequences[i], target);
  }

  Attribution explain(const MethodSpec& spec, int i, int target,
                      const EvalSettings& s) const {
    const std::vector<int>& toks = data.sequences[i];
    switch (spec.kind) {
      case ExplainerKind::LOO:
        return loo(m, toks, target);
      case ExplainerKind::IG:
        return integrated_gradients(m, toks, target, s.ig_steps);
      case ExplainerKind::Rollout:
        return rollout(m, toks, {.residual = s.rollout_residual});
      case ExplainerKind::AttnLRP:
        return attn_lrp(m, toks, target, spec.rules);
      case ExplainerKind::CPLRP:
        return cp_lrp(m, toks, target, s.epsilon);
      case ExplainerKind::Random:
        return random_attribution(int(toks.size()), FeatureKind::Token,
                                  s.seed + 1000003ull * std::uint64_t(i));
    }
    throw std::logic_error("evaluate_suite: unknown explainer");
  }

  PerturbationCurve curve(int i, const Attribution& attr, CurveOrder order,
                          const EvalSettings& s, int target) const {
    return perturbation_curve(m, data.sequences[i], attr, order, s.chunk, target);
  }
};

struct ImageAdapter {
  const ModelGraph& m;
  const ImageDataset& data;

  int predicted_class(int i) const { return argmax(forward(m, data.images[i]).logits); }

  Attribution loo_reference(int i, int target) const { return loo(m, data.images[i], target); }

  Attribution explain(const MethodSpec& spec, int i, int target,
                      const EvalSettings& s) const {
    const Matrix& img = data.images[i];
    switch (spec.kind) {
      case ExplainerKind::LOO:
        return loo(m, img, target);
      case ExplainerKind::IG:
        return integrated_gradients(m, img, Matrix::Zero(img.rows(), img.cols()), target,
                                    s.ig_steps);
      case ExplainerKind::Rollout:
        throw std::invalid_argument("rollout needs softmax attention over tokens");
      case ExplainerKind::AttnLRP:
        return attn_lrp(m, img, target, spec.rules);
      case ExplainerKind::CPLRP:
        throw std::invalid_argument("cp_lrp applies to softmax attention models");
      case ExplainerKind::Random:
        return random_attribution(int(img.size()), FeatureKind::Pixel,
                                  s.seed + 1000003ull * std::uint64_t(i));
    }
    throw std::logic_error("evaluate_suite: unknown explainer");
  }

  PerturbationCurve curve(int i, const Attribution& attr, CurveOrder order,
                          const EvalSettings& s, int target) const {
    return perturbation_curve(m, data.images[i], attr, order, s.chunk, target);
  }
};

}  // namespace

std::vector<MetricsRow> evaluate_suite(const ModelGraph& m, const SequenceDataset& data,
                                       const std::vector<MethodSpec>& methods,
                                       const EvalSettings& settings) {
  const int n = std::min<int>(settings.eval_n, int(data.sequences.size()));
  return run_suite(SequenceAdapter{m, data}, n, methods, settings);
}

std::vector<MetricsRow> evaluate_suite(const ModelGraph& m, const ImageDataset& data,
                                       const std::vector<MethodSpec>& methods,
                                       const EvalSettings& settings) {
  const int n = std::min<int>(settings.eval_n, int(data.images.size()));
  return run_suite(ImageAdapter{m, data}, n, methods, settings);
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "method,loo_r,lerf,morf,delta\n";
  char buf[160];
  for (const MetricsRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f", row.method.c_str(),
                  row.loo_r, row.lerf, row.morf, row.delta);
    out << buf << '\n';
  }
}

}  // namespace attrlab
