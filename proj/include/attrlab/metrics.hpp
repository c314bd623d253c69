#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "attrlab/dataio.hpp"
#include "attrlab/explain.hpp"

namespace attrlab {

struct PearsonResult {
  double r = 0.0;
  bool defined = false;  // false when either vector is constant or too short
};

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

enum class CurveOrder { MoRF, LeRF };

struct PerturbationCurve {
  CurveOrder order = CurveOrder::MoRF;
  std::vector<double> step_outputs;  // index 0 = unperturbed score
  int chunk = 1;                     // removal unit: features per step
};

// Removes features cumulatively in attribution order (descending for MoRF,
// ascending for LeRF; ties broken by ascending feature index) and records the
// target logit after each step. Pixel removal zeroes; token removal masks.
// Token curves stop one step short of masking the whole sequence.
PerturbationCurve perturbation_curve(const ModelGraph& m, const Matrix& input,
                                     const Attribution& attr, CurveOrder order,
                                     int chunk, int target);
PerturbationCurve perturbation_curve(const ModelGraph& m, const std::vector<int>& tokens,
                                     const Attribution& attr, CurveOrder order,
                                     int chunk, int target);

// Mean post-removal score, step 0 excluded. Lower is better for MoRF, higher
// for LeRF.
double aopc(const PerturbationCurve& curve);

struct MetricsRow {
  std::string method;
  double loo_r = 0.0;
  double lerf = 0.0;
  double morf = 0.0;
  double delta = 0.0;  // lerf - morf, exact by construction
  int n_examples = 0;
  int n_excluded = 0;  // examples with undefined Pearson
  int n_failed = 0;    // examples where the explainer raised
};

enum class ExplainerKind { LOO, IG, Rollout, AttnLRP, CPLRP, Random };

struct MethodSpec {
  std::string name;
  ExplainerKind kind = ExplainerKind::LOO;
  RuleConfig rules;  // per-layer treatments when kind == AttnLRP
};

struct EvalSettings {
  int eval_n = 200;
  int chunk = 1;
  double epsilon = 1e-6;
  int ig_steps = 50;
  bool rollout_residual = false;
  std::uint64_t seed = 0;  // drives the Random baseline
};

// Per-method means over the evaluation split. The target is the predicted
// class of each unperturbed example for every method and curve.
std::vector<MetricsRow> evaluate_suite(const ModelGraph& m, const SequenceDataset& data,
                                       const std::vector<MethodSpec>& methods,
                                       const EvalSettings& settings);
std::vector<MetricsRow> evaluate_suite(const ModelGraph& m, const ImageDataset& data,
                                       const std::vector<MethodSpec>& methods,
                                       const EvalSettings& settings);

// Fixed header "method,loo_r,lerf,morf,delta".
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace attrlab
