#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "attrlab/model.hpp"
#include "attrlab/relprop.hpp"

namespace attrlab {

enum class FeatureKind { Pixel, Token };

struct Attribution {
  std::vector<double> scores;  // one real per input feature
  FeatureKind feature_kind = FeatureKind::Pixel;
  bool normalized = false;
  std::string method;
  std::string config_digest;
};

// Sum-to-one rescaling, applied only when the raw sum is positive (Pearson is
// computed on raw scores either way; positive rescaling cannot change it).
Attribution normalize(Attribution a);

// CSV rows "index,raw,normalized"; the normalized column is "nan" when the
// raw sum is not positive.
void write_attribution_csv(std::ostream& out, const Attribution& raw);

// --- Exact Leave-One-Out -------------------------------------------------------

// scores[i] = f(x) - f(x with feature i removed), f = logits[target].
// Pixel removal zeroes the pixel; token removal masks the token out of every
// attention row and out of mean pooling.
Attribution loo(const ModelGraph& m, const Matrix& input, int target);
Attribution loo(const ModelGraph& m, const std::vector<int>& tokens, int target);

// --- Integrated Gradients ------------------------------------------------------

// Midpoint-Riemann IG along the straight path from the baseline.
Attribution integrated_gradients(const ModelGraph& m, const Matrix& input,
                                 const Matrix& baseline, int target, int steps = 50);
// Token variant: the path interpolates embedding rows from zero; per-token
// score sums over embedding dimensions.
Attribution integrated_gradients(const ModelGraph& m, const std::vector<int>& tokens,
                                 int target, int steps = 50);

// --- Attention Rollout ---------------------------------------------------------

enum class RolloutReadout { Pooled, Position };

struct RolloutOptions {
  bool residual = false;  // replace A with (A + I)/2, rows renormalized
  RolloutReadout readout = RolloutReadout::Pooled;
  int position = 0;  // readout row when readout == Position
};

// Kernel over per-layer attention matrices, input-side order preserved.
std::vector<double> rollout_scores(const std::vector<Matrix>& attentions,
                                   const RolloutOptions& opts);
// Requires at least one softmax attention layer in the model.
Attribution rollout(const ModelGraph& m, const std::vector<int>& tokens,
                    const RolloutOptions& opts = {});

// --- LRP explainers ------------------------------------------------------------

Attribution attn_lrp(const ModelGraph& m, const Matrix& input, int target,
                     const RuleConfig& cfg);
Attribution attn_lrp(const ModelGraph& m, const std::vector<int>& tokens, int target,
                     const RuleConfig& cfg);
Attribution cp_lrp(const ModelGraph& m, const std::vector<int>& tokens, int target,
                   double eps = 1e-6);

// --- Layer-wise ablation families ----------------------------------------------

enum class AblationFamily { FrontToBack, BackToFront, Single };

struct AblationPlan {
  AblationFamily family = AblationFamily::Single;
  int k = 1;  // 1-based layer count or index
};

// FrontToBack(k): layers 1..k use CPLRP, the rest AttnLRP.
// BackToFront(k): layers k..L use CPLRP. Single(k): only layer k.
RuleConfig ablation_config(const AblationPlan& plan, int n_layers, double eps = 1e-6);

// Seeded uniform noise scores; the reference "uninformed" attribution.
Attribution random_attribution(int n_features, FeatureKind kind, std::uint64_t seed);

}  // namespace attrlab
