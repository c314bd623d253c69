#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attrlab/matrix.hpp"

namespace attrlab {

enum class LayerKind { Embedding, Linear, ReLU, LinearAttention, SoftmaxAttention, MeanPool, Classifier };

// The two groupings of the associative product Q K^T V / sqrt(d_k):
//   AVFirst: (Q K^T) V   -- attention-weights-like intermediate (T x T)
//   KVFirst: Q (K^T V)   -- key-value summary intermediate (d x d)
enum class MulOrder { AVFirst, KVFirst };

enum class EmbeddingMode { PixelScale, Token };

struct LayerSpec {
  LayerKind kind;

  // Embedding
  EmbeddingMode mode = EmbeddingMode::PixelScale;
  int table_rows = 0;  // seq_len (PixelScale) or vocab size (Token)
  int dim = 0;

  // Linear / Classifier
  int in_dim = 0;
  int out_dim = 0;

  // Attention blocks
  int d_model = 0;
  MulOrder order = MulOrder::AVFirst;  // LinearAttention only
  bool residual = false;               // SoftmaxAttention: out = x + AV
  int ffn_hidden = 0;                  // SoftmaxAttention: 0 disables the FFN sub-block
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::map<std::string, Matrix> params;
  int d_k = 0;  // key dimension in the 1/sqrt(d_k) scale

  int attention_layer_count() const;
  // Throws if any layer's parameters are missing or shapes do not conform.
  void validate() const;
};

// --- Forward trace -----------------------------------------------------------

enum class NodeKind { Leaf, PixelEmbed, TokenEmbed, Linear, Bilinear, SoftmaxRows, Add, Relu, MeanPool };

enum class AttnRole { None, Query, Key, Value, Scores, Weights, KVProduct, Readout };

struct TraceNode {
  NodeKind kind = NodeKind::Leaf;
  Matrix value;
  int lhs = -1;
  int rhs = -1;

  std::string param;  // parameter name for Linear / PixelEmbed / TokenEmbed
  Matrix weight;      // snapshot of that parameter

  // Bilinear: value = scale * op(lhs) * op(rhs), op = transpose when flagged
  double scale = 1.0;
  bool trans_lhs = false;
  bool trans_rhs = false;

  int attn_layer = -1;
  AttnRole role = AttnRole::None;

  std::vector<int> tokens;        // TokenEmbed: gathered row indices
  int aux = 0;                    // TokenEmbed: vocab size
  std::vector<std::uint8_t> active;  // SoftmaxRows / MeanPool under a mask; empty = all
};

enum class FeatureAgg {
  Flatten,  // one feature per matrix entry (pixels, scalars)
  RowSum    // one feature per row (token embeddings)
};

struct InputRef {
  int node = -1;
  FeatureAgg agg = FeatureAgg::Flatten;
};

// Node ids of one attention layer's cached intermediates. `weights` and
// `scores` stay -1 where the layer has no softmax (linear attention KVFirst
// has `kv_product` instead of `scores`).
struct AttnRecord {
  int layer = -1;
  bool softmax = false;
  int q = -1, k = -1, v = -1;
  int scores = -1, weights = -1, kv_product = -1, readout = -1;
};

struct ForwardTrace {
  std::vector<TraceNode> nodes;
  std::vector<InputRef> inputs;
  std::vector<AttnRecord> attn;
  int output = -1;
  RowVector logits;

  int add(TraceNode n);
  int feature_count() const;
  static int features_of(const TraceNode& n, FeatureAgg agg);
};

// --- Forward passes ----------------------------------------------------------

// Dense input (pixel and scalar models). Any r x c input with r*c equal to the
// embedding's sequence length is accepted and flattened row-major.
ForwardTrace forward(const ModelGraph& m, const Matrix& input);

// Token input. An optional mask (1 = active) removes tokens BERT-style: masked
// columns are excluded from every softmax row and from mean pooling.
ForwardTrace forward(const ModelGraph& m, const std::vector<int>& tokens);
ForwardTrace forward(const ModelGraph& m, const std::vector<int>& tokens,
                     const std::vector<std::uint8_t>& mask);

// Runs the model on a pre-embedded activation, bypassing the Embedding layer.
// This is the integration path for token-level IG.
ForwardTrace forward_embedded(const ModelGraph& m, const Matrix& embedded);

// --- Builders ----------------------------------------------------------------

struct QkvConfig {
  int seq_len = 196;
  int d_model = 32;
  int n_classes = 10;
};

ModelGraph make_qkv_model(const QkvConfig& cfg, MulOrder order);

// Two graphs over one shared parameter set, differing only in multiplication
// grouping. They compute the same function; their traces differ.
std::pair<ModelGraph, ModelGraph> build_qkv_pair(const QkvConfig& cfg,
                                                 const std::map<std::string, Matrix>& shared);
std::pair<ModelGraph, ModelGraph> build_qkv_pair(const QkvConfig& cfg, std::uint64_t seed);

struct EncoderConfig {
  int vocab = 12;
  int seq_len = 12;
  int n_classes = 4;
  int d_model = 32;
  int n_layers = 6;
  int ffn_hidden = 64;
};

ModelGraph make_encoder(const EncoderConfig& cfg, std::uint64_t seed);

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draws in parameter-name order.
void init_params(ModelGraph& m, std::uint64_t seed);

// --- Scalar factorization chains (the y = x1*x2*x3 counterexample) -----------

enum class ChainOrder { Left, Right };

// Left:  h = x1*x2, y = h*x3.  Right: h' = x2*x3, y = x1*h'.
ForwardTrace scalar_chain(ChainOrder order, double x1, double x2, double x3);

}  // namespace attrlab
