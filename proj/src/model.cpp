#include "attrlab/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace attrlab {

namespace {

std::string layer_param(int layer_idx, const char* name) {
  return "L" + std::to_string(layer_idx) + "." + name;
}

const Matrix& param(const ModelGraph& m, const std::string& name) {
  auto it = m.params.find(name);
  if (it == m.params.end()) {
    throw std::invalid_argument("model: missing parameter " + name);
  }
  return it->second;
}

void check_shape(const ModelGraph& m, const std::string& name, Eigen::Index rows,
                 Eigen::Index cols) {
  const Matrix& p = param(m, name);
  if (p.rows() != rows || p.cols() != cols) {
    throw std::invalid_argument("model: parameter " + name + " has shape " + shape_str(p) +
                                ", expected " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
}

}  // namespace

int ModelGraph::attention_layer_count() const {
  int n = 0;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::LinearAttention || l.kind == LayerKind::SoftmaxAttention) ++n;
  }
  return n;
}

void ModelGraph::validate() const {
  int width = -1;  // activation feature width after the current layer
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Embedding:
        check_shape(*this, "embed", l.table_rows, l.dim);
        width = l.dim;
        break;
      case LayerKind::Linear:
      case LayerKind::Classifier: {
        const std::string name =
            l.kind == LayerKind::Classifier ? "head.W" : layer_param(int(i), "W");
        if (width >= 0 && l.in_dim != width) {
          throw std::invalid_argument("model: layer " + std::to_string(i) +
                                      " expects width " + std::to_string(l.in_dim) +
                                      ", got " + std::to_string(width));
        }
        check_shape(*this, name, l.in_dim, l.out_dim);
        width = l.out_dim;
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::MeanPool:
        break;
      case LayerKind::LinearAttention:
      case LayerKind::SoftmaxAttention: {
        if (width >= 0 && l.d_model != width) {
          throw std::invalid_argument("model: attention layer " + std::to_string(i) +
                                      " d_model " + std::to_string(l.d_model) +
                                      " does not match incoming width " +
                                      std::to_string(width));
        }
        check_shape(*this, layer_param(int(i), "Wq"), l.d_model, l.d_model);
        check_shape(*this, layer_param(int(i), "Wk"), l.d_model, l.d_model);
        check_shape(*this, layer_param(int(i), "Wv"), l.d_model, l.d_model);
        if (l.ffn_hidden > 0) {
          check_shape(*this, layer_param(int(i), "ffn.W1"), l.d_model, l.ffn_hidden);
          check_shape(*this, layer_param(int(i), "ffn.W2"), l.ffn_hidden, l.d_model);
        }
        if (d_k <= 0) throw std::invalid_argument("model: d_k must be positive");
        width = l.d_model;
        break;
      }
    }
  }
}

int ForwardTrace::add(TraceNode n) {
  nodes.push_back(std::move(n));
  return int(nodes.size()) - 1;
}

int ForwardTrace::features_of(const TraceNode& n, FeatureAgg agg) {
  return agg == FeatureAgg::Flatten ? int(n.value.size()) : int(n.value.rows());
}

int ForwardTrace::feature_count() const {
  int total = 0;
  for (const InputRef& in : inputs) total += features_of(nodes[in.node], in.agg);
  return total;
}

namespace {

// Incrementally builds a trace; every node snapshots whatever the backward
// passes will need (weights, masks, token ids).
struct Builder {
  const ModelGraph& m;
  ForwardTrace t;
  std::vector<std::uint8_t> mask;  // token mask, empty = all active

  const Matrix& val(int id) const { return t.nodes[id].value; }

  int leaf(Matrix v, FeatureAgg agg, bool as_input = true) {
    TraceNode n;
    n.kind = NodeKind::Leaf;
    n.value = std::move(v);
    const int id = t.add(std::move(n));
    if (as_input) t.inputs.push_back({id, agg});
    return id;
  }

  int linear(int x, const std::string& pname, int attn_layer = -1,
             AttnRole role = AttnRole::None) {
    const Matrix& W = param(m, pname);
    if (val(x).cols() != W.rows()) {
      throw std::invalid_argument("forward: shape mismatch at " + pname + ": " +
                                  shape_str(val(x)) + " * " + shape_str(W));
    }
    TraceNode n;
    n.kind = NodeKind::Linear;
    n.lhs = x;
    n.value = val(x) * W;
    n.param = pname;
    n.weight = W;
    n.attn_layer = attn_layer;
    n.role = role;
    return t.add(std::move(n));
  }

  int bilinear(int a, int b, double scale, bool ta, bool tb, int attn_layer,
               AttnRole role) {
    Matrix ea = ta ? Matrix(val(a).transpose()) : val(a);
    Matrix eb = tb ? Matrix(val(b).transpose()) : val(b);
    if (ea.cols() != eb.rows()) {
      throw std::invalid_argument("forward: bilinear shape mismatch " + shape_str(ea) +
                                  " * " + shape_str(eb));
    }
    TraceNode n;
    n.kind = NodeKind::Bilinear;
    n.lhs = a;
    n.rhs = b;
    n.scale = scale;
    n.trans_lhs = ta;
    n.trans_rhs = tb;
    n.value = scale * (ea * eb);
    n.attn_layer = attn_layer;
    n.role = role;
    return t.add(std::move(n));
  }

  int softmax(int z, int attn_layer) {
    TraceNode n;
    n.kind = NodeKind::SoftmaxRows;
    n.lhs = z;
    n.attn_layer = attn_layer;
    n.role = AttnRole::Weights;
    const Matrix& Z = val(z);
    if (mask.empty()) {
      n.value = softmax_rows(Z);
    } else {
      n.active = mask;
      n.value = Matrix::Zero(Z.rows(), Z.cols());
      for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < Z.cols(); ++c)
          if (mask[c]) zmax = std::max(zmax, Z(r, c));
        double sum = 0.0;
        for (Eigen::Index c = 0; c < Z.cols(); ++c) {
          if (!mask[c]) continue;
          n.value(r, c) = std::exp(Z(r, c) - zmax);
          sum += n.value(r, c);
        }
        n.value.row(r) /= sum;
      }
    }
    return t.add(std::move(n));
  }

  int add_nodes(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols()) {
      throw std::invalid_argument("forward: residual shape mismatch");
    }
    TraceNode n;
    n.kind = NodeKind::Add;
    n.lhs = a;
    n.rhs = b;
    n.value = val(a) + val(b);
    return t.add(std::move(n));
  }

  int relu(int x) {
    TraceNode n;
    n.kind = NodeKind::Relu;
    n.lhs = x;
    n.value = val(x).cwiseMax(0.0);
    return t.add(std::move(n));
  }

  int meanpool(int x) {
    TraceNode n;
    n.kind = NodeKind::MeanPool;
    n.lhs = x;
    const Matrix& X = val(x);
    if (mask.empty()) {
      n.value = X.colwise().mean();
    } else {
      n.active = mask;
      RowVector acc = RowVector::Zero(X.cols());
      int count = 0;
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        if (!mask[r]) continue;
        acc += X.row(r);
        ++count;
      }
      if (count == 0) throw std::invalid_argument("forward: mask removes every token");
      n.value = acc / double(count);
    }
    return t.add(std::move(n));
  }

  int attention(int x, const LayerSpec& spec, int layer_idx) {
    AttnRecord rec;
    rec.layer = int(t.attn.size());
    rec.softmax = spec.kind == LayerKind::SoftmaxAttention;
    const double scale = 1.0 / std::sqrt(double(m.d_k));

    rec.q = linear(x, layer_param(layer_idx, "Wq"), rec.layer, AttnRole::Query);
    rec.k = linear(x, layer_param(layer_idx, "Wk"), rec.layer, AttnRole::Key);
    rec.v = linear(x, layer_param(layer_idx, "Wv"), rec.layer, AttnRole::Value);

    int out = -1;
    if (spec.kind == LayerKind::SoftmaxAttention) {
      rec.scores = bilinear(rec.q, rec.k, scale, false, true, rec.layer, AttnRole::Scores);
      rec.weights = softmax(rec.scores, rec.layer);
      rec.readout = bilinear(rec.weights, rec.v, 1.0, false, false, rec.layer,
                             AttnRole::Readout);
      out = rec.readout;
      if (spec.residual) out = add_nodes(x, out);
      if (spec.ffn_hidden > 0) {
        const int f1 = linear(out, layer_param(layer_idx, "ffn.W1"));
        const int f2 = relu(f1);
        const int f3 = linear(f2, layer_param(layer_idx, "ffn.W2"));
        out = add_nodes(out, f3);
      }
    } else if (spec.order == MulOrder::AVFirst) {
      rec.scores = bilinear(rec.q, rec.k, scale, false, true, rec.layer, AttnRole::Scores);
      rec.readout = bilinear(rec.scores, rec.v, 1.0, false, false, rec.layer,
                             AttnRole::Readout);
      out = rec.readout;
    } else {
      rec.kv_product = bilinear(rec.k, rec.v, scale, true, false, rec.layer,
                                AttnRole::KVProduct);
      rec.readout = bilinear(rec.q, rec.kv_product, 1.0, false, false, rec.layer,
                             AttnRole::Readout);
      out = rec.readout;
    }
    t.attn.push_back(rec);
    return out;
  }

  // Walks layers [first, end) starting from node `cur`.
  ForwardTrace run(int cur, std::size_t first_layer) {
    for (std::size_t i = first_layer; i < m.layers.size(); ++i) {
      const LayerSpec& l = m.layers[i];
      switch (l.kind) {
        case LayerKind::Embedding:
          throw std::invalid_argument("forward: Embedding only allowed as first layer");
        case LayerKind::Linear:
          cur = linear(cur, layer_param(int(i), "W"));
          break;
        case LayerKind::Classifier:
          cur = linear(cur, "head.W");
          break;
        case LayerKind::ReLU:
          cur = relu(cur);
          break;
        case LayerKind::MeanPool:
          cur = meanpool(cur);
          break;
        case LayerKind::LinearAttention:
        case LayerKind::SoftmaxAttention:
          cur = attention(cur, l, int(i));
          break;
      }
    }
    t.output = cur;
    const Matrix& out = t.nodes[cur].value;
    if (out.rows() != 1) {
      throw std::invalid_argument("forward: model output must be a single row, got " +
                                  shape_str(out));
    }
    t.logits = out.row(0);
    return std::move(t);
  }
};

}  // namespace

ForwardTrace forward(const ModelGraph& m, const Matrix& input) {
  if (m.layers.empty()) throw std::invalid_argument("forward: empty model");
  Builder b{m};

  if (m.layers.front().kind == LayerKind::Embedding) {
    const LayerSpec& e = m.layers.front();
    if (e.mode != EmbeddingMode::PixelScale) {
      throw std::invalid_argument("forward: this model takes token input");
    }
    if (int(input.size()) != e.table_rows) {
      throw std::invalid_argument("forward: input has " + std::to_string(input.size()) +
                                  " values, embedding expects " +
                                  std::to_string(e.table_rows));
    }
    // flatten row-major into a column of per-position intensities
    Matrix flat(e.table_rows, 1);
    for (Eigen::Index i = 0; i < input.size(); ++i) flat(i, 0) = input.data()[i];
    const int leaf_id = b.leaf(std::move(flat), FeatureAgg::Flatten);

    const Matrix& E = param(m, "embed");
    TraceNode n;
    n.kind = NodeKind::PixelEmbed;
    n.lhs = leaf_id;
    n.param = "embed";
    n.weight = E;
    n.value = b.val(leaf_id).col(0).asDiagonal() * E;
    const int embed_id = b.t.add(std::move(n));
    return b.run(embed_id, 1);
  }

  const int leaf_id = b.leaf(input, FeatureAgg::Flatten);
  return b.run(leaf_id, 0);
}

ForwardTrace forward(const ModelGraph& m, const std::vector<int>& tokens) {
  return forward(m, tokens, {});
}

ForwardTrace forward(const ModelGraph& m, const std::vector<int>& tokens,
                     const std::vector<std::uint8_t>& mask) {
  if (m.layers.empty() || m.layers.front().kind != LayerKind::Embedding ||
      m.layers.front().mode != EmbeddingMode::Token) {
    throw std::invalid_argument("forward: model does not take token input");
  }
  if (!mask.empty() && mask.size() != tokens.size()) {
    throw std::invalid_argument("forward: mask length does not match sequence length");
  }
  const LayerSpec& e = m.layers.front();
  const Matrix& E = param(m, "embed");

  Builder b{m};
  b.mask = mask;

  TraceNode n;
  n.kind = NodeKind::TokenEmbed;
  n.param = "embed";
  n.weight = E;
  n.tokens = tokens;
  n.aux = e.table_rows;
  n.value = Matrix(tokens.size(), E.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= e.table_rows) {
      throw std::invalid_argument("forward: token id " + std::to_string(tokens[i]) +
                                  " out of range [0, " + std::to_string(e.table_rows) + ")");
    }
    n.value.row(Eigen::Index(i)) = E.row(tokens[i]);
  }
  const int embed_id = b.t.add(std::move(n));
  b.t.inputs.push_back({embed_id, FeatureAgg::RowSum});
  return b.run(embed_id, 1);
}

ForwardTrace forward_embedded(const ModelGraph& m, const Matrix& embedded) {
  if (m.layers.empty() || m.layers.front().kind != LayerKind::Embedding) {
    throw std::invalid_argument("forward_embedded: model has no embedding to bypass");
  }
  if (embedded.cols() != m.layers.front().dim) {
    throw std::invalid_argument("forward_embedded: activation width " +
                                std::to_string(embedded.cols()) + " != embedding dim " +
                                std::to_string(m.layers.front().dim));
  }
  Builder b{m};
  const int leaf_id = b.leaf(embedded, FeatureAgg::RowSum);
  return b.run(leaf_id, 1);
}

// --- Builders ----------------------------------------------------------------

namespace {

void declare_params(ModelGraph& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    switch (l.kind) {
      case LayerKind::Embedding:
        m.params["embed"] = Matrix::Zero(l.table_rows, l.dim);
        break;
      case LayerKind::Linear:
        m.params[layer_param(int(i), "W")] = Matrix::Zero(l.in_dim, l.out_dim);
        break;
      case LayerKind::Classifier:
        m.params["head.W"] = Matrix::Zero(l.in_dim, l.out_dim);
        break;
      case LayerKind::LinearAttention:
      case LayerKind::SoftmaxAttention:
        m.params[layer_param(int(i), "Wq")] = Matrix::Zero(l.d_model, l.d_model);
        m.params[layer_param(int(i), "Wk")] = Matrix::Zero(l.d_model, l.d_model);
        m.params[layer_param(int(i), "Wv")] = Matrix::Zero(l.d_model, l.d_model);
        if (l.ffn_hidden > 0) {
          m.params[layer_param(int(i), "ffn.W1")] = Matrix::Zero(l.d_model, l.ffn_hidden);
          m.params[layer_param(int(i), "ffn.W2")] = Matrix::Zero(l.ffn_hidden, l.d_model);
        }
        break;
      default:
        break;
    }
  }
}

}  // namespace

void init_params(ModelGraph& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : m.params) {  // std::map: stable name order
    const double fan_in = name == "embed" ? double(p.cols()) : double(p.rows());
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = dist(rng);
  }
}

ModelGraph make_qkv_model(const QkvConfig& cfg, MulOrder order) {
  ModelGraph m;
  m.d_k = cfg.d_model;
  m.layers.push_back({.kind = LayerKind::Embedding,
                      .mode = EmbeddingMode::PixelScale,
                      .table_rows = cfg.seq_len,
                      .dim = cfg.d_model});
  m.layers.push_back({.kind = LayerKind::LinearAttention,
                      .d_model = cfg.d_model,
                      .order = order});
  m.layers.push_back({.kind = LayerKind::MeanPool});
  m.layers.push_back({.kind = LayerKind::Classifier,
                      .in_dim = cfg.d_model,
                      .out_dim = cfg.n_classes});
  declare_params(m);
  return m;
}

std::pair<ModelGraph, ModelGraph> build_qkv_pair(const QkvConfig& cfg,
                                                 const std::map<std::string, Matrix>& shared) {
  ModelGraph av = make_qkv_model(cfg, MulOrder::AVFirst);
  ModelGraph kv = make_qkv_model(cfg, MulOrder::KVFirst);
  av.params = shared;
  kv.params = shared;
  av.validate();
  kv.validate();
  return {std::move(av), std::move(kv)};
}

std::pair<ModelGraph, ModelGraph> build_qkv_pair(const QkvConfig& cfg, std::uint64_t seed) {
  ModelGraph av = make_qkv_model(cfg, MulOrder::AVFirst);
  init_params(av, seed);
  return build_qkv_pair(cfg, av.params);
}

ModelGraph make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  ModelGraph m;
  m.d_k = cfg.d_model;
  m.layers.push_back({.kind = LayerKind::Embedding,
                      .mode = EmbeddingMode::Token,
                      .table_rows = cfg.vocab,
                      .dim = cfg.d_model});
  for (int l = 0; l < cfg.n_layers; ++l) {
    m.layers.push_back({.kind = LayerKind::SoftmaxAttention,
                        .d_model = cfg.d_model,
                        .residual = true,
                        .ffn_hidden = cfg.ffn_hidden});
  }
  m.layers.push_back({.kind = LayerKind::MeanPool});
  m.layers.push_back({.kind = LayerKind::Classifier,
                      .in_dim = cfg.d_model,
                      .out_dim = cfg.n_classes});
  declare_params(m);
  init_params(m, seed);
  return m;
}

ForwardTrace scalar_chain(ChainOrder order, double x1, double x2, double x3) {
  ModelGraph dummy;  // bilinear nodes need no parameters
  Builder b{dummy};
  const int n1 = b.leaf(Matrix::Constant(1, 1, x1), FeatureAgg::Flatten);
  const int n2 = b.leaf(Matrix::Constant(1, 1, x2), FeatureAgg::Flatten);
  const int n3 = b.leaf(Matrix::Constant(1, 1, x3), FeatureAgg::Flatten);

  int y = -1;
  if (order == ChainOrder::Left) {
    const int h = b.bilinear(n1, n2, 1.0, false, false, -1, AttnRole::None);
    y = b.bilinear(h, n3, 1.0, false, false, -1, AttnRole::None);
  } else {
    const int h = b.bilinear(n2, n3, 1.0, false, false, -1, AttnRole::None);
    y = b.bilinear(n1, h, 1.0, false, false, -1, AttnRole::None);
  }
  b.t.output = y;
  b.t.logits = b.val(y).row(0);
  return std::move(b.t);
}

}  // namespace attrlab
