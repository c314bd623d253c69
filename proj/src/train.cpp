#include "attrlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "attrlab/autodiff.hpp"

namespace attrlab {

using nlohmann::json;

void adam_step(std::map<std::string, Matrix>& params,
               const std::map<std::string, Matrix>& grads, AdamState& state,
               const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));

  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
    }
    Matrix& p = pit->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    }
    Matrix& m1 = state.m1.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    Matrix& m2 = state.m2.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;

    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Matrix m1_hat = m1 / bc1;
    const Matrix m2_hat = m2 / bc2;
    p -= cfg.lr * m1_hat.cwiseQuotient(
                      Matrix((m2_hat.cwiseSqrt().array() + cfg.adam_eps).matrix()));
  }
}

namespace {

// Type-erased dataset access so images and token sequences share one loop.
struct DatasetView {
  std::function<ForwardTrace(int)> fwd;
  std::function<int(int)> label;
  int size = 0;
};

double example_accuracy(const DatasetView& view) {
  if (view.size == 0) return 0.0;
  int correct = 0;
  for (int i = 0; i < view.size; ++i) {
    Eigen::Index best = 0;
    view.fwd(i).logits.maxCoeff(&best);
    correct += int(best) == view.label(i) ? 1 : 0;
  }
  return double(correct) / double(view.size);
}

RowVector softmax_row(const RowVector& logits) {
  RowVector p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

TrainHistory train_core(ModelGraph& m, const DatasetView& train_set,
                        const DatasetView& test_set, const TrainConfig& cfg) {
  if (train_set.size == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

  AdamState state;
  std::mt19937_64 shuffle_rng(cfg.seed + 1);  // init stream is cfg.seed
  std::vector<int> order(train_set.size);
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < train_set.size; start += cfg.batch_size) {
      const int end = std::min(start + cfg.batch_size, train_set.size);
      std::map<std::string, Matrix> grad_sum;
      for (int b = start; b < end; ++b) {
        const int idx = order[b];
        const ForwardTrace trace = train_set.fwd(idx);
        const int label = train_set.label(idx);
        if (label < 0 || label >= int(trace.logits.size())) {
          throw std::invalid_argument("train: label out of range");
        }
        const RowVector probs = softmax_row(trace.logits);
        loss_sum += -std::log(std::max(probs(label), 1e-300));
        Eigen::Index best = 0;
        trace.logits.maxCoeff(&best);
        correct += int(best) == label ? 1 : 0;

        RowVector seed = probs;
        seed(label) -= 1.0;
        GradientSet gs = backward_from(trace, seed);
        for (auto& [name, g] : gs.d_params) {
          auto it = grad_sum.find(name);
          if (it == grad_sum.end()) {
            grad_sum.emplace(name, std::move(g));
          } else {
            it->second += g;
          }
        }
      }
      const double inv = 1.0 / double(end - start);
      for (auto& [name, g] : grad_sum) g *= inv;
      adam_step(m.params, grad_sum, state, cfg);
    }

    EpochStats stats;
    stats.loss = loss_sum / double(train_set.size);
    stats.accuracy = double(correct) / double(train_set.size);
    if (!std::isfinite(stats.loss)) {
      throw std::runtime_error("train: diverged (non-finite loss) in epoch " +
                               std::to_string(epoch + 1));
    }
    history.epochs.push_back(stats);
  }

  history.test_accuracy = example_accuracy(test_set);
  return history;
}

DatasetView view_of(const ModelGraph& m, const ImageDataset& data) {
  return {[&](int i) { return forward(m, data.images[i]); },
          [&](int i) { return data.labels[i]; }, int(data.images.size())};
}

DatasetView view_of(const ModelGraph& m, const SequenceDataset& data) {
  return {[&](int i) { return forward(m, data.sequences[i]); },
          [&](int i) { return data.labels[i]; }, int(data.sequences.size())};
}

}  // namespace

TrainHistory train(ModelGraph& m, const ImageDataset& train_set,
                   const ImageDataset& test_set, const TrainConfig& cfg) {
  return train_core(m, view_of(m, train_set), view_of(m, test_set), cfg);
}

TrainHistory train(ModelGraph& m, const SequenceDataset& train_set,
                   const SequenceDataset& test_set, const TrainConfig& cfg) {
  return train_core(m, view_of(m, train_set), view_of(m, test_set), cfg);
}

double accuracy(const ModelGraph& m, const ImageDataset& data) {
  return example_accuracy(view_of(m, data));
}

double accuracy(const ModelGraph& m, const SequenceDataset& data) {
  return example_accuracy(view_of(m, data));
}

PairTrainResult train_shared_pair(const QkvConfig& qcfg, const ImageDataset& train_set,
                                  const ImageDataset& test_set, const TrainConfig& cfg) {
  ModelGraph kv = make_qkv_model(qcfg, MulOrder::KVFirst);
  init_params(kv, cfg.seed);

  PairTrainResult out;
  out.history = train(kv, train_set, test_set, cfg);
  auto [av_model, kv_model] = build_qkv_pair(qcfg, kv.params);
  out.av_first = std::move(av_model);
  out.kv_first = std::move(kv_model);
  return out;
}

// --- Checkpoints ----------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Embedding: return "embedding";
    case LayerKind::Linear: return "linear";
    case LayerKind::ReLU: return "relu";
    case LayerKind::LinearAttention: return "linear_attention";
    case LayerKind::SoftmaxAttention: return "softmax_attention";
    case LayerKind::MeanPool: return "mean_pool";
    case LayerKind::Classifier: return "classifier";
  }
  throw std::logic_error("unknown layer kind");
}

LayerKind kind_from(const std::string& s) {
  if (s == "embedding") return LayerKind::Embedding;
  if (s == "linear") return LayerKind::Linear;
  if (s == "relu") return LayerKind::ReLU;
  if (s == "linear_attention") return LayerKind::LinearAttention;
  if (s == "softmax_attention") return LayerKind::SoftmaxAttention;
  if (s == "mean_pool") return LayerKind::MeanPool;
  if (s == "classifier") return LayerKind::Classifier;
  throw std::runtime_error("checkpoint: unknown layer kind " + s);
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::Embedding:
      j["mode"] = l.mode == EmbeddingMode::PixelScale ? "pixel_scale" : "token";
      j["table_rows"] = l.table_rows;
      j["dim"] = l.dim;
      break;
    case LayerKind::Linear:
    case LayerKind::Classifier:
      j["in_dim"] = l.in_dim;
      j["out_dim"] = l.out_dim;
      break;
    case LayerKind::LinearAttention:
      j["d_model"] = l.d_model;
      j["order"] = l.order == MulOrder::AVFirst ? "av_first" : "kv_first";
      break;
    case LayerKind::SoftmaxAttention:
      j["d_model"] = l.d_model;
      j["residual"] = l.residual;
      j["ffn_hidden"] = l.ffn_hidden;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = kind_from(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::Embedding:
      l.mode = j.at("mode").get<std::string>() == "pixel_scale" ? EmbeddingMode::PixelScale
                                                                : EmbeddingMode::Token;
      l.table_rows = j.at("table_rows").get<int>();
      l.dim = j.at("dim").get<int>();
      break;
    case LayerKind::Linear:
    case LayerKind::Classifier:
      l.in_dim = j.at("in_dim").get<int>();
      l.out_dim = j.at("out_dim").get<int>();
      break;
    case LayerKind::LinearAttention:
      l.d_model = j.at("d_model").get<int>();
      l.order = j.at("order").get<std::string>() == "av_first" ? MulOrder::AVFirst
                                                               : MulOrder::KVFirst;
      break;
    case LayerKind::SoftmaxAttention:
      l.d_model = j.at("d_model").get<int>();
      l.residual = j.at("residual").get<bool>();
      l.ffn_hidden = j.at("ffn_hidden").get<int>();
      break;
    default:
      break;
  }
  return l;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char(v >> (8 * i)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelGraph& m,
                     const CheckpointMeta& meta) {
  json header;
  header["d_k"] = m.d_k;
  header["layers"] = json::array();
  for (const LayerSpec& l : m.layers) header["layers"].push_back(layer_to_json(l));
  header["params"] = json::array();
  for (const auto& [name, p] : m.params) header["params"].push_back(name);
  header["meta"] = {{"lr", meta.config.lr},
                    {"beta1", meta.config.beta1},
                    {"beta2", meta.config.beta2},
                    {"adam_eps", meta.config.adam_eps},
                    {"epochs", meta.config.epochs},
                    {"batch_size", meta.config.batch_size},
                    {"seed", meta.config.seed},
                    {"final_accuracy", meta.final_accuracy},
                    {"note", meta.note}};
  const std::string header_str = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, 4);
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, header_str.size());
  blob += header_str;
  for (const auto& [name, p] : m.params) {
    put_u64(blob, std::uint64_t(p.rows()));
    put_u64(blob, std::uint64_t(p.cols()));
    const std::size_t bytes = std::size_t(p.size()) * sizeof(double);
    const std::size_t offset = blob.size();
    blob.resize(offset + bytes);
    std::memcpy(blob.data() + offset, p.data(), bytes);
  }
  write_file(path, {reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()});
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::size_t pos = 4;
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes.at(pos++)) << (8 * i);
    return v;
  };
  auto get_u64 = [&]() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes.at(pos++)) << (8 * i);
    return v;
  };
  if (get_u32() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }
  const std::uint64_t header_len = get_u64();
  if (pos + header_len > bytes.size()) {
    throw std::runtime_error("checkpoint: truncated header in " + path);
  }
  const json header = json::parse(bytes.begin() + long(pos), bytes.begin() + long(pos + header_len));
  pos += header_len;

  Checkpoint ck;
  ck.model.d_k = header.at("d_k").get<int>();
  for (const json& jl : header.at("layers")) ck.model.layers.push_back(layer_from_json(jl));
  for (const json& jname : header.at("params")) {
    const std::string name = jname.get<std::string>();
    const std::uint64_t rows = get_u64();
    const std::uint64_t cols = get_u64();
    const std::size_t nbytes = std::size_t(rows * cols) * sizeof(double);
    if (pos + nbytes > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated parameter block " + name);
    }
    Matrix p(rows, cols);
    std::memcpy(p.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    ck.model.params.emplace(name, std::move(p));
  }
  const json& jm = header.at("meta");
  ck.meta.config.lr = jm.at("lr").get<double>();
  ck.meta.config.beta1 = jm.at("beta1").get<double>();
  ck.meta.config.beta2 = jm.at("beta2").get<double>();
  ck.meta.config.adam_eps = jm.at("adam_eps").get<double>();
  ck.meta.config.epochs = jm.at("epochs").get<int>();
  ck.meta.config.batch_size = jm.at("batch_size").get<int>();
  ck.meta.config.seed = jm.at("seed").get<std::uint64_t>();
  ck.meta.final_accuracy = jm.at("final_accuracy").get<double>();
  ck.meta.note = jm.at("note").get<std::string>();
  ck.model.validate();
  return ck;
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "epoch,loss,accuracy\n";
  char buf[96];
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f", e + 1, history.epochs[e].loss,
                  history.epochs[e].accuracy);
    out << buf << '\n';
  }
}

}  // namespace attrlab
