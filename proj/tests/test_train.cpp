#include "attrlab/train.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"

using namespace attrlab;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("attrlab_train_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
  std::map<std::string, Matrix> params{{"w", Matrix::Constant(2, 2, 1.5)}};
  std::map<std::string, Matrix> grads{{"w", Matrix::Zero(2, 2)}};
  AdamState state;
  TrainConfig cfg;
  adam_step(params, grads, state, cfg);
  CHECK(params.at("w") == Matrix::Constant(2, 2, 1.5));
  CHECK(state.t == 1);
}

TEST_CASE("adam_step approaches lr * sign(g) for a constant gradient") {
  std::map<std::string, Matrix> params{{"w", Matrix::Zero(1, 2)}};
  Matrix g(1, 2);
  g << 0.37, -5.2;
  std::map<std::string, Matrix> grads{{"w", g}};
  AdamState state;
  TrainConfig cfg;

  Matrix prev = params.at("w");
  for (int step = 0; step < 300; ++step) {
    prev = params.at("w");
    adam_step(params, grads, state, cfg);
  }
  const Matrix delta = params.at("w") - prev;
  CHECK(delta(0, 0) == doctest::Approx(-cfg.lr).epsilon(1e-6));
  CHECK(delta(0, 1) == doctest::Approx(cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam_step matches the hand recursion for three steps") {
  const double g = 0.5;
  TrainConfig cfg;

  // independent recursion with plain doubles
  double m1 = 0.0, m2 = 0.0, p_hand = 1.0;
  std::vector<double> expected;
  for (int t = 1; t <= 3; ++t) {
    m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g;
    m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * g * g;
    const double m1h = m1 / (1 - std::pow(cfg.beta1, t));
    const double m2h = m2 / (1 - std::pow(cfg.beta2, t));
    p_hand -= cfg.lr * m1h / (std::sqrt(m2h) + cfg.adam_eps);
    expected.push_back(p_hand);
  }

  std::map<std::string, Matrix> params{{"w", Matrix::Constant(1, 1, 1.0)}};
  std::map<std::string, Matrix> grads{{"w", Matrix::Constant(1, 1, g)}};
  AdamState state;
  for (int t = 0; t < 3; ++t) {
    adam_step(params, grads, state, cfg);
    CHECK(params.at("w")(0, 0) == doctest::Approx(expected[t]).epsilon(1e-15));
  }
}

TEST_CASE("lr = 0 leaves the model untrained") {
  EncoderConfig ecfg{.vocab = 8, .seq_len = 6, .n_classes = 3, .d_model = 8,
                     .n_layers = 1, .ffn_hidden = 12};
  ModelGraph m = make_encoder(ecfg, 2);
  const std::map<std::string, Matrix> before = m.params;

  SequenceDataset tr = gen_synthetic(5, 60, 8, 6, 3);
  SequenceDataset te = gen_synthetic(6, 30, 8, 6, 3);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  TrainHistory h = train(m, tr, te, cfg);
  for (const auto& [name, p] : before) CHECK(m.params.at(name) == p);
  CHECK(std::isfinite(h.epochs.at(0).loss));
  CHECK(h.test_accuracy < 0.9);  // untrained: near-chance behavior
}

TEST_CASE("a small encoder trains to high accuracy on the keyword task") {
  EncoderConfig ecfg{.vocab = 8, .seq_len = 6, .n_classes = 3, .d_model = 16,
                     .n_layers = 2, .ffn_hidden = 32};
  ModelGraph m = make_encoder(ecfg, 4);
  SequenceDataset tr = gen_synthetic(7, 480, 8, 6, 3);
  SequenceDataset te = gen_synthetic(8, 120, 8, 6, 3);

  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 32;
  cfg.seed = 4;
  TrainHistory h = train(m, tr, te, cfg);
  CHECK(h.epochs.back().loss < h.epochs.front().loss);
  CHECK(h.test_accuracy >= 0.95);
}

TEST_CASE("training is deterministic and checkpoints round-trip bit-exactly") {
  TempDir tmp;
  QkvConfig qcfg{.seq_len = 16, .d_model = 8, .n_classes = 3};
  ImageDataset tr, te;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 48; ++i) {
    Matrix img(4, 4);
    for (Eigen::Index j = 0; j < img.size(); ++j) img.data()[j] = dist(rng);
    (i < 36 ? tr : te).images.push_back(img);
    (i < 36 ? tr : te).labels.push_back(i % 3);
  }

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 9;
  PairTrainResult a = train_shared_pair(qcfg, tr, te, cfg);
  PairTrainResult b = train_shared_pair(qcfg, tr, te, cfg);
  for (const auto& [name, p] : a.kv_first.params) {
    CHECK(p == b.kv_first.params.at(name));
  }
  CHECK(a.history.test_accuracy == b.history.test_accuracy);

  // the pair shares parameters and so the checkpoints differ only in layers
  CHECK(a.av_first.params.at("L1.Wq") == a.kv_first.params.at("L1.Wq"));

  const std::string path_a = (tmp.path / "a.ckpt").string();
  const std::string path_b = (tmp.path / "b.ckpt").string();
  CheckpointMeta meta;
  meta.config = cfg;
  meta.final_accuracy = a.history.test_accuracy;
  meta.note = "qkv_kv_first";
  save_checkpoint(path_a, a.kv_first, meta);
  save_checkpoint(path_b, b.kv_first, meta);
  CHECK(read_file(path_a) == read_file(path_b));

  Checkpoint loaded = load_checkpoint(path_a);
  CHECK(loaded.meta.note == "qkv_kv_first");
  CHECK(loaded.meta.config.seed == 9);
  ForwardTrace t0 = forward(a.kv_first, tr.images[0]);
  ForwardTrace t1 = forward(loaded.model, tr.images[0]);
  CHECK(t0.logits == t1.logits);  // bit-identical
}

TEST_CASE("history CSV is stable") {
  TrainHistory h;
  h.epochs.push_back({0.7, 0.5});
  h.epochs.push_back({0.3, 0.875});
  std::ostringstream out;
  write_history_csv(out, h);
  CHECK(out.str() == "epoch,loss,accuracy\n1,0.700000,0.500000\n2,0.300000,0.875000\n");
}
