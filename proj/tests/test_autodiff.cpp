#include "attrlab/autodiff.hpp"

#include <random>
#include <stdexcept>

#include "doctest.h"

using namespace attrlab;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("linear layer gradient is the target row of W") {
  ModelGraph m;
  m.layers.push_back({.kind = LayerKind::Linear, .in_dim = 3, .out_dim = 2});
  Matrix w(3, 2);
  w << 1, 4, 2, 5, 3, 6;
  m.params["L0.W"] = w;

  Matrix x(1, 3);
  x << 0.3, -1.2, 2.0;
  GradientSet gs = backward(forward(m, x), 1);
  CHECK(gs.d_inputs.at(0) == Matrix(w.col(1).transpose()));
  // dW = x^T e_1
  CHECK(gs.d_params.at("L0.W")(2, 1) == doctest::Approx(2.0));
  CHECK(gs.d_params.at("L0.W")(2, 0) == 0.0);

  CHECK_THROWS_AS(backward(forward(m, x), 2), std::invalid_argument);
  CHECK_THROWS_AS(backward(forward(m, x), -1), std::invalid_argument);
}

TEST_CASE("softmax node backward matches the row Jacobian identity") {
  // J_ij = A_i (delta_ij - A_j) per row; checked against finite differences
  // through a bare softmax attention block.
  EncoderConfig cfg{.vocab = 6, .seq_len = 5, .n_classes = 3, .d_model = 6,
                    .n_layers = 1, .ffn_hidden = 0};
  ModelGraph m = make_encoder(cfg, 21);
  const double err = grad_check_tokens(m, {0, 4, 2, 5, 1}, 2, 1e-5, 60, 17);
  CHECK(err < 1e-6);
}

TEST_CASE("qkv models pass the finite-difference oracle") {
  QkvConfig cfg{.seq_len = 16, .d_model = 8, .n_classes = 4};
  auto [av, kv] = build_qkv_pair(cfg, 31);
  std::mt19937_64 rng(5);
  Matrix x = random_matrix(4, 4, rng);
  x = x.cwiseAbs();  // pixel-like input

  CHECK(grad_check(av, x, 1, 1e-5, 50, 7) < 1e-4);
  CHECK(grad_check(kv, x, 1, 1e-5, 50, 7) < 1e-4);
}

TEST_CASE("gradients agree across the functionally equivalent pair") {
  QkvConfig cfg{.seq_len = 16, .d_model = 8, .n_classes = 4};
  auto [av, kv] = build_qkv_pair(cfg, 13);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = random_matrix(4, 4, rng).cwiseAbs();
    GradientSet ga = backward(forward(av, x), trial % 4);
    GradientSet gk = backward(forward(kv, x), trial % 4);
    CHECK((ga.d_inputs.at(0) - gk.d_inputs.at(0)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("encoder passes the finite-difference oracle away from ReLU kinks") {
  EncoderConfig cfg{.vocab = 9, .seq_len = 7, .n_classes = 3, .d_model = 8,
                    .n_layers = 2, .ffn_hidden = 16};
  ModelGraph m = make_encoder(cfg, 41);
  const double err = grad_check_tokens(m, {1, 8, 0, 3, 3, 6, 2}, 0, 1e-5, 80, 23);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check validates its step size") {
  ModelGraph m;
  m.layers.push_back({.kind = LayerKind::Linear, .in_dim = 2, .out_dim = 1});
  m.params["L0.W"] = Matrix::Constant(2, 1, 1.0);
  Matrix x = Matrix::Constant(1, 2, 1.0);
  CHECK_THROWS_AS(grad_check(m, x, 0, 1e-8), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(m, x, 0, 1e-2), std::invalid_argument);
  CHECK(grad_check(m, x, 0, 1e-5) < 1e-9);  // exact for linear
}

TEST_CASE("scalar chain gradients are the product rule") {
  ForwardTrace t = scalar_chain(ChainOrder::Left, 2, 3, 4);
  GradientSet gs = backward(t, 0);
  CHECK(gs.d_inputs.at(0)(0, 0) == doctest::Approx(12.0));  // dy/dx1 = x2*x3
  CHECK(gs.d_inputs.at(1)(0, 0) == doctest::Approx(8.0));
  CHECK(gs.d_inputs.at(2)(0, 0) == doctest::Approx(6.0));

  // gradients identical for the other grouping
  GradientSet gr = backward(scalar_chain(ChainOrder::Right, 2, 3, 4), 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(gs.d_inputs[i](0, 0) == doctest::Approx(gr.d_inputs[i](0, 0)));
  }
}

TEST_CASE("backward_from seeds an arbitrary logit combination") {
  ModelGraph m;
  m.layers.push_back({.kind = LayerKind::Linear, .in_dim = 2, .out_dim = 2});
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  m.params["L0.W"] = w;
  Matrix x(1, 2);
  x << 1, 1;
  RowVector seed(2);
  seed << 0.25, -0.5;
  GradientSet gs = backward_from(forward(m, x), seed);
  // d_input = seed * W^T
  CHECK(gs.d_inputs.at(0)(0, 0) == doctest::Approx(0.25 * 1 - 0.5 * 2));
  CHECK(gs.d_inputs.at(0)(0, 1) == doctest::Approx(0.25 * 3 - 0.5 * 4));
}
