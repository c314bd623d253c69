#include "attrlab/explain.hpp"

#include <cmath>
#include <random>
#include <sstream>
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

// f(x) = w . x as a bare linear layer over a 1 x n input row.
ModelGraph linear_model(const Matrix& w_col) {
  ModelGraph m;
  m.layers.push_back({.kind = LayerKind::Linear,
                      .in_dim = int(w_col.rows()),
                      .out_dim = 1});
  m.params["L0.W"] = w_col;
  return m;
}

}  // namespace

TEST_CASE("LOO on a linear model is w .* x") {
  Matrix w(4, 1);
  w << 2, -1, 0.5, 3;
  ModelGraph m = linear_model(w);
  Matrix x(1, 4);
  x << 1, 2, -3, 0.25;

  Attribution a = loo(m, x, 0);
  REQUIRE(a.scores.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.scores[i] == doctest::Approx(w(i, 0) * x(0, i)).epsilon(1e-12));
  }
}

TEST_CASE("LOO is identical across the qkv pair") {
  QkvConfig cfg{.seq_len = 16, .d_model = 8, .n_classes = 4};
  auto [av, kv] = build_qkv_pair(cfg, 61);
  std::mt19937_64 rng(9);
  Matrix x = random_matrix(4, 4, rng).cwiseAbs();

  Attribution la = loo(av, x, 2);
  Attribution lk = loo(kv, x, 2);
  for (std::size_t i = 0; i < la.scores.size(); ++i) {
    CHECK(la.scores[i] == doctest::Approx(lk.scores[i]).epsilon(1e-9));
  }
}

TEST_CASE("token LOO masks instead of zeroing") {
  EncoderConfig cfg{.vocab = 8, .seq_len = 6, .n_classes = 3, .d_model = 8,
                    .n_layers = 2, .ffn_hidden = 12};
  ModelGraph m = make_encoder(cfg, 71);
  std::vector<int> toks{1, 7, 0, 2, 5, 5};
  Attribution a = loo(m, toks, 1);
  REQUIRE(a.scores.size() == 6);
  const double base = forward(m, toks).logits(1);
  std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1};
  CHECK(a.scores[3] ==
        doctest::Approx(base - forward(m, toks, mask).logits(1)).epsilon(1e-12));
}

TEST_CASE("IG is exact for linear models at any step count") {
  Matrix w(3, 1);
  w << 1.5, -2, 4;
  ModelGraph m = linear_model(w);
  Matrix x(1, 3);
  x << 2, 1, -0.5;

  for (int steps : {1, 8, 50}) {
    Attribution a = integrated_gradients(m, x, Matrix::Zero(1, 3), 0, steps);
    for (int i = 0; i < 3; ++i) {
      CHECK(a.scores[i] == doctest::Approx(w(i, 0) * x(0, i)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(integrated_gradients(m, x, Matrix::Zero(1, 3), 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(integrated_gradients(m, x, Matrix::Zero(2, 3), 0, 8),
                  std::invalid_argument);
}

TEST_CASE("IG completeness on the encoder at 50 steps") {
  EncoderConfig cfg{.vocab = 9, .seq_len = 8, .n_classes = 3, .d_model = 8,
                    .n_layers = 2, .ffn_hidden = 16};
  ModelGraph m = make_encoder(cfg, 81);
  std::vector<int> toks{4, 8, 1, 0, 6, 3, 3, 7};
  const int target = 2;

  Attribution a = integrated_gradients(m, toks, target, 50);
  double total = 0.0;
  for (double v : a.scores) total += v;

  const Matrix& E = m.params.at("embed");
  Matrix X(8, 8);
  for (int i = 0; i < 8; ++i) X.row(i) = E.row(toks[i]);
  const double fx = forward_embedded(m, X).logits(target);
  const double f0 = forward_embedded(m, Matrix::Zero(8, 8)).logits(target);
  CHECK(std::abs(total - (fx - f0)) < 1e-3 * std::max(1e-8, std::abs(fx - f0)));
}

TEST_CASE("IG agrees across the qkv pair") {
  QkvConfig cfg{.seq_len = 16, .d_model = 8, .n_classes = 4};
  auto [av, kv] = build_qkv_pair(cfg, 91);
  std::mt19937_64 rng(13);
  Matrix x = random_matrix(4, 4, rng).cwiseAbs();

  Attribution ia = integrated_gradients(av, x, Matrix::Zero(4, 4), 1, 32);
  Attribution ik = integrated_gradients(kv, x, Matrix::Zero(4, 4), 1, 32);
  for (std::size_t i = 0; i < ia.scores.size(); ++i) {
    CHECK(ia.scores[i] == doctest::Approx(ik.scores[i]).epsilon(1e-9));
  }
}

TEST_CASE("rollout kernel: identity, uniform, and a hand-multiplied stack") {
  const Matrix eye = Matrix::Identity(3, 3);
  auto one_hot = rollout_scores({eye}, {.readout = RolloutReadout::Position, .position = 1});
  CHECK(one_hot == std::vector<double>{0, 1, 0});

  const Matrix uniform = Matrix::Constant(3, 3, 1.0 / 3.0);
  for (double v : rollout_scores({uniform}, {})) CHECK(v == doctest::Approx(1.0 / 3.0));

  Matrix a1(3, 3), a2(3, 3);
  a1 << 0.5, 0.25, 0.25, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4;
  a2 << 0.2, 0.5, 0.3, 0.6, 0.2, 0.2, 0.25, 0.25, 0.5;
  // hand oracle: effective attention is a2 * a1, then average rows
  double prod[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      prod[i][j] = 0;
      for (int k = 0; k < 3; ++k) prod[i][j] += a2(i, k) * a1(k, j);
    }
  auto scores = rollout_scores({a1, a2}, {});
  for (int j = 0; j < 3; ++j) {
    const double expected = (prod[0][j] + prod[1][j] + prod[2][j]) / 3.0;
    CHECK(scores[j] == doctest::Approx(expected).epsilon(1e-12));
  }

  CHECK_THROWS_AS(rollout_scores({}, {}), std::invalid_argument);
}

TEST_CASE("rollout over the encoder sums to one with and without residual") {
  EncoderConfig cfg{.vocab = 8, .seq_len = 6, .n_classes = 3, .d_model = 8,
                    .n_layers = 3, .ffn_hidden = 12};
  ModelGraph m = make_encoder(cfg, 95);
  std::vector<int> toks{0, 4, 7, 2, 1, 6};
  for (bool residual : {false, true}) {
    Attribution a = rollout(m, toks, {.residual = residual});
    REQUIRE(a.scores.size() == 6);
    double total = 0.0;
    for (double v : a.scores) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));  // rows of A are stochastic
  }
}

TEST_CASE("cp_lrp wraps a uniform CPLRP configuration") {
  EncoderConfig cfg{.vocab = 8, .seq_len = 6, .n_classes = 3, .d_model = 8,
                    .n_layers = 2, .ffn_hidden = 12};
  ModelGraph m = make_encoder(cfg, 97);
  std::vector<int> toks{1, 7, 0, 2, 5, 5};
  Attribution direct = attn_lrp(m, toks, 0, RuleConfig::uniform(2, AttnRule::CPLRP, 1e-6));
  Attribution wrapped = cp_lrp(m, toks, 0, 1e-6);
  REQUIRE(direct.scores.size() == wrapped.scores.size());
  for (std::size_t i = 0; i < direct.scores.size(); ++i) {
    CHECK(direct.scores[i] == doctest::Approx(wrapped.scores[i]));
  }
}

TEST_CASE("ablation families collapse to the documented identities") {
  const double eps = 1e-6;
  const int L = 6;
  RuleConfig all_cp = RuleConfig::uniform(L, AttnRule::CPLRP, eps);
  CHECK(ablation_config({AblationFamily::FrontToBack, L}, L, eps).attn_rule_per_layer ==
        all_cp.attn_rule_per_layer);
  CHECK(ablation_config({AblationFamily::BackToFront, 1}, L, eps).attn_rule_per_layer ==
        all_cp.attn_rule_per_layer);
  CHECK(ablation_config({AblationFamily::Single, 1}, L, eps).attn_rule_per_layer ==
        ablation_config({AblationFamily::FrontToBack, 1}, L, eps).attn_rule_per_layer);

  RuleConfig mid = ablation_config({AblationFamily::Single, 3}, L, eps);
  for (int l = 0; l < L; ++l) {
    CHECK(mid.attn_rule_per_layer[l] == (l == 2 ? AttnRule::CPLRP : AttnRule::AttnLRP));
  }
  RuleConfig back = ablation_config({AblationFamily::BackToFront, 4}, L, eps);
  for (int l = 0; l < L; ++l) {
    CHECK(back.attn_rule_per_layer[l] == (l >= 3 ? AttnRule::CPLRP : AttnRule::AttnLRP));
  }

  CHECK_THROWS_AS(ablation_config({AblationFamily::FrontToBack, 0}, L, eps),
                  std::invalid_argument);
  CHECK_THROWS_AS(ablation_config({AblationFamily::Single, 7}, L, eps),
                  std::invalid_argument);
}

TEST_CASE("normalization sums to one only when the raw sum is positive") {
  Attribution a;
  a.scores = {3.0, 1.0, 4.0};
  Attribution n = normalize(a);
  CHECK(n.normalized);
  double total = 0.0;
  for (double v : n.scores) total += v;
  CHECK(std::abs(total - 1.0) < 1e-9);

  Attribution neg;
  neg.scores = {-1.0, 0.25};
  Attribution nn = normalize(neg);
  CHECK_FALSE(nn.normalized);
  CHECK(nn.scores == neg.scores);

  std::ostringstream out;
  write_attribution_csv(out, a);
  CHECK(out.str().find("index,raw,normalized") == 0);
  std::ostringstream out2;
  write_attribution_csv(out2, neg);
  CHECK(out2.str().find("nan") != std::string::npos);
}
