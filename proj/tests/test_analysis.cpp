#include <gtest/gtest.h>

#include <cmath>

#include "ioi/analysis.hpp"
#include "ioi/training.hpp"
#include "test_util.hpp"

using namespace ioi;

namespace {

ModelConfig make_config(int layers, int heads, bool pos = true) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.use_pos_embed = pos;
  return c;
}

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Attention, ScopesAndNormalization) {
  const auto cfg = make_config(2, 2);
  const auto p = init_params(cfg, 3);
  const auto data = enumerate_dataset();
  EXPECT_EQ(average_attention(cfg, p, data, AttentionScope::all).n_examples, 60u);
  EXPECT_EQ(average_attention(cfg, p, data, AttentionScope::BAAB).n_examples, 30u);
  const auto s = average_attention(cfg, p, data, AttentionScope::BABA);
  EXPECT_EQ(s.n_examples, 30u);
  EXPECT_EQ(s.labels, position_labels());
  for (const auto& layer : s.mean)
    for (const auto& m : layer)
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) sum += m(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
  const auto [baab, baba] = split_by_template(data);
  EXPECT_THROW(average_attention(cfg, p, baab, AttentionScope::BABA), DomainError);
}

TEST(Attention, AllIsMeanOfTemplates) {
  const auto cfg = make_config(1, 2);
  const auto p = init_params(cfg, 5);
  const auto data = enumerate_dataset();
  const auto all = average_attention(cfg, p, data, AttentionScope::all);
  const auto a = average_attention(cfg, p, data, AttentionScope::BAAB);
  const auto b = average_attention(cfg, p, data, AttentionScope::BABA);
  Matrix mix = a.at(0, 1) + b.at(0, 1);
  mix *= 0.5;
  EXPECT_LT(max_abs_diff(mix, all.at(0, 1)), 1e-12);
}

TEST(Circuits, MatchExplicitProducts) {
  const auto p = init_params(make_config(1, 2), 7);
  const auto& hp = p.blocks[0][1];
  const Matrix qk_ref = naive_product(naive_product(naive_product(p.W_E, hp.W_Q), hp.W_K.transpose()), p.W_E.transpose());
  const auto qk = qk_circuit(p, 0, 1);
  EXPECT_LT(max_abs_diff(qk.matrix, qk_ref), 1e-12);
  EXPECT_EQ(qk.row_labels, token_labels());
  const Matrix ov_ref = naive_product(naive_product(naive_product(p.W_E, hp.W_V), hp.W_O), p.W_U);
  EXPECT_LT(max_abs_diff(ov_circuit(p, 0, 1).matrix, ov_ref), 1e-12);
}

TEST(Circuits, TokenPlusPositionBasis) {
  const auto p = init_params(make_config(1, 2), 7);
  const auto c = qk_circuit(p, 0, 0, CircuitBasis::token_plus_pos);
  EXPECT_EQ(c.matrix.shape_string(), "13x13");
  ASSERT_EQ(c.row_labels.size(), 13u);
  EXPECT_EQ(c.row_labels[8], "pos:BOS");
  // the token block equals the token-basis circuit
  const auto t = qk_circuit(p, 0, 0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(c.matrix(i, j), t.matrix(i, j), 1e-12);
  EXPECT_THROW(qk_circuit(init_params(make_config(1, 2, false), 0), 0, 0, CircuitBasis::token_plus_pos), DomainError);
}

TEST(Circuits, RankBoundedByHeadDimension) {
  for (auto cfg : {make_config(1, 2), make_config(1, 4), make_config(2, 1)}) {
    const auto p = train(cfg, [] {
                     TrainConfig t;
                     t.total_steps = 100;
                     return t;
                   }())
                       .params;
    for (std::size_t l = 0; l < p.blocks.size(); ++l)
      for (std::size_t h = 0; h < p.blocks[l].size(); ++h) {
        EXPECT_LE(numerical_rank(qk_circuit(p, l, h).matrix), static_cast<std::size_t>(cfg.d_head()));
        EXPECT_LE(numerical_rank(ov_circuit(p, l, h).matrix), static_cast<std::size_t>(cfg.d_head()));
        EXPECT_LE(numerical_rank(qk_circuit(p, l, h, CircuitBasis::token_plus_pos).matrix),
                  static_cast<std::size_t>(cfg.d_head()));
      }
  }
}

TEST(Circuits, IndexOutOfRange) {
  const auto p = init_params(make_config(1, 2), 0);
  EXPECT_THROW(qk_circuit(p, 0, 2), DomainError);
  EXPECT_THROW(ov_circuit(p, 1, 0), DomainError);
}

TEST(Spectral, TraceReconstruction) {
  const auto p = init_params(make_config(1, 2), 11);
  for (std::size_t h = 0; h < 2; ++h)
    for (const auto& c : {qk_circuit(p, 0, h), ov_circuit(p, 0, h)}) {
      const auto s = spectral_summary(c);
      double re = 0.0, im = 0.0;
      for (auto l : s.eigenvalues) {
        re += l.real();
        im += l.imag();
      }
      EXPECT_NEAR(re, trace(c.matrix), 1e-8 * std::max(1.0, std::abs(trace(c.matrix))));
      EXPECT_NEAR(im, 0.0, 1e-8);
      EXPECT_GE(s.positive_fraction, -1.0);
      EXPECT_LE(s.positive_fraction, 1.0);
    }
}

TEST(Spectral, NegativeRealPairDetection) {
  SpectralSummary s;
  s.eigenvalues = {{1.0, 0.0}, {-0.5, 0.2}, {-0.5, -0.2}};
  EXPECT_TRUE(s.has_negative_real_pair());
  s.eigenvalues = {{1.0, 0.0}, {0.5, 0.2}, {0.5, -0.2}, {-3.0, 0.0}};
  EXPECT_FALSE(s.has_negative_real_pair());
}

TEST(Decomposition, ComponentsAddUpToResidual) {
  for (auto cfg : {make_config(1, 2), make_config(2, 1), make_config(1, 2, false)}) {
    const auto p = init_params(cfg, 2);
    const auto data = enumerate_dataset();
    const auto t = decompose_residual(cfg, p, data);
    ASSERT_EQ(t.per_example.size(), 60u);
    EXPECT_EQ(t.components.size(), 2u + static_cast<std::size_t>(cfg.n_layers * cfg.n_heads));
    for (std::size_t e = 0; e < 60; ++e) {
      const auto gap = logit_gap(cfg, p, data[e]);
      EXPECT_NEAR(t.per_example_total[e][3], gap, 1e-9);
      for (std::size_t d = 0; d < 4; ++d) {
        double s = 0.0;
        for (std::size_t c = 0; c < t.components.size(); ++c) s += t.per_example[e](c, d);
        EXPECT_NEAR(s, t.per_example_total[e][d], 1e-9);
      }
      for (std::size_t c = 0; c < t.components.size(); ++c) {
        const auto& m = t.per_example[e];
        EXPECT_NEAR(m(c, 2), m(c, 0) + m(c, 1), 1e-12);
        EXPECT_NEAR(m(c, 3), m(c, 0) - m(c, 1), 1e-12);
      }
    }
  }
}

TEST(Decomposition, EmbedDirectionsAndLookup) {
  const auto cfg = make_config(1, 2);
  const auto p = init_params(cfg, 2);
  const auto t = decompose_residual(cfg, p, enumerate_dataset(), DirectionSource::embed);
  EXPECT_EQ(t.component_index("L0H1"), 3u);
  EXPECT_THROW(t.component_index("L3H0"), DomainError);
  const auto ex = enumerate_dataset()[0];
  const auto tr = forward(cfg, p, ex.prompt);
  const auto u = token_direction(p, ex.target, DirectionSource::embed);
  EXPECT_NEAR(t.per_example[0](0, 0), dot(tr.embed_component.row(kMidPosition), u), 1e-12);
  EXPECT_THROW(decompose_residual(cfg, p, {}), DomainError);
}

TEST(Decomposition, DominantDirection) {
  DecompositionTable t;
  t.components = {"a"};
  t.mean = Matrix{{0.1, -0.2, 0.5, -0.9}};
  EXPECT_EQ(t.dominant_direction("a"), "difference");
  t.mean = Matrix{{0.1, -0.2, 0.5, 0.3}};
  EXPECT_EQ(t.dominant_direction("a"), "sum");
}
