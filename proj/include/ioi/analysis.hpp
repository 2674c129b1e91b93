#pragma once

// Read-only dissection of a trained model: averaged attention maps, effective
// QK/OV circuits and their spectra, and a direct-logit decomposition of the
// residual stream at the MID position.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ioi/dataset.hpp"
#include "ioi/error.hpp"
#include "ioi/linalg.hpp"
#include "ioi/model.hpp"

namespace ioi {

enum class AttentionScope { all, BAAB, BABA };

inline std::string to_string(AttentionScope s) {
  switch (s) {
    case AttentionScope::all: return "all";
    case AttentionScope::BAAB: return "BAAB";
    case AttentionScope::BABA: return "BABA";
  }
  return "?";
}

// Axis labels by role: positions 1 and 2 hold the dependent-clause names and
// position 3 the repeated subject.
inline std::vector<std::string> position_labels() { return {"BOS", "N1", "N2", "S2", "MID"}; }

inline std::vector<std::string> token_labels() {
  std::vector<std::string> out;
  for (TokenId t = 0; t < Vocab::kSize; ++t) out.push_back(Vocab::token_string(t));
  return out;
}

struct AttentionSummary {
  AttentionScope scope = AttentionScope::all;
  std::size_t n_examples = 0;
  std::vector<std::vector<Matrix>> mean;  // [layer][head], seq x seq
  std::vector<std::string> labels = position_labels();

  const Matrix& at(std::size_t layer, std::size_t head) const { return mean[layer][head]; }
};

inline bool in_scope(const IoiExample& ex, AttentionScope s) {
  return s == AttentionScope::all || (s == AttentionScope::BAAB) == (ex.tmpl == Template::BAAB);
}

inline AttentionSummary average_attention(const ModelConfig& cfg, const ModelParams& params,
                                          const std::vector<IoiExample>& examples,
                                          AttentionScope scope) {
  AttentionSummary out;
  out.scope = scope;
  for (const auto& ex : examples) {
    if (!in_scope(ex, scope)) continue;
    const auto tr = forward(cfg, params, ex.prompt);
    if (out.mean.empty()) {
      out.mean.resize(tr.heads.size());
      for (std::size_t l = 0; l < tr.heads.size(); ++l)
        for (const auto& h : tr.heads[l]) out.mean[l].push_back(Matrix(h.pattern.rows(), h.pattern.cols()));
    }
    for (std::size_t l = 0; l < tr.heads.size(); ++l)
      for (std::size_t h = 0; h < tr.heads[l].size(); ++h) out.mean[l][h] += tr.heads[l][h].pattern;
    ++out.n_examples;
  }
  if (out.n_examples == 0)
    throw DomainError("empty_scope", "no examples in attention scope " + to_string(scope));
  const double inv = 1.0 / static_cast<double>(out.n_examples);
  for (auto& layer : out.mean)
    for (auto& m : layer) m *= inv;
  return out;
}

enum class CircuitKind { QK, OV };
enum class CircuitBasis { token, token_plus_pos };

inline std::string to_string(CircuitKind k) { return k == CircuitKind::QK ? "QK" : "OV"; }

struct CircuitMatrix {
  CircuitKind kind = CircuitKind::QK;
  std::size_t layer = 0;
  std::size_t head = 0;
  CircuitBasis basis = CircuitBasis::token;
  Matrix matrix;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
};

inline const HeadParams& head_params(const ModelParams& params, std::size_t layer, std::size_t head) {
  if (layer >= params.blocks.size() || head >= params.blocks[layer].size())
    throw DomainError("index_out_of_range", "no head " + std::to_string(layer) + "." +
                                                std::to_string(head) + " in this model");
  return params.blocks[layer][head];
}

// Token basis: W_E W_Q W_K^T W_E^T, entry (query token, key token). The
// extended basis stacks the 8 token and 5 positional embeddings (13 x 13).
inline CircuitMatrix qk_circuit(const ModelParams& params, std::size_t layer, std::size_t head,
                                CircuitBasis basis = CircuitBasis::token) {
  const auto& hp = head_params(params, layer, head);
  CircuitMatrix c{CircuitKind::QK, layer, head, basis, {}, token_labels(), {}};
  Matrix rows = params.W_E;
  if (basis == CircuitBasis::token_plus_pos) {
    if (!params.W_pos)
      throw DomainError("no_positional_embedding",
                        "token_plus_pos basis needs a model with positional embeddings");
    Matrix stacked(params.W_E.rows() + params.W_pos->rows(), params.W_E.cols());
    for (std::size_t i = 0; i < params.W_E.rows(); ++i)
      for (std::size_t j = 0; j < params.W_E.cols(); ++j) stacked(i, j) = params.W_E(i, j);
    for (std::size_t i = 0; i < params.W_pos->rows(); ++i)
      for (std::size_t j = 0; j < params.W_E.cols(); ++j)
        stacked(params.W_E.rows() + i, j) = (*params.W_pos)(i, j);
    rows = std::move(stacked);
    for (const auto& p : position_labels()) c.row_labels.push_back("pos:" + p);
  }
  c.col_labels = c.row_labels;
  c.matrix = matmul_nt(matmul(rows, hp.W_Q), matmul(rows, hp.W_K));
  return c;
}

// W_E W_V W_O W_U, entry (source token, logit token).
inline CircuitMatrix ov_circuit(const ModelParams& params, std::size_t layer, std::size_t head) {
  const auto& hp = head_params(params, layer, head);
  CircuitMatrix c{CircuitKind::OV, layer, head, CircuitBasis::token, {}, token_labels(), token_labels()};
  c.matrix = matmul(matmul(matmul(params.W_E, hp.W_V), hp.W_O), params.W_U);
  return c;
}

struct SpectralSummary {
  CircuitKind kind = CircuitKind::QK;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<ComplexScalar> eigenvalues;
  double positive_fraction = 0.0;

  // At least one nonreal conjugate pair with negative real part.
  bool has_negative_real_pair(double imag_tol = 1e-9) const {
    for (const auto& l : eigenvalues)
      if (l.real() < 0.0 && std::abs(l.imag()) > imag_tol) return true;
    return false;
  }
};

inline SpectralSummary spectral_summary(const CircuitMatrix& c) {
  if (!c.matrix.is_square())
    throw DimensionError("spectral_summary of non-square circuit " + c.matrix.shape_string());
  SpectralSummary s{c.kind, c.layer, c.head, eigenvalues(c.matrix), 0.0};
  s.positive_fraction = positive_fraction(s.eigenvalues);
  return s;
}

enum class DirectionSource { unembed, embed };

inline constexpr std::array<const char*, 4> kDirectionNames{"correct", "incorrect", "sum", "difference"};

struct DecompositionTable {
  DirectionSource source = DirectionSource::unembed;
  std::vector<std::string> components;  // token-embed, pos-embed, L<l>H<h>...
  // Mean over examples of component . direction, components x 4.
  Matrix mean;
  // Per example: components x 4 projections, and the total residual's projections.
  std::vector<Matrix> per_example;
  std::vector<std::array<double, 4>> per_example_total;

  std::size_t component_index(const std::string& name) const {
    for (std::size_t i = 0; i < components.size(); ++i)
      if (components[i] == name) return i;
    throw DomainError("unknown_component", "no component named " + name);
  }

  // Column with the largest |mean| for a component.
  std::string dominant_direction(const std::string& component) const {
    const std::size_t r = component_index(component);
    std::size_t best = 0;
    for (std::size_t j = 1; j < 4; ++j)
      if (std::abs(mean(r, j)) > std::abs(mean(r, best))) best = j;
    return kDirectionNames[best];
  }
};

inline std::string head_component_name(std::size_t layer, std::size_t head) {
  return "L" + std::to_string(layer) + "H" + std::to_string(head);
}

// Direction for a token: its unembedding column (default) or embedding row.
inline std::vector<double> token_direction(const ModelParams& params, TokenId t, DirectionSource src) {
  const auto ti = static_cast<std::size_t>(t);
  std::vector<double> u;
  if (src == DirectionSource::unembed) {
    for (std::size_t i = 0; i < params.W_U.rows(); ++i) u.push_back(params.W_U(i, ti));
  } else {
    auto r = params.W_E.row(ti);
    u.assign(r.begin(), r.end());
  }
  return u;
}

inline DecompositionTable decompose_residual(const ModelConfig& cfg, const ModelParams& params,
                                             const std::vector<IoiExample>& examples,
                                             DirectionSource source = DirectionSource::unembed) {
  if (examples.empty()) throw DomainError("empty_input", "decomposition over zero examples");
  DecompositionTable t;
  t.source = source;
  t.components = {"token-embed", "pos-embed"};
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    for (std::size_t h = 0; h < params.blocks[l].size(); ++h) t.components.push_back(head_component_name(l, h));
  t.mean = Matrix(t.components.size(), 4);

  for (const auto& ex : examples) {
    const auto tr = forward(cfg, params, ex.prompt);
    const auto uc = token_direction(params, ex.target, source);
    const auto ui = token_direction(params, ex.incorrect(), source);
    std::vector<std::vector<double>> dirs{uc, ui, uc, uc};
    for (std::size_t i = 0; i < uc.size(); ++i) {
      dirs[2][i] = uc[i] + ui[i];
      dirs[3][i] = uc[i] - ui[i];
    }
    std::vector<std::span<const double>> comps{tr.embed_component.row(kMidPosition),
                                               tr.pos_component.row(kMidPosition)};
    for (const auto& layer : tr.heads)
      for (const auto& h : layer) comps.push_back(h.out.row(kMidPosition));

    Matrix proj(t.components.size(), 4);
    for (std::size_t c = 0; c < comps.size(); ++c) {
      for (std::size_t d = 0; d < 4; ++d) proj(c, d) = dot(comps[c], dirs[d]);
    }
    std::array<double, 4> total{};
    const auto resid = tr.resid_final.row(kMidPosition);
    for (std::size_t d = 0; d < 4; ++d) total[d] = dot(resid, dirs[d]);
    t.mean += proj;
    t.per_example.push_back(std::move(proj));
    t.per_example_total.push_back(total);
  }
  t.mean *= 1.0 / static_cast<double>(examples.size());
  return t;
}

// logit(correct) - logit(incorrect) at MID.
inline double logit_gap(const ModelConfig& cfg, const ModelParams& params, const IoiExample& ex) {
  const auto tr = forward(cfg, params, ex.prompt);
  const auto l = tr.mid_logits();
  return l[static_cast<std::size_t>(ex.target)] - l[static_cast<std::size_t>(ex.incorrect())];
}

}  // namespace ioi
