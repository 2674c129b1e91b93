#pragma once

// Attention-only transformer: token + positional embeddings, n_layers of
// multi-head attention added straight into the residual stream, and an
// unembedding. No MLPs, no layer norm, no biases, so the final residual is
// exactly the sum of its components.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ioi/dataset.hpp"
#include "ioi/error.hpp"
#include "ioi/linalg.hpp"
#include "ioi/rng.hpp"

namespace ioi {

struct ModelConfig {
  int n_layers = 1;
  int n_heads = 2;
  int d_model = 8;
  int vocab_size = Vocab::kSize;
  int seq_len = static_cast<int>(kPromptLength);
  bool use_pos_embed = true;
  bool causal_mask = true;
  std::uint64_t seed = 1;

  int d_head() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1) throw DomainError("bad_config", "n_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw DomainError("bad_config", "n_heads (" + std::to_string(n_heads) +
                                          ") must divide d_model (" + std::to_string(d_model) + ")");
    if (vocab_size != Vocab::kSize)
      throw DomainError("bad_config", "vocab_size must be " + std::to_string(Vocab::kSize));
    if (seq_len != static_cast<int>(kPromptLength))
      throw DomainError("bad_config", "seq_len must be " + std::to_string(kPromptLength));
  }

  // Architecture equality; the seed is provenance, not shape.
  bool same_architecture(const ModelConfig& o) const {
    return n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model &&
           vocab_size == o.vocab_size && seq_len == o.seq_len && use_pos_embed == o.use_pos_embed &&
           causal_mask == o.causal_mask;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HeadParams {
  Matrix W_Q;  // d_model x d_head
  Matrix W_K;  // d_model x d_head
  Matrix W_V;  // d_model x d_head
  Matrix W_O;  // d_head x d_model

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct ModelParams {
  Matrix W_E;                    // vocab x d_model
  std::optional<Matrix> W_pos;   // seq_len x d_model, absent without positional embeddings
  std::vector<std::vector<HeadParams>> blocks;  // [layer][head]
  Matrix W_U;                    // d_model x vocab

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Gradients share the parameter layout tensor for tensor.
using Gradients = ModelParams;

// Visits every tensor with a stable name, in a fixed order.
template <typename Params, typename Fn>
  requires std::same_as<std::remove_const_t<Params>, ModelParams>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("W_E"), p.W_E);
  if (p.W_pos) fn(std::string("W_pos"), *p.W_pos);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    for (std::size_t h = 0; h < p.blocks[l].size(); ++h) {
      const std::string prefix = "blocks." + std::to_string(l) + ".head." + std::to_string(h) + ".";
      auto& hp = p.blocks[l][h];
      fn(prefix + "W_Q", hp.W_Q);
      fn(prefix + "W_K", hp.W_K);
      fn(prefix + "W_V", hp.W_V);
      fn(prefix + "W_O", hp.W_O);
    }
  }
  fn(std::string("W_U"), p.W_U);
}

// Flat (name, tensor) views in for_each_tensor order.
inline std::vector<std::pair<std::string, Matrix*>> named_tensors(ModelParams& p) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for_each_tensor(p, [&](const std::string& n, Matrix& m) { out.emplace_back(n, &m); });
  return out;
}
inline std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ModelParams& p) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for_each_tensor(p, [&](const std::string& n, const Matrix& m) { out.emplace_back(n, &m); });
  return out;
}

// Walks two parameter sets of identical layout side by side.
template <typename A, typename B, typename Fn>
void zip_tensors(A& a, B& b, Fn&& fn) {
  auto ta = named_tensors(a);
  auto tb = named_tensors(b);
  if (ta.size() != tb.size()) throw DimensionError("parameter layouts differ in tensor count");
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first)
      throw DimensionError("parameter layouts differ: " + ta[i].first + " vs " + tb[i].first);
    fn(ta[i].first, *ta[i].second, *tb[i].second);
  }
}

// Zero tensors with the shapes implied by the config.
inline ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const auto vs = static_cast<std::size_t>(cfg.vocab_size);
  ModelParams p;
  p.W_E = Matrix(vs, dm);
  if (cfg.use_pos_embed) p.W_pos = Matrix(static_cast<std::size_t>(cfg.seq_len), dm);
  p.blocks.assign(static_cast<std::size_t>(cfg.n_layers),
                  std::vector<HeadParams>(static_cast<std::size_t>(cfg.n_heads),
                                          HeadParams{Matrix(dm, dh), Matrix(dm, dh),
                                                     Matrix(dm, dh), Matrix(dh, dm)}));
  p.W_U = Matrix(dm, vs);
  return p;
}

// 0.8 / sqrt(d_model) for d_model = 8
inline constexpr double kInitStd = 0.28284271247461906;

// Every tensor draws from its own Philox stream, keyed by seed and tensor index.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zero_params(cfg);
  std::uint64_t stream = 0;
  for_each_tensor(p, [&](const std::string&, Matrix& m) {
    Philox4x32 rng(seed, stream++);
    for (double& x : m.data()) x = kInitStd * rng.normal();
  });
  return p;
}

inline void check_params(const ModelConfig& cfg, const ModelParams& p) {
  const ModelParams ref = zero_params(cfg);
  if (ref.W_pos.has_value() != p.W_pos.has_value())
    throw DimensionError("positional embedding presence does not match config");
  zip_tensors(ref, p, [](const std::string& name, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError("tensor " + name + " has shape " + b.shape_string() + ", expected " +
                           a.shape_string());
  });
}

enum class CompositionPath { Q, K, V };

inline std::string to_string(CompositionPath p) {
  switch (p) {
    case CompositionPath::Q: return "Q";
    case CompositionPath::K: return "K";
    case CompositionPath::V: return "V";
  }
  return "?";
}

struct ForwardOptions {
  // When set, layers >= 1 feed the chosen projection with the residual minus
  // layer 0's summed head output; the other projections see the full residual.
  std::optional<CompositionPath> ablate_composition;
};

struct HeadTrace {
  Matrix q, k, v;   // seq x d_head
  Matrix pattern;   // seq x seq attention probabilities
  Matrix z;         // pattern * v
  Matrix out;       // z * W_O, seq x d_model
};

struct ForwardTrace {
  Matrix embed_component;  // seq x d_model
  Matrix pos_component;    // seq x d_model (zeros without positional embeddings)
  std::vector<Matrix> resid_pre;                 // [layer], seq x d_model
  std::vector<std::vector<HeadTrace>> heads;     // [layer][head]
  Matrix resid_final;
  Matrix logits;  // seq x vocab

  const Matrix& attn(std::size_t layer, std::size_t head) const { return heads[layer][head].pattern; }
  const Matrix& head_out(std::size_t layer, std::size_t head) const { return heads[layer][head].out; }
  std::span<const double> mid_logits() const& { return logits.row(kMidPosition); }
  std::vector<double> mid_logits() && {
    auto r = logits.row(kMidPosition);
    return {r.begin(), r.end()};
  }
};

inline void check_prompt(const ModelConfig& cfg, std::span<const TokenId> prompt) {
  if (prompt.size() != static_cast<std::size_t>(cfg.seq_len))
    throw DomainError("bad_prompt", "prompt length " + std::to_string(prompt.size()) +
                                        ", expected " + std::to_string(cfg.seq_len));
  for (TokenId t : prompt)
    if (t < 0 || t >= cfg.vocab_size)
      throw DomainError("token_out_of_range", "token id " + std::to_string(t) + " outside vocab");
}

namespace detail {

inline Matrix attention_scores(const Matrix& q, const Matrix& k, double scale, bool causal) {
  Matrix s = matmul_nt(q, k);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      s(i, j) = (causal && j > i) ? kMaskSentinel : s(i, j) * scale;
  return s;
}

}  // namespace detail

inline ForwardTrace forward(const ModelConfig& cfg, const ModelParams& params,
                            std::span<const TokenId> prompt, const ForwardOptions& opts = {}) {
  check_prompt(cfg, prompt);
  const std::size_t seq = prompt.size();
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));

  ForwardTrace tr;
  tr.embed_component = Matrix(seq, dm);
  tr.pos_component = Matrix(seq, dm);
  for (std::size_t i = 0; i < seq; ++i) {
    auto e = params.W_E.row(static_cast<std::size_t>(prompt[i]));
    std::copy(e.begin(), e.end(), tr.embed_component.row(i).begin());
    if (params.W_pos) {
      auto p = params.W_pos->row(i);
      std::copy(p.begin(), p.end(), tr.pos_component.row(i).begin());
    }
  }

  Matrix resid = tr.embed_component + tr.pos_component;
  Matrix layer0_out;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    tr.resid_pre.push_back(resid);
    const bool ablate = opts.ablate_composition.has_value() && l >= 1;
    const Matrix stripped = ablate ? resid - layer0_out : Matrix();
    auto input_for = [&](CompositionPath path) -> const Matrix& {
      return ablate && *opts.ablate_composition == path ? stripped : tr.resid_pre[l];
    };

    Matrix layer_out(seq, dm);
    std::vector<HeadTrace> heads;
    for (const auto& hp : params.blocks[l]) {
      HeadTrace ht;
      ht.q = matmul(input_for(CompositionPath::Q), hp.W_Q);
      ht.k = matmul(input_for(CompositionPath::K), hp.W_K);
      ht.v = matmul(input_for(CompositionPath::V), hp.W_V);
      ht.pattern = softmax_rows(detail::attention_scores(ht.q, ht.k, scale, cfg.causal_mask));
      ht.z = matmul(ht.pattern, ht.v);
      ht.out = matmul(ht.z, hp.W_O);
      layer_out += ht.out;
      heads.push_back(std::move(ht));
    }
    tr.heads.push_back(std::move(heads));
    if (l == 0) layer0_out = layer_out;
    resid += layer_out;
  }
  tr.resid_final = std::move(resid);
  tr.logits = matmul(tr.resid_final, params.W_U);
  return tr;
}

inline std::vector<double> predict_distribution(const ModelConfig& cfg, const ModelParams& params,
                                                std::span<const TokenId> prompt,
                                                const ForwardOptions& opts = {}) {
  return softmax(forward(cfg, params, prompt, opts).mid_logits());
}

// Argmax with ties going to the lowest token id.
inline TokenId argmax_token(std::span<const double> logits, bool* tied = nullptr) {
  std::size_t best = 0;
  bool tie = false;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) {
      best = i;
      tie = false;
    } else if (logits[i] == logits[best]) {
      tie = true;
    }
  }
  if (tied) *tied = tie;
  return static_cast<TokenId>(best);
}

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t ties = 0;  // examples whose argmax was decided by the tie-break
};

inline AccuracyResult accuracy_detail(const ModelConfig& cfg, const ModelParams& params,
                                      const std::vector<IoiExample>& examples,
                                      const ForwardOptions& opts = {}) {
  if (examples.empty()) throw DomainError("empty_input", "accuracy over zero examples");
  std::size_t correct = 0;
  AccuracyResult r;
  for (const auto& ex : examples) {
    const auto tr = forward(cfg, params, ex.prompt, opts);
    bool tied = false;
    if (argmax_token(tr.mid_logits(), &tied) == ex.target) ++correct;
    if (tied) ++r.ties;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return r;
}

inline double accuracy(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<IoiExample>& examples, const ForwardOptions& opts = {}) {
  return accuracy_detail(cfg, params, examples, opts).accuracy;
}

struct Model {
  ModelConfig config;
  ModelParams params;
};

}  // namespace ioi
