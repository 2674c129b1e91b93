#pragma once

// Causal experiments on trained models: replacing every name embedding by the
// mean name embedding, retraining without positional embeddings, Q/K/V
// composition ablation in the two-layer model, and the single-head failure
// diagnosis.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ioi/analysis.hpp"
#include "ioi/dataset.hpp"
#include "ioi/error.hpp"
#include "ioi/model.hpp"
#include "ioi/training.hpp"

namespace ioi {

enum class InterventionKind { mean_name_embed, no_pos_embed_retrain, composition_ablate, single_head_diagnosis };

inline std::string to_string(InterventionKind k) {
  switch (k) {
    case InterventionKind::mean_name_embed: return "mean_name_embed";
    case InterventionKind::no_pos_embed_retrain: return "no_pos_embed_retrain";
    case InterventionKind::composition_ablate: return "composition_ablate";
    case InterventionKind::single_head_diagnosis: return "single_head_diagnosis";
  }
  return "?";
}

struct InterventionSpec {
  InterventionKind kind = InterventionKind::mean_name_embed;
  std::optional<CompositionPath> composition_path;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (composition_path.has_value() != (kind == InterventionKind::composition_ablate))
      throw DomainError("bad_intervention", "a composition path is required for, and only for, composition ablation");
  }
};

struct RunMetrics {
  double accuracy = 0.0;
  double mean_correct_prob = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  RunMetrics intervened;
  RunMetrics baseline;
};

struct InterventionReport {
  InterventionSpec spec;
  std::vector<SeedResult> per_seed;
  RunMetrics aggregate;           // mean over seeds (intervened)
  RunMetrics baseline_aggregate;  // mean over seeds (baseline)
  // baseline - intervened
  double accuracy_drop() const { return baseline_aggregate.accuracy - aggregate.accuracy; }
  double prob_drop() const { return baseline_aggregate.mean_correct_prob - aggregate.mean_correct_prob; }
  std::vector<AttentionSummary> attention;  // intervened runs
  std::vector<AttentionSummary> baseline_attention;
  std::map<std::string, double> stats;
};

inline RunMetrics evaluate(const ModelConfig& cfg, const ModelParams& params,
                           const std::vector<IoiExample>& examples, const ForwardOptions& opts = {}) {
  if (examples.empty()) throw DomainError("empty_input", "evaluation over zero examples");
  RunMetrics m;
  m.accuracy = accuracy(cfg, params, examples, opts);
  double p = 0.0;
  for (const auto& ex : examples)
    p += predict_distribution(cfg, params, ex.prompt, opts)[static_cast<std::size_t>(ex.target)];
  m.mean_correct_prob = p / static_cast<double>(examples.size());
  return m;
}

// Every name row of W_E becomes the mean name row; nothing else changes.
inline ModelParams mean_name_embed_patch(const ModelParams& params) {
  ModelParams out = params;
  const std::size_t dm = params.W_E.cols();
  std::vector<double> mean(dm, 0.0);
  for (TokenId t = 0; t < Vocab::kNames; ++t)
    for (std::size_t j = 0; j < dm; ++j) mean[j] += params.W_E(static_cast<std::size_t>(t), j);
  for (double& x : mean) x /= Vocab::kNames;
  for (TokenId t = 0; t < Vocab::kNames; ++t)
    for (std::size_t j = 0; j < dm; ++j) out.W_E(static_cast<std::size_t>(t), j) = mean[j];
  return out;
}

inline InterventionReport run_mean_name_embed(const ModelConfig& cfg, const ModelParams& params,
                                              const std::vector<IoiExample>& examples) {
  InterventionReport r;
  r.spec.kind = InterventionKind::mean_name_embed;
  r.spec.seeds = {cfg.seed};
  const ModelParams patched = mean_name_embed_patch(params);
  SeedResult s{cfg.seed, evaluate(cfg, patched, examples), evaluate(cfg, params, examples)};
  r.per_seed.push_back(s);
  r.aggregate = s.intervened;
  r.baseline_aggregate = s.baseline;
  for (AttentionScope scope : {AttentionScope::all, AttentionScope::BAAB, AttentionScope::BABA}) {
    r.attention.push_back(average_attention(cfg, patched, examples, scope));
    r.baseline_attention.push_back(average_attention(cfg, params, examples, scope));
  }
  return r;
}

// Trains the architecture without positional embeddings once per seed, and
// the same architecture with them as the baseline.
inline InterventionReport run_no_pos_retrain(ModelConfig cfg, const TrainConfig& tcfg,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::vector<IoiExample>& examples = enumerate_dataset()) {
  if (seeds.empty()) throw DomainError("bad_argument", "no-pos retraining needs at least one seed");
  InterventionReport r;
  r.spec.kind = InterventionKind::no_pos_embed_retrain;
  r.spec.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    ModelConfig with_pos = cfg;
    with_pos.use_pos_embed = true;
    with_pos.seed = seed;
    ModelConfig without = with_pos;
    without.use_pos_embed = false;
    const auto base = train(with_pos, tcfg, examples);
    const auto ablated = train(without, tcfg, examples);
    r.per_seed.push_back({seed, evaluate(without, ablated.params, examples), evaluate(with_pos, base.params, examples)});
    r.attention.push_back(average_attention(without, ablated.params, examples, AttentionScope::all));
    r.baseline_attention.push_back(average_attention(with_pos, base.params, examples, AttentionScope::all));
  }
  for (const auto& s : r.per_seed) {
    r.aggregate.accuracy += s.intervened.accuracy;
    r.aggregate.mean_correct_prob += s.intervened.mean_correct_prob;
    r.baseline_aggregate.accuracy += s.baseline.accuracy;
    r.baseline_aggregate.mean_correct_prob += s.baseline.mean_correct_prob;
  }
  const double inv = 1.0 / static_cast<double>(seeds.size());
  r.aggregate.accuracy *= inv;
  r.aggregate.mean_correct_prob *= inv;
  r.baseline_aggregate.accuracy *= inv;
  r.baseline_aggregate.mean_correct_prob *= inv;
  return r;
}

inline InterventionReport composition_ablate(const ModelConfig& cfg, const ModelParams& params,
                                             CompositionPath path, const std::vector<IoiExample>& examples) {
  if (cfg.n_layers < 2)
    throw DomainError("wrong_architecture", "composition ablation needs a model with at least two layers");
  InterventionReport r;
  r.spec.kind = InterventionKind::composition_ablate;
  r.spec.composition_path = path;
  r.spec.seeds = {cfg.seed};
  ForwardOptions opts;
  opts.ablate_composition = path;
  SeedResult s{cfg.seed, evaluate(cfg, params, examples, opts), evaluate(cfg, params, examples)};
  r.per_seed.push_back(s);
  r.aggregate = s.intervened;
  r.baseline_aggregate = s.baseline;
  r.stats["accuracy_drop"] = r.accuracy_drop();
  return r;
}

// Evidence that one head cannot both find and copy the answer: probability
// mass on the two prompt names, how evenly MID attends to them, and the sign
// structure of the OV circuit over names.
inline InterventionReport single_head_diagnosis(const ModelConfig& cfg, const ModelParams& params,
                                                const std::vector<IoiExample>& examples) {
  if (cfg.n_layers != 1 || cfg.n_heads != 1)
    throw DomainError("wrong_architecture", "single-head diagnosis needs a 1-layer 1-head model");
  if (examples.empty()) throw DomainError("empty_input", "diagnosis over zero examples");
  InterventionReport r;
  r.spec.kind = InterventionKind::single_head_diagnosis;
  r.spec.seeds = {cfg.seed};
  const RunMetrics m = evaluate(cfg, params, examples);
  r.per_seed.push_back({cfg.seed, m, m});
  r.aggregate = m;
  r.baseline_aggregate = m;

  double p_first = 0.0, p_second = 0.0, p_min = 1.0, p_max = 0.0, gap = 0.0;
  for (const auto& ex : examples) {
    const auto tr = forward(cfg, params, ex.prompt);
    const auto p = softmax(tr.mid_logits());
    const double a = p[static_cast<std::size_t>(ex.prompt[1])];
    const double b = p[static_cast<std::size_t>(ex.prompt[2])];
    p_first += a;
    p_second += b;
    p_min = std::min({p_min, a, b});
    p_max = std::max({p_max, a, b});
    gap += tr.attn(0, 0)(kMidPosition, 1) - tr.attn(0, 0)(kMidPosition, 2);
  }
  const double n = static_cast<double>(examples.size());
  r.stats["mean_prob_name1"] = p_first / n;
  r.stats["mean_prob_name2"] = p_second / n;
  r.stats["mean_prob_prompt_names"] = (p_first + p_second) / n;
  r.stats["min_prob_prompt_name"] = p_min;
  r.stats["max_prob_prompt_name"] = p_max;
  r.stats["mean_attn_gap_name1_name2"] = std::abs(gap / n);

  const Matrix ov = ov_circuit(params, 0, 0).matrix;
  double min_diag = ov(0, 0), off_sum = 0.0;
  int dominant = 0;
  for (std::size_t i = 0; i < Vocab::kNames; ++i) {
    min_diag = std::min(min_diag, ov(i, i));
    bool row_max = true;
    for (std::size_t j = 0; j < Vocab::kNames; ++j) {
      if (j == i) continue;
      off_sum += ov(i, j);
      if (ov(i, j) > ov(i, i)) row_max = false;
    }
    dominant += row_max ? 1 : 0;
  }
  r.stats["ov_min_name_diagonal"] = min_diag;
  r.stats["ov_mean_name_offdiagonal"] = off_sum / (Vocab::kNames * (Vocab::kNames - 1));
  r.stats["ov_diagonal_dominant_rows"] = dominant;
  r.attention.push_back(average_attention(cfg, params, examples, AttentionScope::all));
  return r;
}

}  // namespace ioi
