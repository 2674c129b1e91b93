#pragma once

// Artifact writers shared by the command-line tool, and the one-shot
// reproduction run that trains every model, runs every analysis and
// intervention, and scores the outcome against the reference numbers.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ioi/analysis.hpp"
#include "ioi/checkpoint.hpp"
#include "ioi/dataset.hpp"
#include "ioi/interventions.hpp"
#include "ioi/model.hpp"
#include "ioi/report.hpp"
#include "ioi/training.hpp"

namespace ioi {

inline std::string corpus_text(const std::vector<IoiExample>& examples) {
  std::string out;
  for (const auto& ex : examples) out += corpus_line(ex) + "\n";
  return out;
}

inline std::string train_log_csv(const TrainLog& log) {
  std::string out = "step,lr,loss,accuracy\n";
  for (const auto& s : log.steps)
    out += std::to_string(s.step) + "," + format_g17(s.lr) + "," + format_g17(s.loss) + "," + format_g17(s.accuracy) + "\n";
  return out;
}

// Writes <stem>.csv and <stem>.svg side by side; returns the SVG path.
inline fs::path write_matrix_artifacts(const fs::path& dir, const std::string& stem, const Matrix& m,
                                       const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                                       const std::string& title) {
  write_text_file(dir / (stem + ".csv"), matrix_csv(m, rows, cols));
  const fs::path svg = dir / (stem + ".svg");
  emit_heatmap_svg(m, rows, cols, svg, title);
  return svg;
}

inline std::vector<fs::path> write_attention_artifacts(const fs::path& dir, const AttentionSummary& s,
                                                       const std::string& label = "") {
  std::vector<fs::path> svgs;
  for (std::size_t l = 0; l < s.mean.size(); ++l)
    for (std::size_t h = 0; h < s.mean[l].size(); ++h) {
      const std::string head = head_component_name(l, h);
      std::string title = "attention " + head + " (" + to_string(s.scope) + ", n=" + std::to_string(s.n_examples) + ")";
      if (!label.empty()) title = label + ": " + title;
      svgs.push_back(write_matrix_artifacts(dir, "attention_" + to_string(s.scope) + "_" + head, s.at(l, h),
                                            s.labels, s.labels, title));
    }
  return svgs;
}

inline std::vector<fs::path> write_circuit_artifacts(const fs::path& dir, const ModelParams& params,
                                                     CircuitBasis basis = CircuitBasis::token) {
  std::vector<fs::path> svgs;
  const bool ext = basis == CircuitBasis::token_plus_pos;
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    for (std::size_t h = 0; h < params.blocks[l].size(); ++h) {
      const std::string head = head_component_name(l, h);
      const auto qk = qk_circuit(params, l, h, basis);
      svgs.push_back(write_matrix_artifacts(dir, std::string(ext ? "qk_pos_" : "qk_") + head, qk.matrix,
                                            qk.row_labels, qk.col_labels,
                                            "QK circuit " + head + (ext ? " (token+pos)" : "") + ", query x key"));
      if (ext) continue;
      const auto ov = ov_circuit(params, l, h);
      svgs.push_back(write_matrix_artifacts(dir, "ov_" + head, ov.matrix, ov.row_labels, ov.col_labels,
                                            "OV circuit " + head + ", source x logit"));
    }
  return svgs;
}

inline json eigen_json(const std::vector<ComplexScalar>& ev) {
  json out = json::array();
  for (const auto& l : ev) out.push_back({l.real(), l.imag()});
  return out;
}

inline json spectral_json(const SpectralSummary& s) {
  return json{{"circuit", to_string(s.kind)},
              {"layer", s.layer},
              {"head", s.head},
              {"positive_fraction", s.positive_fraction},
              {"has_negative_real_pair", s.has_negative_real_pair()},
              {"eigenvalues", eigen_json(s.eigenvalues)}};
}

// Token-basis spectra of every head's QK and OV circuit.
inline json spectral_report(const ModelParams& params) {
  json out = json::array();
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    for (std::size_t h = 0; h < params.blocks[l].size(); ++h) {
      out.push_back(spectral_json(spectral_summary(qk_circuit(params, l, h))));
      out.push_back(spectral_json(spectral_summary(ov_circuit(params, l, h))));
    }
  return out;
}

// Largest |sum of components - total| over examples and directions.
inline double additivity_error(const DecompositionTable& t) {
  double worst = 0.0;
  for (std::size_t e = 0; e < t.per_example.size(); ++e)
    for (std::size_t d = 0; d < 4; ++d) {
      double s = 0.0;
      for (std::size_t c = 0; c < t.components.size(); ++c) s += t.per_example[e](c, d);
      worst = std::max(worst, std::abs(s - t.per_example_total[e][d]));
    }
  return worst;
}

inline json decomposition_json(const DecompositionTable& t) {
  json rows = json::array();
  for (std::size_t c = 0; c < t.components.size(); ++c) {
    json r{{"component", t.components[c]}, {"dominant", t.dominant_direction(t.components[c])}};
    for (std::size_t d = 0; d < 4; ++d) r[kDirectionNames[d]] = t.mean(c, d);
    rows.push_back(std::move(r));
  }
  return json{{"directions", t.source == DirectionSource::unembed ? "unembed" : "embed"},
              {"n_examples", t.per_example.size()},
              {"mean", std::move(rows)},
              {"additivity_max_abs_error", additivity_error(t)}};
}

inline fs::path write_decomposition_artifacts(const fs::path& dir, const DecompositionTable& t) {
  const std::vector<std::string> cols(kDirectionNames.begin(), kDirectionNames.end());
  write_text_file(dir / "decomposition.json", decomposition_json(t).dump(2) + "\n");
  return write_matrix_artifacts(dir, "decomposition", t.mean, t.components, cols,
                                "mean projection at MID onto unembedding directions");
}

inline json metrics_json(const RunMetrics& m) {
  return json{{"accuracy", m.accuracy}, {"mean_correct_prob", m.mean_correct_prob}};
}

inline json intervention_json(const InterventionReport& r) {
  json per_seed = json::array();
  for (const auto& s : r.per_seed)
    per_seed.push_back({{"seed", s.seed}, {"intervened", metrics_json(s.intervened)}, {"baseline", metrics_json(s.baseline)}});
  json out{{"kind", to_string(r.spec.kind)},
           {"seeds", r.spec.seeds},
           {"per_seed", std::move(per_seed)},
           {"aggregate", metrics_json(r.aggregate)},
           {"baseline_aggregate", metrics_json(r.baseline_aggregate)},
           {"accuracy_drop", r.accuracy_drop()},
           {"prob_drop", r.prob_drop()}};
  if (r.spec.composition_path) out["composition_path"] = to_string(*r.spec.composition_path);
  if (!r.stats.empty()) out["stats"] = r.stats;
  return out;
}

inline json gradcheck_json(const GradcheckReport& r) {
  json t = json::array();
  for (const auto& e : r.tensors)
    t.push_back({{"tensor", e.tensor}, {"coords", e.coords_checked}, {"max_rel_error", e.max_rel_error},
                 {"max_abs_error", e.max_abs_error}});
  return json{{"max_rel_error", r.max_rel_error}, {"tensors", std::move(t)}};
}

// Train a model and drop checkpoint, log and final metrics into dir.
inline TrainResult train_to_dir(const ModelConfig& cfg, const TrainConfig& tcfg, const fs::path& dir,
                                const std::vector<IoiExample>& data = enumerate_dataset()) {
  auto r = train(cfg, tcfg, data);
  fs::create_directories(dir);
  save_checkpoint(r.params, cfg, dir / "checkpoint.json");
  write_text_file(dir / "train_log.csv", train_log_csv(r.log));
  json rep{{"model", config_to_json(cfg)},
           {"train", train_config_to_json(tcfg)},
           {"final_loss", r.log.final_loss},
           {"final_accuracy", r.log.final_accuracy},
           {"converged", r.log.converged},
           {"metrics", metrics_json(evaluate(cfg, r.params, data))}};
  write_text_file(dir / "train_report.json", rep.dump(2) + "\n");
  return r;
}

// ---- reproduction -------------------------------------------------------

struct CriterionCheck {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string measured;
  std::string reference;
  std::string band;
};

struct ReproduceOptions {
  std::uint64_t seed = ModelConfig{}.seed;
  std::vector<std::uint64_t> no_pos_seeds{1, 2, 3};
  TrainConfig train;
};

struct ReproduceResult {
  std::vector<CriterionCheck> criteria;
  std::vector<fs::path> svgs;
  json summary;
  json timings;  // wall-clock seconds per stage; kept out of the digested artifacts
  bool all_pass() const {
    for (const auto& c : criteria)
      if (!c.pass) return false;
    return true;
  }
};

inline std::string fmt3(double v) { return format_fixed(v, 3); }

namespace detail {

// Re-throws any library error with the failing stage named in the message.
template <typename F>
auto run_stage(const std::string& stage, json& timings, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      timings[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto out = f();
      timings[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return out;
    }
  } catch (const Error& e) {
    throw Error(e.category(), e.kind(), "stage " + stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCategory::data, "stage_failed", "stage " + stage + ": " + e.what());
  }
}

}  // namespace detail

inline std::string summary_markdown(const std::vector<CriterionCheck>& cs) {
  std::string md = "| # | check | measured | reference | band | result |\n|---|---|---|---|---|---|\n";
  for (const auto& c : cs)
    md += "| " + std::to_string(c.id) + " | " + c.title + " | " + c.measured + " | " + c.reference + " | " + c.band +
          " | " + (c.pass ? "PASS" : "FAIL") + " |\n";
  return md;
}

inline ReproduceResult reproduce_paper(const fs::path& out_dir, const ReproduceOptions& opt = {}) {
  if (opt.no_pos_seeds.size() < 3)
    throw UsageError("bad_argument", "no-pos retraining needs at least three seeds");
  ReproduceResult res;
  const auto data = enumerate_dataset();
  fs::create_directories(out_dir);
  write_text_file(out_dir / "corpus.csv", corpus_text(data));
  auto keep = [&](std::vector<fs::path> v) { res.svgs.insert(res.svgs.end(), v.begin(), v.end()); };

  // 1 layer, 1 head
  ModelConfig c11;
  c11.n_layers = 1;
  c11.n_heads = 1;
  c11.seed = opt.seed;
  const fs::path d11 = out_dir / "1L1H";
  const auto r11 = detail::run_stage("train_1L1H", res.timings, [&] { return train_to_dir(c11, opt.train, d11, data); });
  const auto diag = detail::run_stage("diagnose_1L1H", res.timings, [&] {
    auto rep = single_head_diagnosis(c11, r11.params, data);
    write_text_file(d11 / "diagnosis.json", intervention_json(rep).dump(2) + "\n");
    keep(write_attention_artifacts(d11, rep.attention.front()));
    keep(write_circuit_artifacts(d11, r11.params));
    return rep;
  });

  // 1 layer, 2 heads
  ModelConfig c12;
  c12.n_layers = 1;
  c12.n_heads = 2;
  c12.seed = opt.seed;
  const fs::path d12 = out_dir / "1L2H";
  const auto t12_0 = std::chrono::steady_clock::now();
  const auto r12 = detail::run_stage("train_1L2H", res.timings, [&] { return train_to_dir(c12, opt.train, d12, data); });
  const double secs12 = std::chrono::duration<double>(std::chrono::steady_clock::now() - t12_0).count();
  const double acc12 = accuracy(c12, r12.params, data);

  std::array<SpectralSummary, 2> qk, ov;
  DecompositionTable decomp;
  detail::run_stage("analyze_1L2H", res.timings, [&] {
    for (AttentionScope s : {AttentionScope::all, AttentionScope::BAAB, AttentionScope::BABA})
      keep(write_attention_artifacts(d12, average_attention(c12, r12.params, data, s)));
    keep(write_circuit_artifacts(d12, r12.params));
    keep(write_circuit_artifacts(d12, r12.params, CircuitBasis::token_plus_pos));
    for (std::size_t h = 0; h < 2; ++h) {
      qk[h] = spectral_summary(qk_circuit(r12.params, 0, h));
      ov[h] = spectral_summary(ov_circuit(r12.params, 0, h));
    }
    write_text_file(d12 / "spectral.json", spectral_report(r12.params).dump(2) + "\n");
    decomp = decompose_residual(c12, r12.params, data);
    keep({write_decomposition_artifacts(d12, decomp)});
  });

  const auto mean_embed = detail::run_stage("mean_embed_1L2H", res.timings, [&] {
    auto rep = run_mean_name_embed(c12, r12.params, data);
    const fs::path d = d12 / "mean_embed";
    write_text_file(d / "report.json", intervention_json(rep).dump(2) + "\n");
    for (const auto& a : rep.attention) keep(write_attention_artifacts(d, a, "mean name embedding"));
    return rep;
  });

  // no positional embeddings, several seeds
  const auto nopos = detail::run_stage("no_pos_1L2H", res.timings, [&] {
    ModelConfig c = c12;
    c.use_pos_embed = false;
    auto rep = run_no_pos_retrain(c, opt.train, opt.no_pos_seeds, data);
    const fs::path d = out_dir / "no_pos";
    write_text_file(d / "report.json", intervention_json(rep).dump(2) + "\n");
    for (std::size_t i = 0; i < rep.attention.size(); ++i)
      keep(write_attention_artifacts(d / ("seed_" + std::to_string(opt.no_pos_seeds[i])), rep.attention[i],
                                     "no pos, seed " + std::to_string(opt.no_pos_seeds[i])));
    return rep;
  });

  // 2 layers, 1 head
  ModelConfig c21;
  c21.n_layers = 2;
  c21.n_heads = 1;
  c21.seed = opt.seed;
  const fs::path d21 = out_dir / "2L1H";
  const auto r21 = detail::run_stage("train_2L1H", res.timings, [&] { return train_to_dir(c21, opt.train, d21, data); });
  std::array<double, 3> drop{};
  detail::run_stage("composition_2L1H", res.timings, [&] {
    keep(write_attention_artifacts(d21, average_attention(c21, r21.params, data, AttentionScope::all)));
    json all = json::array();
    for (CompositionPath p : {CompositionPath::Q, CompositionPath::K, CompositionPath::V}) {
      const auto rep = composition_ablate(c21, r21.params, p, data);
      drop[static_cast<std::size_t>(p)] = rep.accuracy_drop();
      all.push_back(intervention_json(rep));
    }
    write_text_file(d21 / "composition.json", all.dump(2) + "\n");
  });

  // scoring
  auto& cs = res.criteria;
  {
    const bool fast = secs12 < 60.0;
    cs.push_back({1, "1L2H accuracy", acc12 == 1.0 && fast, fmt3(acc12), "1.0", "= 1.0, training < 60 s"});
  }
  {
    const double p1 = diag.stats.at("mean_prob_name1"), p2 = diag.stats.at("mean_prob_name2");
    const double both = diag.stats.at("mean_prob_prompt_names");
    const bool ok = both > 0.9 && p1 >= 0.35 && p1 <= 0.65 && p2 >= 0.35 && p2 <= 0.65 && diag.aggregate.accuracy < 0.7;
    cs.push_back({2, "1L1H name probabilities", ok,
                  "names " + fmt3(p1) + "/" + fmt3(p2) + ", sum " + fmt3(both) + ", acc " + fmt3(diag.aggregate.accuracy),
                  "~0.5 each", "sum > 0.9, each in [0.35, 0.65], acc < 0.7"});
  }
  {
    const bool ov0 = ov[0].positive_fraction >= 0.9;
    const bool ov1 = ov[1].positive_fraction >= 0.2 && ov[1].positive_fraction <= 0.8 && ov[1].has_negative_real_pair();
    const bool qk1 = qk[1].positive_fraction < -0.3;
    const bool qk0 = std::abs(qk[0].positive_fraction) <= 0.3;
    cs.push_back({3, "spectral signatures", ov0 && ov1 && qk1 && qk0,
                  "OV0 " + fmt3(ov[0].positive_fraction) + ", OV1 " + fmt3(ov[1].positive_fraction) +
                      (ov[1].has_negative_real_pair() ? " (neg pair)" : " (no neg pair)") + ", QK1 " +
                      fmt3(qk[1].positive_fraction) + ", QK0 " + fmt3(qk[0].positive_fraction),
                  "OV0 1.0, OV1 0.55, QK1 -0.65, QK0 -0.06",
                  "OV0 >= 0.9, OV1 in [0.2, 0.8] + neg pair, QK1 < -0.3, abs(QK0) <= 0.3"});
  }
  {
    const std::string h0 = decomp.dominant_direction("L0H0"), h1 = decomp.dominant_direction("L0H1");
    const double err = additivity_error(decomp);
    cs.push_back({4, "decomposition roles", h0 == "sum" && h1 == "difference" && err <= 1e-9,
                  "H0 " + h0 + ", H1 " + h1 + ", additivity err " + format_fixed(err, 12), "H0 sum, H1 difference",
                  "exact roles, additivity <= 1e-9"});
  }
  {
    const double a = nopos.aggregate.accuracy, p = nopos.aggregate.mean_correct_prob;
    const bool ok = a >= 0.55 && a <= 0.85 && a < 1.0 && p >= 0.5 && p <= 0.8 && nopos.baseline_aggregate.accuracy == 1.0;
    cs.push_back({5, "no positional embeddings", ok,
                  "acc " + fmt3(a) + ", p " + fmt3(p) + " over " + std::to_string(opt.no_pos_seeds.size()) +
                      " seeds, with pos " + fmt3(nopos.baseline_aggregate.accuracy),
                  "acc 0.70, p 0.67", "acc in [0.55, 0.85] and < 1, p in [0.5, 0.8], with pos = 1.0"});
  }
  {
    const double q = drop[0], k = drop[1], v = drop[2];
    const bool ok = q >= v && v > k && q >= 0.9 && v >= 0.8 && k <= 0.5;
    cs.push_back({6, "2L1H composition drops", ok,
                  "Q " + fmt3(q) + ", K " + fmt3(k) + ", V " + fmt3(v) + " (baseline " + fmt3(r21.log.final_accuracy) + ")",
                  "Q 1.000, K 0.267, V 0.933", "Q >= V > K, Q >= 0.9, V >= 0.8, K <= 0.5"});
  }

  json rows = json::array();
  for (const auto& c : cs)
    rows.push_back({{"id", c.id}, {"check", c.title}, {"pass", c.pass}, {"measured", c.measured},
                    {"reference", c.reference}, {"band", c.band}});
  res.summary = json{{"seed", opt.seed},
                     {"no_pos_seeds", opt.no_pos_seeds},
                     {"train", train_config_to_json(opt.train)},
                     {"criteria", std::move(rows)},
                     {"mean_embed", intervention_json(mean_embed)},
                     {"svg_count", res.svgs.size()}};
  write_text_file(out_dir / "summary.json", res.summary.dump(2) + "\n");
  write_text_file(out_dir / "summary.md", summary_markdown(cs));
  return res;
}

}  // namespace ioi
