#pragma once

// ioi-lab command-line front end. cli_main returns the process exit code:
// 0 success, 2 usage error, 3 data error, 4 numerical failure. Failures print
// exactly one line to stderr:
//   ioi-lab: error: <kind>: <message>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ioi/analysis.hpp"
#include "ioi/checkpoint.hpp"
#include "ioi/dataset.hpp"
#include "ioi/error.hpp"
#include "ioi/interventions.hpp"
#include "ioi/model.hpp"
#include "ioi/pipeline.hpp"
#include "ioi/report.hpp"
#include "ioi/training.hpp"

namespace ioi {

inline constexpr const char* kOutDirEnv = "IOI_LAB_OUT";
inline constexpr const char* kDefaultOutDir = "ioi-runs";

inline fs::path default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? fs::path(env) : fs::path(kDefaultOutDir);
}

namespace cli {

struct ModelFlags {
  int layers = 1;
  int heads = 2;
  bool no_pos = false;
  bool bidirectional = false;
  std::uint64_t seed = ModelConfig{}.seed;

  ModelConfig config() const {
    ModelConfig c;
    c.n_layers = layers;
    c.n_heads = heads;
    c.use_pos_embed = !no_pos;
    c.causal_mask = !bidirectional;
    c.seed = seed;
    c.validate();
    return c;
  }
};

inline void add_model_flags(CLI::App* app, ModelFlags& f, bool with_seed = true) {
  app->add_option("--layers", f.layers, "attention layers")->check(CLI::Range(1, 8))->capture_default_str();
  app->add_option("--heads", f.heads, "heads per layer")->check(CLI::Range(1, 8))->capture_default_str();
  app->add_flag("--no-pos", f.no_pos, "drop the positional embedding");
  app->add_flag("--bidirectional", f.bidirectional, "disable the causal mask");
  if (with_seed) app->add_option("--seed", f.seed, "initialization seed")->capture_default_str();
}

inline void add_train_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--steps", t.total_steps, "full-batch optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--max-lr", t.max_lr, "peak one-cycle learning rate")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay, "decoupled weight decay")->capture_default_str();
  app->add_option("--pct-start", t.onecycle_pct_start, "warmup fraction")->capture_default_str();
  app->add_option("--div-factor", t.onecycle_div_factor, "initial lr = max-lr / div-factor")->capture_default_str();
  app->add_option("--final-div-factor", t.onecycle_final_div_factor, "final lr = max-lr / final-div-factor")
      ->capture_default_str();
}

struct Context {
  fs::path out_dir = default_out_dir();
  std::string command_line;
  std::string started_at;
  std::optional<fs::path> config_file;
  std::ostream* out = &std::cout;
};

inline fs::path checkpoint_path(const Context& ctx, const std::string& flag) {
  return flag.empty() ? ctx.out_dir / "checkpoint.json" : fs::path(flag);
}

inline void finish(const Context& ctx, json configs, std::vector<std::uint64_t> seeds, std::vector<fs::path> inputs) {
  ManifestInput in;
  in.command_line = ctx.command_line;
  in.configs = std::move(configs);
  in.seeds = std::move(seeds);
  if (ctx.config_file) inputs.push_back(*ctx.config_file);
  in.inputs = std::move(inputs);
  in.started_at = ctx.started_at;
  write_manifest(ctx.out_dir, in);
}

inline void print_metrics(std::ostream& os, const RunMetrics& m) {
  os << "accuracy=" << format_fixed(m.accuracy, 4) << " mean_correct_prob=" << format_fixed(m.mean_correct_prob, 4)
     << "\n";
}

inline std::string single_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  Context ctx;
  ctx.out = &out;
  for (int i = 0; i < argc; ++i) ctx.command_line += (i ? " " : "") + std::string(argv[i]);
  ctx.started_at = utc_timestamp();

  CLI::App app{"Train, dissect and ablate attention-only transformers on the symbolic IOI task.", "ioi-lab"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string out_dir;
  app.add_option("--out-dir", out_dir, std::string("run directory (default $") + kOutDirEnv + " or " + kDefaultOutDir + ")");
  app.set_config("--config", "", "TOML file mirroring the command-line flags, one [section] per subcommand; flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "write the 60-prompt corpus");
  std::string corpus_out;
  gen->add_option("--output", corpus_out, "corpus path (default <out-dir>/corpus.csv)");

  // train
  auto* tr = app.add_subcommand("train", "train a model and write checkpoint + log");
  ModelFlags train_model;
  TrainConfig train_cfg;
  add_model_flags(tr, train_model);
  add_train_flags(tr, train_cfg);

  // eval
  auto* ev = app.add_subcommand("eval", "accuracy and per-prompt predictions of a checkpoint");
  std::string ev_ckpt;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint (default <out-dir>/checkpoint.json)");

  // analyze
  auto* an = app.add_subcommand("analyze", "read-only analyses of a checkpoint");
  an->require_subcommand(1);
  std::string an_ckpt;
  an->add_option("--checkpoint", an_ckpt, "checkpoint (default <out-dir>/checkpoint.json)");
  auto* an_att = an->add_subcommand("attention", "mean attention patterns, all prompts and per template");
  auto* an_circ = an->add_subcommand("circuits", "QK and OV circuit matrices");
  std::string basis = "token";
  an_circ->add_option("--basis", basis, "token or token_plus_pos")
      ->check(CLI::IsMember({"token", "token_plus_pos"}))
      ->capture_default_str();
  auto* an_spec = an->add_subcommand("spectral", "eigenvalues and positive fraction of every circuit");
  auto* an_dec = an->add_subcommand("decompose", "residual decomposition at MID");
  std::string directions = "unembed";
  an_dec->add_option("--directions", directions, "unembed or embed")
      ->check(CLI::IsMember({"unembed", "embed"}))
      ->capture_default_str();

  // intervene
  auto* iv = app.add_subcommand("intervene", "causal interventions");
  iv->require_subcommand(1);
  std::string iv_ckpt;
  iv->add_option("--checkpoint", iv_ckpt, "checkpoint (default <out-dir>/checkpoint.json)");
  auto* iv_mean = iv->add_subcommand("mean-embed", "replace every name embedding by the mean name embedding");
  auto* iv_nopos = iv->add_subcommand("no-pos", "retrain without positional embeddings over several seeds");
  ModelFlags nopos_model;
  TrainConfig nopos_train;
  std::vector<std::uint64_t> nopos_seeds{1, 2, 3};
  add_model_flags(iv_nopos, nopos_model, false);
  add_train_flags(iv_nopos, nopos_train);
  iv_nopos->add_option("--seeds", nopos_seeds, "seeds to train (at least 3)")->delimiter(',')->capture_default_str();
  auto* iv_comp = iv->add_subcommand("composition", "remove layer-0 output from one layer-1 input path");
  std::string path;
  iv_comp->add_option("--path", path, "Q, K or V")->required()->check(CLI::IsMember({"Q", "K", "V"}));

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  ModelFlags gc_model;
  std::size_t gc_coords = 20;
  std::string gc_ckpt;
  add_model_flags(gc, gc_model);
  gc->add_option("--coords", gc_coords, "coordinates per tensor")->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--checkpoint", gc_ckpt, "check at trained parameters instead of a fresh init");

  // reproduce-paper
  auto* rp = app.add_subcommand("reproduce-paper", "train every model, run every analysis, score the results");
  ReproduceOptions rp_opt;
  rp->add_option("--seed", rp_opt.seed, "seed for the 1L1H, 1L2H and 2L1H models")->capture_default_str();
  rp->add_option("--no-pos-seeds", rp_opt.no_pos_seeds, "seeds for the no-pos retraining")
      ->delimiter(',')
      ->capture_default_str();
  rp->add_option("--steps", rp_opt.train.total_steps, "optimizer steps per model")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ConfigError& e) {
    err << "ioi-lab: error: malformed_config: " << single_line(e.what()) << "\n";
    return static_cast<int>(ErrorCategory::data);
  } catch (const CLI::FileError& e) {
    err << "ioi-lab: error: missing_file: " << single_line(e.what()) << "\n";
    return static_cast<int>(ErrorCategory::data);
  } catch (const CLI::ExtrasError& e) {
    err << "ioi-lab: error: unknown_argument: " << single_line(e.what()) << "\n";
    return static_cast<int>(ErrorCategory::usage);
  } catch (const CLI::ParseError& e) {
    err << "ioi-lab: error: usage: " << single_line(e.what()) << "\n";
    return static_cast<int>(ErrorCategory::usage);
  }

  if (!out_dir.empty()) ctx.out_dir = out_dir;
  if (auto* opt = app.get_config_ptr(); opt && opt->count() > 0) ctx.config_file = fs::path(opt->as<std::string>());

  try {
    if (*gen) {
      const fs::path target = corpus_out.empty() ? ctx.out_dir / "corpus.csv" : fs::path(corpus_out);
      const auto data = enumerate_dataset();
      write_text_file(target, corpus_text(data));
      out << "wrote " << data.size() << " prompts to " << target.generic_string() << "\n";
      if (corpus_out.empty()) finish(ctx, json::object(), {}, {});
      return 0;
    }

    if (*tr) {
      const ModelConfig cfg = train_model.config();
      train_cfg.validate();
      const auto r = train_to_dir(cfg, train_cfg, ctx.out_dir);
      out << "trained " << cfg.n_layers << "L" << cfg.n_heads << "H seed=" << cfg.seed << " steps=" << train_cfg.total_steps
          << " final_loss=" << format_fixed(r.log.final_loss, 6) << " accuracy=" << format_fixed(r.log.final_accuracy, 4)
          << "\n";
      finish(ctx, {{"model", config_to_json(cfg)}, {"train", train_config_to_json(train_cfg)}}, {cfg.seed}, {});
      return 0;
    }

    if (*ev) {
      const fs::path ck = checkpoint_path(ctx, ev_ckpt);
      const Model m = load_checkpoint(ck);
      const auto data = enumerate_dataset();
      const RunMetrics metrics = evaluate(m.config, m.params, data);
      std::string csv = "template,prompt,target,predicted,p_target\n";
      for (const auto& ex : data) {
        const auto p = predict_distribution(m.config, m.params, ex.prompt);
        std::string text;
        for (TokenId t : ex.prompt) text += (text.empty() ? "" : " ") + Vocab::token_string(t);
        csv += to_string(ex.tmpl) + "," + text + "," + Vocab::token_string(ex.target) + "," +
               Vocab::token_string(argmax_token(p)) + "," + format_g17(p[static_cast<std::size_t>(ex.target)]) + "\n";
      }
      json rep{{"checkpoint", ck.generic_string()}, {"model", config_to_json(m.config)}, {"metrics", metrics_json(metrics)}};
      if (m.config.n_layers == 1 && m.config.n_heads == 1)
        rep["single_head"] = intervention_json(single_head_diagnosis(m.config, m.params, data))["stats"];
      write_text_file(ctx.out_dir / "eval.json", rep.dump(2) + "\n");
      write_text_file(ctx.out_dir / "predictions.csv", csv);
      print_metrics(out, metrics);
      finish(ctx, {{"model", config_to_json(m.config)}}, {m.config.seed}, {ck});
      return 0;
    }

    if (*an) {
      const fs::path ck = checkpoint_path(ctx, an_ckpt);
      const Model m = load_checkpoint(ck);
      const auto data = enumerate_dataset();
      const fs::path dir = ctx.out_dir / "analysis";
      if (*an_att) {
        std::size_t n = 0;
        for (AttentionScope s : {AttentionScope::all, AttentionScope::BAAB, AttentionScope::BABA})
          n += write_attention_artifacts(dir, average_attention(m.config, m.params, data, s)).size();
        out << "wrote " << n << " attention heatmaps to " << dir.generic_string() << "\n";
      } else if (*an_circ) {
        const auto b = basis == "token" ? CircuitBasis::token : CircuitBasis::token_plus_pos;
        const auto n = write_circuit_artifacts(dir, m.params, b).size();
        out << "wrote " << n << " circuit heatmaps to " << dir.generic_string() << "\n";
      } else if (*an_spec) {
        const json rep = spectral_report(m.params);
        write_text_file(dir / "spectral.json", rep.dump(2) + "\n");
        for (const auto& s : rep)
          out << to_string(s["circuit"].get<std::string>() == "QK" ? CircuitKind::QK : CircuitKind::OV) << " L"
              << s["layer"].get<int>() << "H" << s["head"].get<int>()
              << " positive_fraction=" << format_fixed(s["positive_fraction"].get<double>(), 4)
              << " negative_real_pair=" << (s["has_negative_real_pair"].get<bool>() ? "yes" : "no") << "\n";
      } else if (*an_dec) {
        const auto src = directions == "unembed" ? DirectionSource::unembed : DirectionSource::embed;
        const auto t = decompose_residual(m.config, m.params, data, src);
        write_decomposition_artifacts(dir, t);
        for (const auto& c : t.components) out << c << " dominant=" << t.dominant_direction(c) << "\n";
      }
      finish(ctx, {{"model", config_to_json(m.config)}}, {m.config.seed}, {ck});
      return 0;
    }

    if (*iv) {
      const auto data = enumerate_dataset();
      const fs::path dir = ctx.out_dir / "interventions";
      if (*iv_nopos) {
        ModelConfig cfg = nopos_model.config();
        cfg.use_pos_embed = false;
        nopos_train.validate();
        if (nopos_seeds.size() < 3) throw UsageError("bad_argument", "no-pos retraining needs at least three seeds");
        const auto rep = run_no_pos_retrain(cfg, nopos_train, nopos_seeds, data);
        write_text_file(dir / "no_pos.json", intervention_json(rep).dump(2) + "\n");
        for (std::size_t i = 0; i < rep.attention.size(); ++i)
          write_attention_artifacts(dir / ("no_pos_seed_" + std::to_string(nopos_seeds[i])), rep.attention[i]);
        out << "no-pos ";
        print_metrics(out, rep.aggregate);
        out << "with-pos ";
        print_metrics(out, rep.baseline_aggregate);
        finish(ctx, {{"model", config_to_json(cfg)}, {"train", train_config_to_json(nopos_train)}}, nopos_seeds, {});
        return 0;
      }
      const fs::path ck = checkpoint_path(ctx, iv_ckpt);
      const Model m = load_checkpoint(ck);
      if (*iv_mean) {
        const auto rep = run_mean_name_embed(m.config, m.params, data);
        write_text_file(dir / "mean_embed.json", intervention_json(rep).dump(2) + "\n");
        for (const auto& a : rep.attention) write_attention_artifacts(dir / "mean_embed", a, "mean name embedding");
        out << "patched ";
        print_metrics(out, rep.aggregate);
        out << "baseline ";
        print_metrics(out, rep.baseline_aggregate);
      } else if (*iv_comp) {
        const CompositionPath p = path == "Q" ? CompositionPath::Q : path == "K" ? CompositionPath::K : CompositionPath::V;
        const auto rep = composition_ablate(m.config, m.params, p, data);
        write_text_file(dir / ("composition_" + path + ".json"), intervention_json(rep).dump(2) + "\n");
        out << "path=" << path << " accuracy_drop=" << format_fixed(rep.accuracy_drop(), 4) << " ";
        print_metrics(out, rep.aggregate);
      }
      finish(ctx, {{"model", config_to_json(m.config)}}, {m.config.seed}, {ck});
      return 0;
    }

    if (*gc) {
      ModelConfig cfg;
      ModelParams params;
      std::vector<fs::path> inputs;
      if (!gc_ckpt.empty()) {
        const Model m = load_checkpoint(gc_ckpt);
        cfg = m.config;
        params = m.params;
        inputs.push_back(gc_ckpt);
      } else {
        cfg = gc_model.config();
        params = init_params(cfg, cfg.seed);
      }
      const auto rep = gradcheck(cfg, params, gc_coords, cfg.seed);
      write_text_file(ctx.out_dir / "gradcheck.json", gradcheck_json(rep).dump(2) + "\n");
      for (const auto& e : rep.tensors)
        out << e.tensor << " coords=" << e.coords_checked << " max_rel=" << format_g17(e.max_rel_error) << "\n";
      finish(ctx, {{"model", config_to_json(cfg)}}, {cfg.seed}, inputs);
      if (rep.max_rel_error >= 1e-4)
        throw NumericalError("gradcheck_failed", "max relative error " + format_g17(rep.max_rel_error) + " >= 1e-4");
      out << "max_rel_error=" << format_g17(rep.max_rel_error) << " ok\n";
      return 0;
    }

    if (*rp) {
      rp_opt.train.validate();
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = reproduce_paper(ctx.out_dir, rp_opt);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << summary_markdown(res.criteria);
      out << res.svgs.size() << " heatmaps, " << format_fixed(secs, 1) << " s\n";
      ManifestInput in;
      in.command_line = ctx.command_line;
      in.configs = {{"train", train_config_to_json(rp_opt.train)}};
      in.seeds = rp_opt.no_pos_seeds;
      in.seeds.insert(in.seeds.begin(), rp_opt.seed);
      in.started_at = ctx.started_at;
      in.timings = res.timings;
      in.timings["total"] = secs;
      write_manifest(ctx.out_dir, in);
      return 0;
    }
  } catch (const Error& e) {
    err << "ioi-lab: error: " << e.kind() << ": " << single_line(e.what()) << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "ioi-lab: error: io_error: " << single_line(e.what()) << "\n";
    return static_cast<int>(ErrorCategory::data);
  }
  return 0;
}

}  // namespace ioi
