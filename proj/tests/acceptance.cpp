// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ioi/pipeline.hpp"

using namespace ioi;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string checkpoint_dir(const fs::path& root, const std::string& arch) { return (root / arch / "checkpoint.json").string(); }

bool gradcheck_ok(int layers, int heads, std::string& detail) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  const auto rep = gradcheck(cfg, cfg.seed, 20);
  std::size_t min_coords = SIZE_MAX;
  for (const auto& e : rep.tensors) min_coords = std::min(min_coords, e.coords_checked);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%dL%dH max_rel=%.2e min_coords=%zu", layers, heads, rep.max_rel_error, min_coords);
  detail += (detail.empty() ? "" : "; ") + std::string(buf);
  return rep.max_rel_error < 1e-4 && min_coords >= 20;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "ioi_acceptance";
  fs::remove_all(root);
  const fs::path run_a = root / "run_a", run_b = root / "run_b";

  const auto t0 = std::chrono::steady_clock::now();
  ReproduceResult res;
  try {
    res = reproduce_paper(run_a);
  } catch (const Error& e) {
    std::printf("reproduction aborted: %s: %s\n", e.kind().c_str(), e.what());
    return 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const auto& c : res.criteria) {
    std::string detail = c.title + ": " + c.measured + " | reference " + c.reference + " | band " + c.band;
    if (c.id == 1) detail += " | train " + format_fixed(res.timings.value("train_1L2H", 0.0), 2) + " s";
    report(c.id, c.pass, detail);
  }

  {
    std::string detail;
    const bool a = gradcheck_ok(1, 2, detail);
    const bool b = gradcheck_ok(2, 1, detail);
    report(7, a && b, "finite differences, eps 1e-5: " + detail);
  }

  {
    std::vector<std::string> bad;
    const auto data = enumerate_dataset();
    double worst_row = 0.0, worst_trace = 0.0;
    bool mask_ok = true, rank_ok = true;
    for (const char* arch : {"1L1H", "1L2H", "2L1H"}) {
      const Model m = load_checkpoint(checkpoint_dir(run_a, arch));
      for (const auto& ex : data) {
        const auto tr = forward(m.config, m.params, ex.prompt);
        for (const auto& layer : tr.heads)
          for (const auto& h : layer)
            for (std::size_t i = 0; i < h.pattern.rows(); ++i) {
              double s = 0.0;
              for (std::size_t j = 0; j < h.pattern.cols(); ++j) {
                s += h.pattern(i, j);
                if (j > i && h.pattern(i, j) != 0.0) mask_ok = false;
              }
              worst_row = std::max(worst_row, std::abs(s - 1.0));
            }
      }
      for (std::size_t l = 0; l < m.params.blocks.size(); ++l)
        for (std::size_t h = 0; h < m.params.blocks[l].size(); ++h)
          for (const auto& c : {qk_circuit(m.params, l, h), ov_circuit(m.params, l, h),
                                qk_circuit(m.params, l, h, CircuitBasis::token_plus_pos)}) {
            double re = 0.0;
            for (auto ev : eigenvalues(c.matrix)) re += ev.real();
            const double tr = trace(c.matrix);
            worst_trace = std::max(worst_trace, std::abs(re - tr) / std::max(1.0, std::abs(tr)));
            if (numerical_rank(c.matrix) > static_cast<std::size_t>(m.config.d_head())) rank_ok = false;
          }
    }
    if (worst_row > 1e-12) bad.push_back("softmax rows");
    if (!mask_ok) bad.push_back("causal mask");
    if (worst_trace > 1e-8) bad.push_back("trace reconstruction");
    if (!rank_ok) bad.push_back("circuit rank");

    const Model m = load_checkpoint(checkpoint_dir(run_a, "1L2H"));
    save_checkpoint(m.params, m.config, root / "roundtrip.json");
    const Model back = load_checkpoint(root / "roundtrip.json");
    bool bits = read_text_file(root / "roundtrip.json") == read_text_file(checkpoint_dir(run_a, "1L2H"));
    zip_tensors(m.params, back.params, [&](const std::string&, const Matrix& x, const Matrix& y) {
      bits = bits && std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)) == 0;
    });
    if (!bits) bad.push_back("checkpoint round trip");

    reproduce_paper(run_b);
    const auto files_a = list_artifacts(run_a), files_b = list_artifacts(run_b);
    std::size_t differing = files_a == files_b ? 0 : 1;
    if (files_a == files_b)
      for (const auto& rel : files_a)
        if (file_digest(run_a / rel) != file_digest(run_b / rel)) ++differing;
    if (differing) bad.push_back("reproduction digests");

    char buf[200];
    std::snprintf(buf, sizeof buf, "row sum err %.1e, trace err %.1e, %zu artifacts identical across two runs",
                  worst_row, worst_trace, files_a.size() - std::min(differing, files_a.size()));
    std::string detail = buf;
    for (const auto& b : bad) detail += "; failed: " + b;
    report(8, bad.empty(), detail);
  }

  {
    const auto md = read_text_file(run_a / "summary.md");
    bool table = res.criteria.size() == 6;
    for (int id = 1; id <= 6; ++id) table = table && md.find("\n| " + std::to_string(id) + " |") != std::string::npos;
    report(9, secs < 600.0 && table && res.svgs.size() >= 8,
           "reproduce-paper " + format_fixed(secs, 1) + " s, " + std::to_string(res.svgs.size()) +
               " heatmaps, pass/fail table for criteria 1-6 " + (table ? "present" : "missing"));
  }

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
