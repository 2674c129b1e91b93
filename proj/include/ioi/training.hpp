#pragma once

// Full-batch training of the attention-only model: hand-written reverse-mode
// gradients of the mean cross-entropy at the MID position, AdamW with
// decoupled weight decay, and a one-cycle learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "ioi/dataset.hpp"
#include "ioi/error.hpp"
#include "ioi/linalg.hpp"
#include "ioi/model.hpp"
#include "ioi/rng.hpp"

namespace ioi {

struct TrainConfig {
  int total_steps = 2000;
  double max_lr = 0.1;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double onecycle_pct_start = 0.3;
  double onecycle_div_factor = 25.0;
  double onecycle_final_div_factor = 1e4;
  // Full-batch descent is deterministic; this seed drives gradcheck sampling.
  std::uint64_t seed = 0;

  void validate() const {
    if (total_steps < 1) throw DomainError("bad_config", "total_steps must be >= 1");
    if (!(max_lr > 0.0)) throw DomainError("bad_config", "max_lr must be > 0");
    if (!(onecycle_pct_start > 0.0 && onecycle_pct_start < 1.0))
      throw DomainError("bad_config", "onecycle_pct_start must be in (0, 1)");
    if (!(onecycle_div_factor > 0.0) || !(onecycle_final_div_factor > 0.0))
      throw DomainError("bad_config", "one-cycle divisors must be > 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Warmup runs linearly from max_lr / div_factor at step 0 to max_lr at step
// W = round(pct_start * total_steps); then a cosine anneal reaches
// max_lr / final_div_factor at step total_steps - 1:
//   lr(s) = lo + (max - lo) * s / W                       for s <= W
//   lr(s) = end + (max - end) * (1 + cos(pi * (s - W) / (T - 1 - W))) / 2
inline double onecycle_lr(int step, const TrainConfig& cfg) {
  if (step < 0 || step >= cfg.total_steps)
    throw DomainError("step_out_of_range", "step " + std::to_string(step) + " outside [0, " +
                                               std::to_string(cfg.total_steps) + ")");
  const double peak = cfg.max_lr;
  const double start = peak / cfg.onecycle_div_factor;
  const double end = peak / cfg.onecycle_final_div_factor;
  const int last = cfg.total_steps - 1;
  const int warm = std::min(static_cast<int>(std::lround(cfg.onecycle_pct_start * cfg.total_steps)), last);
  if (step <= warm) {
    if (warm == 0) return peak;
    return start + (peak - start) * static_cast<double>(step) / warm;
  }
  const double frac = static_cast<double>(step - warm) / static_cast<double>(last - warm);
  return end + (peak - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
  double accuracy = 0.0;  // at the same parameters, argmax with lowest-id tie-break
};

namespace detail {

// dS = A .* (dA - rowsum(dA .* A)); masked entries have A = 0 and get no gradient.
inline Matrix softmax_backward(const Matrix& pattern, const Matrix& d_pattern) {
  Matrix ds(pattern.rows(), pattern.cols());
  for (std::size_t i = 0; i < pattern.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < pattern.cols(); ++j) s += d_pattern(i, j) * pattern(i, j);
    for (std::size_t j = 0; j < pattern.cols(); ++j) ds(i, j) = pattern(i, j) * (d_pattern(i, j) - s);
  }
  return ds;
}

// Accumulates d(loss)/d(params) for one example, given d(loss)/d(MID logits).
inline void backward_example(const ModelConfig& cfg, const ModelParams& params,
                             const ForwardTrace& tr, std::span<const TokenId> prompt,
                             std::span<const double> d_logits, Gradients& g) {
  const std::size_t seq = prompt.size();
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));

  // Unembedding, read out at MID only.
  Matrix d_resid(seq, dm);
  auto x_mid = tr.resid_final.row(kMidPosition);
  for (std::size_t i = 0; i < dm; ++i)
    for (std::size_t j = 0; j < d_logits.size(); ++j) g.W_U(i, j) += x_mid[i] * d_logits[j];
  for (std::size_t i = 0; i < dm; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d_logits.size(); ++j) s += params.W_U(i, j) * d_logits[j];
    d_resid(kMidPosition, i) = s;
  }

  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    const Matrix& x = tr.resid_pre[l];
    Matrix d_x = d_resid;  // skip connection
    for (std::size_t h = 0; h < params.blocks[l].size(); ++h) {
      const auto& hp = params.blocks[l][h];
      const auto& ht = tr.heads[l][h];
      auto& gh = g.blocks[l][h];
      gh.W_O += matmul_tn(ht.z, d_resid);
      const Matrix d_z = matmul_nt(d_resid, hp.W_O);
      const Matrix d_pattern = matmul_nt(d_z, ht.v);
      const Matrix d_v = matmul_tn(ht.pattern, d_z);
      Matrix d_scores = softmax_backward(ht.pattern, d_pattern);
      d_scores *= scale;
      const Matrix d_q = matmul(d_scores, ht.k);
      const Matrix d_k = matmul_tn(d_scores, ht.q);
      gh.W_Q += matmul_tn(x, d_q);
      gh.W_K += matmul_tn(x, d_k);
      gh.W_V += matmul_tn(x, d_v);
      d_x += matmul_nt(d_q, hp.W_Q);
      d_x += matmul_nt(d_k, hp.W_K);
      d_x += matmul_nt(d_v, hp.W_V);
    }
    d_resid = std::move(d_x);
  }

  for (std::size_t i = 0; i < seq; ++i) {
    auto src = d_resid.row(i);
    auto dst = g.W_E.row(static_cast<std::size_t>(prompt[i]));
    for (std::size_t j = 0; j < dm; ++j) dst[j] += src[j];
    if (g.W_pos) {
      auto dp = g.W_pos->row(i);
      for (std::size_t j = 0; j < dm; ++j) dp[j] += src[j];
    }
  }
}

}  // namespace detail

// Mean over the batch of -log p(target | prompt) at MID, and its exact
// gradient. Examples are reduced in order, so the result is bit-reproducible.
inline LossAndGrads loss_and_grads(const ModelConfig& cfg, const ModelParams& params,
                                   const std::vector<IoiExample>& batch) {
  if (batch.empty()) throw DomainError("empty_input", "loss over an empty batch");
  LossAndGrads out;
  out.grads = zero_params(cfg);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::size_t correct = 0;
  std::vector<double> d_logits;
  for (const auto& ex : batch) {
    const auto tr = forward(cfg, params, ex.prompt);
    const auto logits = tr.mid_logits();
    d_logits = softmax(logits);
    const auto t = static_cast<std::size_t>(ex.target);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    out.loss += (mx + std::log(z) - logits[t]) * inv_n;
    if (argmax_token(logits) == ex.target) ++correct;
    d_logits[t] -= 1.0;
    for (double& d : d_logits) d *= inv_n;
    detail::backward_example(cfg, params, tr, ex.prompt, d_logits, out.grads);
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
  return out;
}

inline double loss_only(const ModelConfig& cfg, const ModelParams& params,
                        const std::vector<IoiExample>& batch) {
  if (batch.empty()) throw DomainError("empty_input", "loss over an empty batch");
  double loss = 0.0;
  for (const auto& ex : batch) {
    const auto tr = forward(cfg, params, ex.prompt);
    const auto logits = tr.mid_logits();
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    loss += mx + std::log(z) - logits[static_cast<std::size_t>(ex.target)];
  }
  return loss / static_cast<double>(batch.size());
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;
};

inline AdamState make_adam_state(const ModelConfig& cfg) {
  return AdamState{zero_params(cfg), zero_params(cfg), 0};
}

// One AdamW update: theta <- theta - lr * wd * theta, then the bias-corrected
// Adam step on the gradient alone.
inline void adamw_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr,
                       const TrainConfig& cfg) {
  auto tp = named_tensors(params);
  auto tg = named_tensors(grads);
  auto tm = named_tensors(state.m);
  auto tv = named_tensors(state.v);
  if (tp.size() != tg.size() || tp.size() != tm.size() || tp.size() != tv.size())
    throw DimensionError("adamw_step: parameter, gradient and moment layouts differ");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t t = 0; t < tp.size(); ++t) {
    auto p = tp[t].second->data();
    auto g = tg[t].second->data();
    auto m = tm[t].second->data();
    auto v = tv[t].second->data();
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
      throw DimensionError("adamw_step: shape mismatch in tensor " + tp[t].first);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

struct TrainStep {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const TrainStep&, const TrainStep&) = default;
};

struct TrainLog {
  std::vector<TrainStep> steps;  // metrics measured before each update
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  bool converged = false;  // final accuracy is 1

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

inline TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                         const std::vector<IoiExample>& data = enumerate_dataset()) {
  cfg.validate();
  tcfg.validate();
  TrainResult r;
  r.params = init_params(cfg, cfg.seed);
  AdamState state = make_adam_state(cfg);
  r.log.steps.reserve(static_cast<std::size_t>(tcfg.total_steps));
  auto checked = [&](int step) {
    auto diverged = [&](const std::string& why) {
      return NumericalError("diverged", "training diverged at step " + std::to_string(step) + " (" + why + ")");
    };
    for (const auto& [name, m] : named_tensors(r.params))
      if (!m->all_finite()) throw diverged("parameter " + name + " is not finite");
    try {
      auto lg = loss_and_grads(cfg, r.params, data);
      if (!std::isfinite(lg.loss)) throw diverged("loss is not finite");
      return lg;
    } catch (const DomainError& e) {
      if (e.kind() != "non_finite") throw;
      throw diverged("activations overflowed");
    }
  };
  for (int step = 0; step < tcfg.total_steps; ++step) {
    auto lg = checked(step);
    const double lr = onecycle_lr(step, tcfg);
    r.log.steps.push_back({step, lr, lg.loss, lg.accuracy});
    adamw_step(r.params, lg.grads, state, lr, tcfg);
  }
  const auto fin = checked(tcfg.total_steps);
  r.log.final_loss = fin.loss;
  r.log.final_accuracy = fin.accuracy;
  r.log.converged = fin.accuracy == 1.0;
  return r;
}

struct GradcheckEntry {
  std::string tensor;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> tensors;
  double max_rel_error = 0.0;
};

inline constexpr double kGradcheckEpsilon = 1e-5;
// Denominator floor for the relative error: below this magnitude the
// comparison is effectively absolute.
inline constexpr double kGradcheckFloor = 1e-6;

inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
}

// Central finite differences against loss_and_grads at n_coords sampled
// coordinates per tensor (every coordinate when a tensor is smaller).
inline GradcheckReport gradcheck(const ModelConfig& cfg, const ModelParams& params,
                                 std::size_t n_coords, std::uint64_t sample_seed,
                                 const std::vector<IoiExample>& data = enumerate_dataset()) {
  if (n_coords < 1) throw DomainError("bad_argument", "gradcheck needs n_coords >= 1");
  const auto analytic = loss_and_grads(cfg, params, data).grads;
  ModelParams probe = params;
  auto probe_tensors = named_tensors(probe);
  auto grad_tensors = named_tensors(analytic);
  GradcheckReport report;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Matrix& w = *probe_tensors[t].second;
    const Matrix& gw = *grad_tensors[t].second;
    GradcheckEntry e{probe_tensors[t].first};
    // distinct coordinates: partial Fisher-Yates
    std::vector<std::size_t> coords(w.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (w.size() > n_coords) {
      Philox4x32 rng(sample_seed, 1000 + t);
      for (std::size_t i = 0; i < n_coords; ++i) {
        const auto span = static_cast<double>(coords.size() - i);
        const std::size_t j = i + std::min(static_cast<std::size_t>(rng.uniform() * span), coords.size() - i - 1);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(n_coords);
    }
    for (std::size_t idx : coords) {
      const double orig = w.data()[idx];
      w.data()[idx] = orig + kGradcheckEpsilon;
      const double up = loss_only(cfg, probe, data);
      w.data()[idx] = orig - kGradcheckEpsilon;
      const double down = loss_only(cfg, probe, data);
      w.data()[idx] = orig;
      const double numeric = (up - down) / (2.0 * kGradcheckEpsilon);
      const double a = gw.data()[idx];
      e.max_abs_error = std::max(e.max_abs_error, std::abs(a - numeric));
      e.max_rel_error = std::max(e.max_rel_error, gradcheck_relative_error(a, numeric));
    }
    e.coords_checked = coords.size();
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.tensors.push_back(std::move(e));
  }
  return report;
}

inline GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, std::size_t n_coords) {
  return gradcheck(cfg, init_params(cfg, seed), n_coords, seed);
}

}  // namespace ioi
