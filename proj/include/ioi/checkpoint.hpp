#pragma once

// Versioned JSON checkpoints. Doubles are written with max_digits10 digits by
// nlohmann::json, so save/load round-trips bit for bit.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ioi/error.hpp"
#include "ioi/model.hpp"
#include "ioi/training.hpp"

namespace ioi {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "ioi-lab-checkpoint";

class CheckpointError : public Error {
 public:
  CheckpointError(std::string kind, const std::string& message)
      : Error(ErrorCategory::data, std::move(kind), message) {}
};

inline json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},         {"n_heads", c.n_heads},
              {"d_model", c.d_model},           {"d_head", c.d_head()},
              {"vocab_size", c.vocab_size},     {"seq_len", c.seq_len},
              {"use_pos_embed", c.use_pos_embed}, {"causal_mask", c.causal_mask},
              {"seed", c.seed}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.use_pos_embed = j.at("use_pos_embed").get<bool>();
  c.causal_mask = j.at("causal_mask").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("d_head") && j.at("d_head").get<int>() != c.d_head())
    throw CheckpointError("malformed", "d_head does not equal d_model / n_heads");
  return c;
}

inline json train_config_to_json(const TrainConfig& t) {
  return json{{"total_steps", t.total_steps},
              {"max_lr", t.max_lr},
              {"weight_decay", t.weight_decay},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"onecycle_pct_start", t.onecycle_pct_start},
              {"onecycle_div_factor", t.onecycle_div_factor},
              {"onecycle_final_div_factor", t.onecycle_final_div_factor},
              {"seed", t.seed}};
}

// Missing keys keep their defaults, so partial config files are accepted.
inline TrainConfig train_config_from_json(const json& j, TrainConfig t = {}) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  take("total_steps", t.total_steps);
  take("max_lr", t.max_lr);
  take("weight_decay", t.weight_decay);
  take("adam_beta1", t.adam_beta1);
  take("adam_beta2", t.adam_beta2);
  take("adam_eps", t.adam_eps);
  take("onecycle_pct_start", t.onecycle_pct_start);
  take("onecycle_div_factor", t.onecycle_div_factor);
  take("onecycle_final_div_factor", t.onecycle_final_div_factor);
  take("seed", t.seed);
  return t;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(json(std::vector<double>(m.row(i).begin(), m.row(i).end())));
  return json{{"shape", {m.rows(), m.cols()}}, {"data", std::move(rows)}};
}

inline Matrix matrix_from_json(const std::string& name, const json& j) {
  const auto& shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 2)
    throw CheckpointError("malformed", "tensor " + name + " has no two-element shape");
  const auto rows = shape[0].get<std::size_t>();
  const auto cols = shape[1].get<std::size_t>();
  const auto& data = j.at("data");
  if (!data.is_array() || data.size() != rows)
    throw CheckpointError("shape_mismatch", "tensor " + name + ": declared " + std::to_string(rows) +
                                                " rows, found " + std::to_string(data.size()));
  std::vector<double> flat;
  flat.reserve(rows * cols);
  for (const auto& r : data) {
    if (!r.is_array() || r.size() != cols)
      throw CheckpointError("shape_mismatch", "tensor " + name + ": row length differs from declared " +
                                                  std::to_string(cols) + " columns");
    for (const auto& v : r) {
      if (!v.is_number()) throw CheckpointError("malformed", "tensor " + name + " has a non-numeric entry");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw CheckpointError("malformed", "tensor " + name + " has a non-finite entry");
      flat.push_back(x);
    }
  }
  return Matrix(rows, cols, std::move(flat));
}

inline json checkpoint_to_json(const ModelConfig& cfg, const ModelParams& params) {
  check_params(cfg, params);
  json tensors = json::object();
  for_each_tensor(params, [&](const std::string& name, const Matrix& m) { tensors[name] = matrix_to_json(m); });
  return json{{"format", kCheckpointFormat},
              {"format_version", kCheckpointVersion},
              {"config", config_to_json(cfg)},
              {"tensors", std::move(tensors)}};
}

inline Model checkpoint_from_json(const json& j) {
  try {
    if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat)
      throw CheckpointError("malformed", "not an ioi-lab checkpoint");
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("version_mismatch", "checkpoint format version " + std::to_string(version) +
                                                    ", this build reads version " +
                                                    std::to_string(kCheckpointVersion));
    Model m;
    m.config = config_from_json(j.at("config"));
    m.config.validate();
    m.params = zero_params(m.config);
    const auto& tensors = j.at("tensors");
    for (auto& [name, slot] : named_tensors(m.params)) {
      if (!tensors.contains(name)) throw CheckpointError("malformed", "missing tensor " + name);
      Matrix loaded = matrix_from_json(name, tensors.at(name));
      if (loaded.rows() != slot->rows() || loaded.cols() != slot->cols())
        throw CheckpointError("shape_mismatch", "tensor " + name + " has shape " + loaded.shape_string() +
                                                    ", config requires " + slot->shape_string());
      *slot = std::move(loaded);
    }
    if (tensors.size() != named_tensors(m.params).size())
      throw CheckpointError("malformed", "checkpoint has tensors the config does not declare");
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed", std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string checkpoint_text(const ModelConfig& cfg, const ModelParams& params) {
  return checkpoint_to_json(cfg, params).dump(1) + "\n";
}

inline void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("io_error", "cannot write checkpoint " + path.string());
  out << checkpoint_text(cfg, params);
  if (!out) throw CheckpointError("io_error", "failed writing checkpoint " + path.string());
}

// When `expected` is given, the stored architecture must match it.
inline Model load_checkpoint(const std::filesystem::path& path,
                             const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing_checkpoint", "checkpoint not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed", "checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  Model m = checkpoint_from_json(j);
  if (expected && !expected->same_architecture(m.config)) {
    std::ostringstream os;
    os << "checkpoint has " << m.config.n_layers << " layer(s) x " << m.config.n_heads
       << " head(s), pos_embed=" << m.config.use_pos_embed << "; request needs " << expected->n_layers
       << " x " << expected->n_heads << ", pos_embed=" << expected->use_pos_embed;
    throw CheckpointError("config_mismatch", os.str());
  }
  return m;
}

}  // namespace ioi
