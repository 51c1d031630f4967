#pragma once

#include "bbdrec/bridge_diffusion.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/seq_encoder.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

// Every hyper-parameter of a run. Config files are flat JSON objects whose
// keys are exactly these field names.
struct TrainConfig {
  int T = 20;
  double m = 1e-2;
  int d = 64;
  int L = 10;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 1024;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 0;
  std::string encoder_mode = "transformer";
  bool conditional = false;
  bool stop_grad_target = false;
  std::string selection_metric = "NDCG@20";

  double dropout = 0.1;
  int hidden_dim = 0;  // 0 -> 2d
  int ffn_dim = 0;     // 0 -> d
  int time_dim = 0;    // 0 -> d
  bool tie_embeddings = true;
  bool direct_retrieval = false;
  std::string inference_mode = "stochastic";
  int eval_batch_size = 1024;
  // Ablation preset: full | w_con | wo_bb | wo_enc | wo_ldiff | wo_lrec
  std::string variant = "full";
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string out = "invalid config:";
    for (const auto& s : p) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> problems_;
};

struct SelectionMetric {
  std::string name;  // HR | NDCG
  int k = 20;
};

inline SelectionMetric parse_selection_metric(const std::string& s) {
  const auto at = s.find('@');
  if (at == std::string::npos) throw std::invalid_argument("selection metric must look like NDCG@20");
  SelectionMetric out;
  out.name = s.substr(0, at);
  if (out.name != "HR" && out.name != "NDCG") throw std::invalid_argument("selection metric must be HR@K or NDCG@K");
  try {
    std::size_t used = 0;
    out.k = std::stoi(s.substr(at + 1), &used);
    if (used != s.size() - at - 1 || out.k < 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("selection metric cutoff must be a positive integer");
  }
  return out;
}

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "stochastic") return NoiseMode::stochastic;
  if (s == "deterministic") return NoiseMode::deterministic;
  throw std::invalid_argument("inference_mode must be stochastic|deterministic");
}

/// Applies an ablation preset on top of the explicit settings.
inline void apply_variant(TrainConfig& c) {
  if (c.variant == "full") return;
  if (c.variant == "w_con") {
    c.conditional = true;
  } else if (c.variant == "wo_bb") {
    c.lambda1 = 0.0;
    c.direct_retrieval = true;
  } else if (c.variant == "wo_enc") {
    c.encoder_mode = "mean_pool";
  } else if (c.variant == "wo_ldiff") {
    c.lambda1 = 0.0;
  } else if (c.variant == "wo_lrec") {
    c.lambda2 = 0.0;
  } else {
    throw std::invalid_argument("unknown variant '" + c.variant + "'");
  }
}

/// Lists every problem with a config instead of stopping at the first one.
inline std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> p;
  if (c.T < 2) p.push_back("T must be >= 2");
  if (!(std::isfinite(c.m) && c.m > 0)) p.push_back("m must be a finite value > 0");
  if (c.d < 1) p.push_back("d must be >= 1");
  if (c.L < 1) p.push_back("L must be >= 1");
  if (!(c.lambda1 >= 0)) p.push_back("lambda1 must be >= 0");
  if (!(c.lambda2 >= 0)) p.push_back("lambda2 must be >= 0");
  if (!(c.lr > 0)) p.push_back("lr must be > 0");
  if (!(c.weight_decay >= 0)) p.push_back("weight_decay must be >= 0");
  if (c.batch_size < 1) p.push_back("batch_size must be >= 1");
  if (c.max_epochs < 1) p.push_back("max_epochs must be >= 1");
  if (c.patience < 1) p.push_back("patience must be >= 1");
  if (!(c.dropout >= 0 && c.dropout < 1)) p.push_back("dropout must be in [0, 1)");
  if (c.hidden_dim < 0 || c.ffn_dim < 0 || c.time_dim < 0) p.push_back("hidden_dim/ffn_dim/time_dim must be >= 0");
  if (c.eval_batch_size < 1) p.push_back("eval_batch_size must be >= 1");
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      p.emplace_back(e.what());
    }
  };
  check([&] { parse_encoder_mode(c.encoder_mode); });
  check([&] { parse_selection_metric(c.selection_metric); });
  check([&] { parse_noise_mode(c.inference_mode); });
  check([&] {
    TrainConfig copy = c;
    apply_variant(copy);
  });
  return p;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"T", c.T},
                        {"m", c.m},
                        {"d", c.d},
                        {"L", c.L},
                        {"lambda1", c.lambda1},
                        {"lambda2", c.lambda2},
                        {"lr", c.lr},
                        {"weight_decay", c.weight_decay},
                        {"batch_size", c.batch_size},
                        {"max_epochs", c.max_epochs},
                        {"patience", c.patience},
                        {"seed", c.seed},
                        {"encoder_mode", c.encoder_mode},
                        {"conditional", c.conditional},
                        {"stop_grad_target", c.stop_grad_target},
                        {"selection_metric", c.selection_metric},
                        {"dropout", c.dropout},
                        {"hidden_dim", c.hidden_dim},
                        {"ffn_dim", c.ffn_dim},
                        {"time_dim", c.time_dim},
                        {"tie_embeddings", c.tie_embeddings},
                        {"direct_retrieval", c.direct_retrieval},
                        {"inference_mode", c.inference_mode},
                        {"eval_batch_size", c.eval_batch_size},
                        {"variant", c.variant}};
}

/// Parses a flat JSON config. `T` and `m` are required; unknown keys, type
/// errors and invalid values are all collected into one ConfigError. The
/// variant preset is applied after parsing.
inline TrainConfig parse_config(const nlohmann::json& j, bool apply_preset = true) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"config must be a flat JSON object"});
  TrainConfig c;
  const nlohmann::json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) problems.push_back("unknown key '" + key + "'");
  }
  for (const char* req : {"T", "m"}) {
    if (!j.contains(req)) problems.push_back(std::string("missing required key '") + req + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      using Field = std::decay_t<decltype(field)>;
      const auto& v = j.at(key);
      if constexpr (std::is_same_v<Field, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_same_v<Field, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      } else if constexpr (std::is_integral_v<Field>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<Field>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.template get<long long>() < 0) {
            throw std::invalid_argument("expected a non-negative integer");
          }
        }
      } else {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      }
      field = v.template get<Field>();
    } catch (const std::exception& e) {
      problems.push_back(std::string("key '") + key + "': " + e.what());
    }
  };
  read("T", c.T);
  read("m", c.m);
  read("d", c.d);
  read("L", c.L);
  read("lambda1", c.lambda1);
  read("lambda2", c.lambda2);
  read("lr", c.lr);
  read("weight_decay", c.weight_decay);
  read("batch_size", c.batch_size);
  read("max_epochs", c.max_epochs);
  read("patience", c.patience);
  read("seed", c.seed);
  read("encoder_mode", c.encoder_mode);
  read("conditional", c.conditional);
  read("stop_grad_target", c.stop_grad_target);
  read("selection_metric", c.selection_metric);
  read("dropout", c.dropout);
  read("hidden_dim", c.hidden_dim);
  read("ffn_dim", c.ffn_dim);
  read("time_dim", c.time_dim);
  read("tie_embeddings", c.tie_embeddings);
  read("direct_retrieval", c.direct_retrieval);
  read("inference_mode", c.inference_mode);
  read("eval_batch_size", c.eval_batch_size);
  read("variant", c.variant);
  for (auto& v : validate(c)) problems.push_back(std::move(v));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  if (apply_preset) apply_variant(c);
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({"config " + path + " is not valid JSON: " + e.what()});
  }
  return parse_config(j);
}

inline ModelShape model_shape(const TrainConfig& c, Index n_items) {
  ModelShape s;
  s.n_items = n_items;
  s.dim = c.d;
  s.max_len = c.L;
  s.ffn_dim = c.ffn_dim > 0 ? c.ffn_dim : c.d;
  s.time_dim = c.time_dim > 0 ? c.time_dim : c.d;
  s.hidden = c.hidden_dim > 0 ? c.hidden_dim : 2 * c.d;
  s.steps = c.T;
  s.dropout = c.dropout;
  s.encoder = parse_encoder_mode(c.encoder_mode);
  s.conditional = c.conditional;
  s.tie_embeddings = c.tie_embeddings;
  return s;
}

}  // namespace bbdrec
