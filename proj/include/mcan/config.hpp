// Run configuration: a nested JSON document validated against the default
// tree (unknown keys rejected at every level), parsed into typed configs.
// Overrides use dotted paths, e.g. model.k=16 or loss.beta=-1e-3.
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcan/adam.hpp"
#include "mcan/common.hpp"
#include "mcan/model.hpp"
#include "mcan/synth.hpp"

namespace mcan {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  std::uint64_t seed = 7;
  double clip_norm = 1.0;
  std::string run_dir = "runs/default";
};

struct DataPaths {
  std::string train_path, val_path, test_path;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::size_t> k_sweep = {2, 4, 8, 16};
  std::size_t val_samples = 300;
  std::size_t test_samples = 500;
  std::string out_dir = "runs/ablation";
};

struct RunConfig {
  ModelConfig model;
  AdamConfig optim;
  TrainConfig train;
  DataPaths data;
  SynthConfig synth;
  std::string synth_out_path = "synth.jsonl";
  AblationConfig ablation;
  nlohmann::json doc;  // merged document, written as the run snapshot
};

inline nlohmann::json default_config_json() {
  return nlohmann::json{
      {"model",
       {{"d", 32},
        {"d_t_raw", 32},
        {"d_v_raw", 16},
        {"d_a_raw", 16},
        {"text_mode", "trained"},
        {"micro_layers", 2},
        {"macro_layers", 1},
        {"heads", 4},
        {"d_k", 8},
        {"ffn_hidden", 64},
        {"k", 0},
        {"use_cmb", true}}},
      {"loss", {{"alpha", 1e-2}, {"beta", 1e-3}}},
      {"optim",
       {{"lr_text", 5e-5},
        {"lr_main", 1e-4},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"eps", 1e-8}}},
      {"train",
       {{"batch_size", 8},
        {"epochs", 5},
        {"seed", 7},
        {"clip_norm", 1.0},
        {"run_dir", "runs/default"}}},
      {"data", {{"train_path", ""}, {"val_path", ""}, {"test_path", ""}}},
      {"synth",
       {{"n_samples", 200},
        {"seed", 1},
        {"noise_sigma", 0.3},
        {"conflict_prob", 0.3},
        {"bimodal_conflict_prob", 0.2},
        {"len_t", nlohmann::json::array({4, 8})},
        {"len_v", nlohmann::json::array({4, 8})},
        {"len_a", nlohmann::json::array({4, 8})},
        {"d_t_raw", 32},
        {"d_v_raw", 16},
        {"d_a_raw", 16},
        {"out_path", "synth.jsonl"}}},
      {"ablation",
       {{"seeds", nlohmann::json::array({1, 2, 3, 4, 5})},
        {"k_sweep", nlohmann::json::array({2, 4, 8, 16})},
        {"val_samples", 300},
        {"test_samples", 500},
        {"out_dir", "runs/ablation"}}}};
}

namespace detail {

inline void merge_checked(nlohmann::json& base, const nlohmann::json& user,
                          const std::string& path) {
  if (!user.is_object())
    throw ConfigError("config: expected an object at " + (path.empty() ? "top level" : path));
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string here = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key " + here);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), here);
    } else {
      if (slot.is_string() != it.value().is_string() ||
          slot.is_boolean() != it.value().is_boolean() ||
          slot.is_array() != it.value().is_array() ||
          (slot.is_number() && !it.value().is_number()) ||
          (!slot.is_number() && it.value().is_number()))
        throw ConfigError("config: wrong value type for " + here);
      slot = it.value();
    }
  }
}

inline std::pair<std::size_t, std::size_t> len_range(const nlohmann::json& arr,
                                                     const char* name) {
  if (!arr.is_array() || arr.size() != 2 || !arr[0].is_number_integer() ||
      !arr[1].is_number_integer())
    throw ConfigError(std::string("config: ") + name + " must be [min, max]");
  return {arr[0].get<std::size_t>(), arr[1].get<std::size_t>()};
}

template <typename T>
inline T positive_int(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config: " + key + " must be a non-negative integer");
  return T(v.get<long long>());
}

}  // namespace detail

inline RunConfig parse_config(nlohmann::json doc) {
  RunConfig rc;
  const auto& m = doc["model"];
  rc.model.d = detail::positive_int<std::size_t>(m["d"], "model.d");
  rc.model.d_t_raw = detail::positive_int<std::size_t>(m["d_t_raw"], "model.d_t_raw");
  rc.model.d_v_raw = detail::positive_int<std::size_t>(m["d_v_raw"], "model.d_v_raw");
  rc.model.d_a_raw = detail::positive_int<std::size_t>(m["d_a_raw"], "model.d_a_raw");
  const std::string mode = m["text_mode"].get<std::string>();
  if (mode == "trained")
    rc.model.text_mode = TextMode::Trained;
  else if (mode == "passthrough")
    rc.model.text_mode = TextMode::Passthrough;
  else
    throw ConfigError("config: model.text_mode must be trained or passthrough");
  rc.model.micro_layers = detail::positive_int<std::size_t>(m["micro_layers"], "model.micro_layers");
  rc.model.macro_layers = detail::positive_int<std::size_t>(m["macro_layers"], "model.macro_layers");
  rc.model.heads = detail::positive_int<std::size_t>(m["heads"], "model.heads");
  rc.model.d_k = detail::positive_int<std::size_t>(m["d_k"], "model.d_k");
  rc.model.ffn_hidden = detail::positive_int<std::size_t>(m["ffn_hidden"], "model.ffn_hidden");
  rc.model.k = detail::positive_int<std::size_t>(m["k"], "model.k");
  rc.model.use_cmb = m["use_cmb"].get<bool>();
  rc.model.alpha = doc["loss"]["alpha"].get<double>();
  rc.model.beta = doc["loss"]["beta"].get<double>();

  const auto& o = doc["optim"];
  rc.optim.lr_text = o["lr_text"].get<double>();
  rc.optim.lr_main = o["lr_main"].get<double>();
  rc.optim.beta1 = o["beta1"].get<double>();
  rc.optim.beta2 = o["beta2"].get<double>();
  rc.optim.eps = o["eps"].get<double>();

  const auto& t = doc["train"];
  rc.train.batch_size = detail::positive_int<std::size_t>(t["batch_size"], "train.batch_size");
  rc.train.epochs = detail::positive_int<std::size_t>(t["epochs"], "train.epochs");
  rc.train.seed = detail::positive_int<std::uint64_t>(t["seed"], "train.seed");
  rc.train.clip_norm = t["clip_norm"].get<double>();
  rc.train.run_dir = t["run_dir"].get<std::string>();
  if (rc.train.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");

  rc.data.train_path = doc["data"]["train_path"].get<std::string>();
  rc.data.val_path = doc["data"]["val_path"].get<std::string>();
  rc.data.test_path = doc["data"]["test_path"].get<std::string>();

  const auto& s = doc["synth"];
  rc.synth.n_samples = detail::positive_int<std::size_t>(s["n_samples"], "synth.n_samples");
  rc.synth.seed = detail::positive_int<std::uint64_t>(s["seed"], "synth.seed");
  rc.synth.noise_sigma = s["noise_sigma"].get<double>();
  rc.synth.conflict_prob = s["conflict_prob"].get<double>();
  rc.synth.bimodal_conflict_prob = s["bimodal_conflict_prob"].get<double>();
  std::tie(rc.synth.len_t_min, rc.synth.len_t_max) = detail::len_range(s["len_t"], "synth.len_t");
  std::tie(rc.synth.len_v_min, rc.synth.len_v_max) = detail::len_range(s["len_v"], "synth.len_v");
  std::tie(rc.synth.len_a_min, rc.synth.len_a_max) = detail::len_range(s["len_a"], "synth.len_a");
  rc.synth.d_t_raw = detail::positive_int<std::size_t>(s["d_t_raw"], "synth.d_t_raw");
  rc.synth.d_v_raw = detail::positive_int<std::size_t>(s["d_v_raw"], "synth.d_v_raw");
  rc.synth.d_a_raw = detail::positive_int<std::size_t>(s["d_a_raw"], "synth.d_a_raw");
  rc.synth_out_path = s["out_path"].get<std::string>();

  const auto& a = doc["ablation"];
  rc.ablation.seeds.clear();
  for (const auto& v : a["seeds"])
    rc.ablation.seeds.push_back(detail::positive_int<std::uint64_t>(v, "ablation.seeds"));
  rc.ablation.k_sweep.clear();
  for (const auto& v : a["k_sweep"])
    rc.ablation.k_sweep.push_back(detail::positive_int<std::size_t>(v, "ablation.k_sweep"));
  if (rc.ablation.seeds.empty()) throw ConfigError("config: ablation.seeds must be non-empty");
  rc.ablation.val_samples =
      detail::positive_int<std::size_t>(a["val_samples"], "ablation.val_samples");
  rc.ablation.test_samples =
      detail::positive_int<std::size_t>(a["test_samples"], "ablation.test_samples");
  rc.ablation.out_dir = a["out_dir"].get<std::string>();

  rc.model.validate();
  rc.synth.validate();
  rc.doc = std::move(doc);
  return rc;
}

// Set one dotted path in the document; the path must already exist in the
// default tree. Values parse as JSON first, falling back to plain strings.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  std::vector<std::string> keys;
  while (true) {
    const auto dot = path.find('.', start);
    keys.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object())
      throw ConfigError("config: unknown section " + keys[i] + " in override " + assignment);
    node = &(*node)[keys[i]];
  }
  nlohmann::json leaf_patch = nlohmann::json::object();
  leaf_patch[keys.back()] = value;
  detail::merge_checked(*node, leaf_patch, path.substr(0, path.rfind('.')));
}

inline RunConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = default_config_json();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json user = nlohmann::json::parse(is, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config: invalid JSON in " + path);
    detail::merge_checked(doc, user, "");
  }
  for (const auto& ov : overrides) apply_override(doc, ov);
  return parse_config(std::move(doc));
}

}  // namespace mcan
