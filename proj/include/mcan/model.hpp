// Full network assembly: encoders feed two Micro interaction stacks over
// (text, audio) and (text, visual), each fused output is split into aligned
// and conflict constituents, the aligned pair runs through the Macro stack
// and is split again; the main head predicts from the pooled aligned fusion
// while the conflict branch builds its features and losses from the rest.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mcan/attention.hpp"
#include "mcan/common.hpp"
#include "mcan/conflict.hpp"
#include "mcan/data.hpp"
#include "mcan/decomposition.hpp"
#include "mcan/encoders.hpp"
#include "mcan/params.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct ModelConfig {
  std::size_t d = 32;
  std::size_t d_t_raw = 32;
  std::size_t d_v_raw = 16;
  std::size_t d_a_raw = 16;
  TextMode text_mode = TextMode::Trained;
  std::size_t micro_layers = 2;
  std::size_t macro_layers = 1;
  std::size_t heads = 4;
  std::size_t d_k = 8;
  std::size_t ffn_hidden = 64;
  std::size_t k = 0;  // 0 selects the rank rule in effective_k
  bool use_cmb = true;
  double alpha = 1e-2;
  double beta = 1e-3;

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.d = d;
    e.d_t_raw = d_t_raw;
    e.d_v_raw = d_v_raw;
    e.d_a_raw = d_a_raw;
    e.text_mode = text_mode;
    return e;
  }
  MsinConfig micro() const { return {micro_layers, heads, d, d_k, ffn_hidden}; }
  MsinConfig macro_cfg() const { return {macro_layers, heads, d, d_k, ffn_hidden}; }
  ConflictConfig conflict() const { return {d, d_k, ffn_hidden}; }

  void validate() const {
    if (d < 2) throw ConfigError("model: d must be >= 2");
    if (heads < 1 || d_k < 1 || ffn_hidden < 1 || micro_layers < 1 || macro_layers < 1)
      throw ConfigError("model: layer, head and width counts must be positive");
    if (text_mode == TextMode::Passthrough && d_t_raw != d)
      throw ConfigError("model: passthrough text requires d_t_raw == d");
    if (!std::isfinite(alpha) || !std::isfinite(beta))
      throw ConfigError("model: alpha and beta must be finite");
  }
};

// Truncation rank for a spectrum of length h: configured k when set, else
// 44 capped by the available spectrum, or 60% of it at desk scale.
inline std::size_t effective_k(const ModelConfig& cfg, std::size_t h) {
  if (cfg.k > 0) return cfg.k;
  if (h > 44) return 44;
  return std::size_t(std::ceil(0.6 * double(h)));
}

inline void register_model(ParamRegistry& reg, const ModelConfig& cfg) {
  cfg.validate();
  register_encoders(reg, cfg.encoder());
  register_msin(reg, "msin.micro_ta", cfg.micro());
  register_msin(reg, "msin.micro_tv", cfg.micro());
  register_msin(reg, "msin.macro", cfg.macro_cfg());
  register_prediction_head(reg, "head.main", cfg.d, cfg.ffn_hidden);
  if (cfg.use_cmb) register_conflict_branch(reg, cfg.conflict());
}

struct SampleTrace {
  std::map<std::string, Tensor> values;
  Mask mask_ta, mask_tv, mask_zc;

  const Tensor& at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ValueError("trace: missing intermediate " + key);
    return it->second;
  }
};

struct ForwardResult {
  std::vector<SampleTrace> traces;
  // Scalar graph nodes (1x1), batch means.
  Tensor main, oc_micro, oc_macro, diff_micro, diff_macro, total;
};

// Mean squared error over per-sample scalar predictions.
inline Tensor main_loss(const std::vector<Tensor>& y_hat, const std::vector<double>& y) {
  if (y_hat.empty() || y_hat.size() != y.size())
    throw ValueError("main_loss: prediction/label counts " + std::to_string(y_hat.size()) +
                     " vs " + std::to_string(y.size()));
  std::vector<Tensor> sq;
  sq.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    Tensor err = sub(y_hat[i], Tensor::scalar(y[i]));
    sq.push_back(mul(err, err));
  }
  Tensor acc = sq[0];
  for (std::size_t i = 1; i < sq.size(); ++i) acc = add(acc, sq[i]);
  return scale(acc, 1.0 / double(sq.size()));
}

namespace detail {

inline std::vector<std::size_t> valid_indices(const Mask& m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) idx.push_back(i);
  return idx;
}

// Split on the valid rows only, then scatter back into the padded layout,
// so the spectrum and clamp never see padding.
inline std::pair<Tensor, Tensor> padded_split(const Tensor& fused, const Mask& mask,
                                              const ModelConfig& cfg, SplitCache* cache) {
  const auto idx = valid_indices(mask);
  Tensor packed = gather_rows(fused, idx);
  const std::size_t h = std::min(packed.rows(), packed.cols());
  SplitResult s = split_aligned_conflict(packed, effective_k(cfg, h), cache);
  return {scatter_rows(s.aligned, idx, fused.rows()),
          scatter_rows(s.conflict, idx, fused.rows())};
}

inline Tensor mean_of(std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / double(terms.size()));
}

}  // namespace detail

// One sample end to end; every named intermediate lands in the trace.
inline SampleTrace forward_sample(const BatchSample& s, const ParamRegistry& reg,
                                  const ModelConfig& cfg, SplitCache* cache = nullptr) {
  const EncoderConfig enc = cfg.encoder();
  SampleTrace tr;
  Tensor f_t = mask_rows(encode_text(s.text, reg, enc), s.mask_t);
  Tensor f_v = mask_rows(encode_av(s.visual, reg, "visual", enc), s.mask_v);
  Tensor f_a = mask_rows(encode_av(s.audio, reg, "audio", enc), s.mask_a);
  tr.values["f_t"] = f_t;
  tr.values["f_v"] = f_v;
  tr.values["f_a"] = f_a;

  MsinOutput ta = msin_forward(f_t, f_a, reg, "msin.micro_ta", cfg.micro(), s.mask_t, s.mask_a);
  MsinOutput tv = msin_forward(f_t, f_v, reg, "msin.micro_tv", cfg.micro(), s.mask_t, s.mask_v);
  tr.values["f_ta"] = ta.fused;
  tr.values["f_tv"] = tv.fused;
  tr.mask_ta = ta.mask;
  tr.mask_tv = tv.mask;

  auto [ta_aligned, ta_conflict] = detail::padded_split(ta.fused, ta.mask, cfg, cache);
  auto [tv_aligned, tv_conflict] = detail::padded_split(tv.fused, tv.mask, cfg, cache);
  tr.values["f_ta_aligned"] = ta_aligned;
  tr.values["f_ta_conflict"] = ta_conflict;
  tr.values["f_tv_aligned"] = tv_aligned;
  tr.values["f_tv_conflict"] = tv_conflict;

  MsinOutput zc = msin_forward(ta_aligned, tv_aligned, reg, "msin.macro", cfg.macro_cfg(),
                               ta.mask, tv.mask);
  tr.mask_zc = zc.mask;
  auto [zc_aligned, zc_conflict] = detail::padded_split(zc.fused, zc.mask, cfg, cache);
  tr.values["z_c_aligned"] = zc_aligned;
  tr.values["z_c_conflict"] = zc_conflict;

  tr.values["y_main"] =
      prediction_head(masked_mean_rows(zc_aligned, zc.mask), reg, "head.main");

  if (cfg.use_cmb) {
    ConflictInputs in;
    in.f_t = f_t;
    in.f_v = f_v;
    in.f_a = f_a;
    in.mask_t = s.mask_t;
    in.mask_v = s.mask_v;
    in.mask_a = s.mask_a;
    in.f_ta_conflict = ta_conflict;
    in.f_tv_conflict = tv_conflict;
    in.mask_ta = ta.mask;
    in.mask_tv = tv.mask;
    in.f_ta_aligned = ta_aligned;
    in.f_tv_aligned = tv_aligned;
    in.z_c_conflict = zc_conflict;
    in.mask_zc = zc.mask;
    ConflictFeatures feats = build_conflict_features(in, reg, cfg.conflict());
    tr.values["f_t_prime"] = feats.f_t_prime;
    tr.values["f_v_prime"] = feats.f_v_prime;
    tr.values["f_a_prime"] = feats.f_a_prime;
    tr.values["f_tv_dprime"] = feats.f_tv_dprime;
    tr.values["f_ta_dprime"] = feats.f_ta_dprime;
    BranchPredictions bp = branch_predict(feats, reg);
    tr.values["y_t"] = bp.y_t;
    tr.values["y_v"] = bp.y_v;
    tr.values["y_a"] = bp.y_a;
    tr.values["y_tv"] = bp.y_tv;
    tr.values["y_ta"] = bp.y_ta;
  }
  return tr;
}

inline ForwardResult forward_batch(const Batch& batch, const ParamRegistry& reg,
                                   const ModelConfig& cfg, SplitCache* cache = nullptr) {
  if (batch.empty()) throw ValueError("forward_batch: empty batch");
  ForwardResult out;
  std::vector<Tensor> preds;
  std::vector<double> labels;
  std::vector<Tensor> oc_mi, oc_ma, di_mi, di_ma;
  for (const BatchSample& s : batch) {
    SampleTrace tr = forward_sample(s, reg, cfg, cache);
    preds.push_back(tr.at("y_main"));
    labels.push_back(s.label);
    if (cfg.use_cmb) {
      oc_mi.push_back(orthogonality_loss_micro(tr.at("f_t_prime"), tr.at("f_v_prime"),
                                               tr.at("f_a_prime")));
      oc_ma.push_back(orthogonality_loss_macro(tr.at("f_tv_dprime"), tr.at("f_ta_dprime")));
      di_mi.push_back(diff_loss_micro(tr.at("y_t"), tr.at("y_v"), tr.at("y_a")));
      di_ma.push_back(diff_loss_macro(tr.at("y_tv"), tr.at("y_ta")));
    }
    out.traces.push_back(std::move(tr));
  }
  out.main = main_loss(preds, labels);
  if (cfg.use_cmb) {
    out.oc_micro = detail::mean_of(oc_mi);
    out.oc_macro = detail::mean_of(oc_ma);
    out.diff_micro = detail::mean_of(di_mi);
    out.diff_macro = detail::mean_of(di_ma);
  } else {
    out.oc_micro = Tensor::scalar(0.0);
    out.oc_macro = Tensor::scalar(0.0);
    out.diff_micro = Tensor::scalar(0.0);
    out.diff_macro = Tensor::scalar(0.0);
  }
  Tensor weighted = add(scale(add(out.oc_micro, out.oc_macro), cfg.alpha),
                        scale(add(out.diff_micro, out.diff_macro), cfg.beta));
  out.total = add(out.main, weighted);
  return out;
}

}  // namespace mcan
