// Conflict-modeling branch: cross-attention blocks whose Queries come from
// conflict constituents, pooled into five width-d vectors, plus the
// orthogonality and prediction-difference losses computed from them.
#pragma once

#include <cmath>
#include <string>

#include "mcan/common.hpp"
#include "mcan/params.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct ConflictConfig {
  std::size_t d = 32;
  std::size_t d_k = 8;        // also the softmax scale dimension
  std::size_t ffn_hidden = 64;
};

inline void register_caca(ParamRegistry& reg, const std::string& prefix,
                          const ConflictConfig& cfg) {
  reg.add(prefix + ".wq", cfg.d, cfg.d_k, Init::Scaled);
  reg.add(prefix + ".wk", cfg.d, cfg.d_k, Init::Scaled);
  reg.add(prefix + ".wv", cfg.d, cfg.d, Init::Scaled);
}

inline void register_prediction_head(ParamRegistry& reg, const std::string& prefix,
                                     std::size_t d, std::size_t hidden) {
  reg.add(prefix + ".w1", d, hidden, Init::Scaled);
  reg.add(prefix + ".b1", 1, hidden, Init::Zero);
  reg.add(prefix + ".w2", hidden, 1, Init::Scaled);
  reg.add(prefix + ".b2", 1, 1, Init::Zero);
}

inline void register_conflict_branch(ParamRegistry& reg, const ConflictConfig& cfg) {
  for (const char* name : {"caca.t_from_tv", "caca.t_from_ta", "caca.v", "caca.a",
                           "caca.macro_ta", "caca.macro_tv"})
    register_caca(reg, name, cfg);
  for (const char* name : {"head.t", "head.v", "head.a", "head.tv", "head.ta"})
    register_prediction_head(reg, name, cfg.d, cfg.ffn_hidden);
}

// Single-head cross-attention, Query from the conflict constituent, Key and
// Value from the stream being enriched. No output projection.
inline Tensor caca_attend(const Tensor& conflict, const Tensor& stream, const ParamRegistry& reg,
                          const std::string& prefix, const ConflictConfig& cfg,
                          const Mask& key_mask) {
  if (conflict.cols() != cfg.d || stream.cols() != cfg.d)
    throw ShapeError("caca: widths must equal the model dimension");
  Tensor q = matmul(conflict, reg.get(prefix + ".wq"));
  Tensor k = matmul(stream, reg.get(prefix + ".wk"));
  Tensor v = matmul(stream, reg.get(prefix + ".wv"));
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(cfg.d_k)));
  return matmul(masked_softmax_rows(scores, key_mask), v);
}

struct ConflictInputs {
  Tensor f_t, f_v, f_a;
  Mask mask_t, mask_v, mask_a;
  Tensor f_ta_conflict, f_tv_conflict;
  Mask mask_ta, mask_tv;
  Tensor f_ta_aligned, f_tv_aligned;
  Tensor z_c_conflict;
  Mask mask_zc;
};

struct ConflictFeatures {
  Tensor f_t_prime, f_v_prime, f_a_prime;   // 1 x d
  Tensor f_tv_dprime, f_ta_dprime;          // 1 x d
};

// Two Micro attentions feed the text feature (queried by each bimodal
// conflict), pooled then averaged; visual and audio get one each; the Macro
// pair queries with the fused conflict over the aligned bimodal features.
inline ConflictFeatures build_conflict_features(const ConflictInputs& in, const ParamRegistry& reg,
                                                const ConflictConfig& cfg) {
  auto pooled = [&](const Tensor& q, const Tensor& kv, const std::string& prefix,
                    const Mask& key_mask, const Mask& query_mask) {
    return masked_mean_rows(caca_attend(q, kv, reg, prefix, cfg, key_mask), query_mask);
  };
  ConflictFeatures out;
  Tensor t_from_tv = pooled(in.f_tv_conflict, in.f_t, "caca.t_from_tv", in.mask_t, in.mask_tv);
  Tensor t_from_ta = pooled(in.f_ta_conflict, in.f_t, "caca.t_from_ta", in.mask_t, in.mask_ta);
  out.f_t_prime = scale(add(t_from_tv, t_from_ta), 0.5);
  out.f_v_prime = pooled(in.f_tv_conflict, in.f_v, "caca.v", in.mask_v, in.mask_tv);
  out.f_a_prime = pooled(in.f_ta_conflict, in.f_a, "caca.a", in.mask_a, in.mask_ta);
  out.f_ta_dprime =
      pooled(in.z_c_conflict, in.f_ta_aligned, "caca.macro_ta", in.mask_ta, in.mask_zc);
  out.f_tv_dprime =
      pooled(in.z_c_conflict, in.f_tv_aligned, "caca.macro_tv", in.mask_tv, in.mask_zc);
  return out;
}

inline Tensor prediction_head(const Tensor& f, const ParamRegistry& reg,
                              const std::string& prefix) {
  Tensor hidden = tanh_act(add_rowvec(matmul(f, reg.get(prefix + ".w1")), reg.get(prefix + ".b1")));
  return add_rowvec(matmul(hidden, reg.get(prefix + ".w2")), reg.get(prefix + ".b2"));
}

struct BranchPredictions {
  Tensor y_t, y_v, y_a, y_tv, y_ta;  // 1 x 1 each
};

inline BranchPredictions branch_predict(const ConflictFeatures& f, const ParamRegistry& reg) {
  BranchPredictions out;
  out.y_t = prediction_head(f.f_t_prime, reg, "head.t");
  out.y_v = prediction_head(f.f_v_prime, reg, "head.v");
  out.y_a = prediction_head(f.f_a_prime, reg, "head.a");
  out.y_tv = prediction_head(f.f_tv_dprime, reg, "head.tv");
  out.y_ta = prediction_head(f.f_ta_dprime, reg, "head.ta");
  return out;
}

namespace detail {

inline Tensor square(const Tensor& t) { return mul(t, t); }

}  // namespace detail

// Sum over ordered modality pairs of the squared cross-Grams; on pooled
// rows each unordered pair contributes twice its squared dot product.
inline Tensor orthogonality_loss_micro(const Tensor& f_t, const Tensor& f_v, const Tensor& f_a) {
  Tensor tv = detail::square(dot_rows(f_t, f_v));
  Tensor ta = detail::square(dot_rows(f_t, f_a));
  Tensor va = detail::square(dot_rows(f_v, f_a));
  return scale(add(add(tv, ta), va), 2.0);
}

// Sum over ordered pairs of squared prediction differences.
inline Tensor diff_loss_micro(const Tensor& y_t, const Tensor& y_v, const Tensor& y_a) {
  Tensor tv = detail::square(sub(y_t, y_v));
  Tensor ta = detail::square(sub(y_t, y_a));
  Tensor va = detail::square(sub(y_v, y_a));
  return scale(add(add(tv, ta), va), 2.0);
}

inline Tensor orthogonality_loss_macro(const Tensor& f_tv, const Tensor& f_ta) {
  return detail::square(dot_rows(f_tv, f_ta));
}

inline Tensor diff_loss_macro(const Tensor& y_tv, const Tensor& y_ta) {
  return detail::square(sub(y_tv, y_ta));
}

}  // namespace mcan
