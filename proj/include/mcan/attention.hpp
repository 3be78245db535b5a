// Cross-modal multi-head attention and the bidirectional Cross-Transformer
// stack (MSIN). One stream provides Queries, the other Keys and Values;
// a layer runs both directions from the same pre-layer inputs with separate
// parameter sets, then concatenates the final streams along time.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/params.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct MsinConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d = 32;
  std::size_t d_k = 8;
  std::size_t ffn_hidden = 64;
};

inline void register_cross_attention(ParamRegistry& reg, const std::string& prefix,
                                     const MsinConfig& cfg) {
  const std::size_t w = cfg.heads * cfg.d_k;
  reg.add(prefix + ".wq", cfg.d, w, Init::Scaled);
  reg.add(prefix + ".wk", cfg.d, w, Init::Scaled);
  reg.add(prefix + ".wv", cfg.d, w, Init::Scaled);
  reg.add(prefix + ".wo", w, cfg.d, Init::Scaled);
}

inline void register_ffn(ParamRegistry& reg, const std::string& prefix, std::size_t d,
                         std::size_t hidden) {
  reg.add(prefix + ".w1", d, hidden, Init::Scaled);
  reg.add(prefix + ".b1", 1, hidden, Init::Zero);
  reg.add(prefix + ".w2", hidden, d, Init::Scaled);
  reg.add(prefix + ".b2", 1, d, Init::Zero);
}

inline void register_layer_norm(ParamRegistry& reg, const std::string& prefix, std::size_t d) {
  reg.add(prefix + ".gamma", 1, d, Init::One);
  reg.add(prefix + ".beta", 1, d, Init::Zero);
}

// One direction of a Cross-Transformer layer owns attention, two layer
// norms, and an FFN.
inline void register_layer_direction(ParamRegistry& reg, const std::string& prefix,
                                     const MsinConfig& cfg) {
  register_cross_attention(reg, prefix + ".attn", cfg);
  register_layer_norm(reg, prefix + ".ln1", cfg.d);
  register_ffn(reg, prefix + ".ffn", cfg.d, cfg.ffn_hidden);
  register_layer_norm(reg, prefix + ".ln2", cfg.d);
}

inline void register_msin(ParamRegistry& reg, const std::string& prefix, const MsinConfig& cfg) {
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string layer = prefix + ".layer" + std::to_string(i);
    register_layer_direction(reg, layer + ".fwd", cfg);
    register_layer_direction(reg, layer + ".rev", cfg);
  }
}

// Scaled dot-product attention of q_in over kv_in, heads side by side in the
// projection matrices; masked keys are excluded from every softmax row.
inline Tensor cross_attention(const Tensor& q_in, const Tensor& kv_in, const ParamRegistry& reg,
                              const std::string& prefix, const MsinConfig& cfg,
                              const Mask& key_mask) {
  if (q_in.cols() != cfg.d || kv_in.cols() != cfg.d)
    throw ShapeError("cross_attention: stream width vs model dim " + std::to_string(cfg.d));
  if (key_mask.size() != kv_in.rows())
    throw ShapeError("cross_attention: key mask length vs kv rows");
  Tensor q_all = matmul(q_in, reg.get(prefix + ".wq"));
  Tensor k_all = matmul(kv_in, reg.get(prefix + ".wk"));
  Tensor v_all = matmul(kv_in, reg.get(prefix + ".wv"));
  const double inv_sqrt = 1.0 / std::sqrt(double(cfg.d_k));
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t hidx = 0; hidx < cfg.heads; ++hidx) {
    const std::size_t c0 = hidx * cfg.d_k, c1 = c0 + cfg.d_k;
    Tensor qh = slice_cols(q_all, c0, c1);
    Tensor kh = slice_cols(k_all, c0, c1);
    Tensor vh = slice_cols(v_all, c0, c1);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor attn = masked_softmax_rows(scores, key_mask);
    heads.push_back(matmul(attn, vh));
  }
  return matmul(concat_cols(heads), reg.get(prefix + ".wo"));
}

inline Tensor ffn_forward(const Tensor& x, const ParamRegistry& reg, const std::string& prefix) {
  Tensor hidden = tanh_act(add_rowvec(matmul(x, reg.get(prefix + ".w1")), reg.get(prefix + ".b1")));
  return add_rowvec(matmul(hidden, reg.get(prefix + ".w2")), reg.get(prefix + ".b2"));
}

namespace detail {

inline Tensor layer_direction(const Tensor& stream, const Tensor& other, const ParamRegistry& reg,
                              const std::string& prefix, const MsinConfig& cfg,
                              const Mask& other_mask) {
  Tensor attn = cross_attention(stream, other, reg, prefix + ".attn", cfg, other_mask);
  Tensor h = layer_norm(add(stream, attn), reg.get(prefix + ".ln1.gamma"),
                        reg.get(prefix + ".ln1.beta"));
  return layer_norm(add(h, ffn_forward(h, reg, prefix + ".ffn")),
                    reg.get(prefix + ".ln2.gamma"), reg.get(prefix + ".ln2.beta"));
}

}  // namespace detail

// Both directions evaluated from the pre-layer inputs; padded rows are
// re-zeroed so they never leak through the row-wise layer norm.
inline std::pair<Tensor, Tensor> cross_transformer_layer(const Tensor& x, const Tensor& y,
                                                         const ParamRegistry& reg,
                                                         const std::string& prefix,
                                                         const MsinConfig& cfg,
                                                         const Mask& mask_x, const Mask& mask_y) {
  Tensor out_x = detail::layer_direction(x, y, reg, prefix + ".fwd", cfg, mask_y);
  Tensor out_y = detail::layer_direction(y, x, reg, prefix + ".rev", cfg, mask_x);
  return {mask_rows(out_x, mask_x), mask_rows(out_y, mask_y)};
}

struct MsinOutput {
  Tensor fused;  // (n_x + n_y) x d, x stream first
  Mask mask;     // concatenated validity
};

inline MsinOutput msin_forward(const Tensor& x_in, const Tensor& y_in, const ParamRegistry& reg,
                               const std::string& prefix, const MsinConfig& cfg,
                               const Mask& mask_x, const Mask& mask_y) {
  if (cfg.layers < 1) throw ConfigError("msin: layer count must be >= 1");
  Tensor x = x_in, y = y_in;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string layer = prefix + ".layer" + std::to_string(i);
    auto [nx, ny] = cross_transformer_layer(x, y, reg, layer, cfg, mask_x, mask_y);
    x = nx;
    y = ny;
  }
  MsinOutput out;
  out.fused = concat_rows({x, y});
  out.mask = mask_x;
  out.mask.insert(out.mask.end(), mask_y.begin(), mask_y.end());
  return out;
}

}  // namespace mcan
