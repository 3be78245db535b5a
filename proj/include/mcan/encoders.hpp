// Unimodal sequence encoders: a single-direction LSTM for audio/visual
// streams, and for text a learned projection with a residual LSTM on top
// (or a passthrough when features are precomputed at model width).
#pragma once

#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/params.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

inline void register_lstm(ParamRegistry& reg, const std::string& prefix, std::size_t d_in,
                          std::size_t d) {
  reg.add(prefix + ".wx", d_in, 4 * d, Init::Scaled);
  reg.add(prefix + ".wh", d, 4 * d, Init::Scaled);
  reg.add(prefix + ".b", 1, 4 * d, Init::Zero);
}

// Full hidden sequence of a standard LSTM, gate order (input, forget, cell,
// output). Zero weights give exactly zero output: tanh(0) kills the cell.
inline Tensor lstm_forward(const Tensor& x, const ParamRegistry& reg, const std::string& prefix,
                           std::size_t d) {
  const std::size_t n = x.rows();
  Tensor wx = reg.get(prefix + ".wx");
  Tensor wh = reg.get(prefix + ".wh");
  Tensor b = reg.get(prefix + ".b");
  if (wx.rows() != x.cols())
    throw ShapeError("lstm: input width " + std::to_string(x.cols()) + " vs wx rows " +
                     std::to_string(wx.rows()));
  Tensor h = Tensor::zeros({1, d});
  Tensor c = Tensor::zeros({1, d});
  std::vector<Tensor> steps;
  steps.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Tensor xt = gather_rows(x, {t});
    Tensor z = add_rowvec(add(matmul(xt, wx), matmul(h, wh)), b);
    Tensor gi = sigmoid(slice_cols(z, 0, d));
    Tensor gf = sigmoid(slice_cols(z, d, 2 * d));
    Tensor gc = tanh_act(slice_cols(z, 2 * d, 3 * d));
    Tensor go = sigmoid(slice_cols(z, 3 * d, 4 * d));
    c = add(mul(gf, c), mul(gi, gc));
    h = mul(go, tanh_act(c));
    steps.push_back(h);
  }
  return concat_rows(steps);
}

enum class TextMode { Passthrough, Trained };

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t d_t_raw = 32;
  std::size_t d_v_raw = 16;
  std::size_t d_a_raw = 16;
  TextMode text_mode = TextMode::Trained;
};

inline void register_encoders(ParamRegistry& reg, const EncoderConfig& cfg) {
  if (cfg.text_mode == TextMode::Trained) {
    reg.add("encoder.text.proj_w", cfg.d_t_raw, cfg.d, Init::Scaled);
    reg.add("encoder.text.proj_b", 1, cfg.d, Init::Zero);
    register_lstm(reg, "encoder.text.lstm", cfg.d, cfg.d);
  }
  register_lstm(reg, "encoder.visual.lstm", cfg.d_v_raw, cfg.d);
  register_lstm(reg, "encoder.audio.lstm", cfg.d_a_raw, cfg.d);
}

inline Tensor encode_text(const Tensor& text_seq, const ParamRegistry& reg,
                          const EncoderConfig& cfg) {
  if (text_seq.cols() != cfg.d_t_raw)
    throw ShapeError("encode_text: raw width " + std::to_string(text_seq.cols()) +
                     ", configured " + std::to_string(cfg.d_t_raw));
  if (cfg.text_mode == TextMode::Passthrough) {
    if (cfg.d_t_raw != cfg.d)
      throw ConfigError("encode_text: passthrough requires d_t_raw == d");
    return text_seq;
  }
  Tensor u = add_rowvec(matmul(text_seq, reg.get("encoder.text.proj_w")),
                        reg.get("encoder.text.proj_b"));
  return add(u, lstm_forward(u, reg, "encoder.text.lstm", cfg.d));
}

inline Tensor encode_av(const Tensor& seq, const ParamRegistry& reg, const std::string& which,
                        const EncoderConfig& cfg) {
  const std::size_t want = (which == "visual") ? cfg.d_v_raw : cfg.d_a_raw;
  if (seq.cols() != want)
    throw ShapeError("encode_av(" + which + "): raw width " + std::to_string(seq.cols()) +
                     ", configured " + std::to_string(want));
  return lstm_forward(seq, reg, "encoder." + which + ".lstm", cfg.d);
}

}  // namespace mcan
