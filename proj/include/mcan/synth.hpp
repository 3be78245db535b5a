// Synthetic multimodal sentiment data with controllable conflict. Each
// sample hides a sentiment s in [-3, 3]; every modality row encodes s along
// a fixed random unit code plus Gaussian noise. With probability p one
// modality flips sign (unimodal conflict); with probability q the audio and
// visual codes take opposite polarities (bimodal conflict), text unchanged.
// All randomness comes from per-purpose streams keyed by (seed, name), so
// output is byte-stable for a given config.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/data.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct SynthConfig {
  std::size_t n_samples = 200;
  std::uint64_t seed = 1;
  double noise_sigma = 0.3;
  double conflict_prob = 0.3;          // p, one modality sign-flipped
  double bimodal_conflict_prob = 0.2;  // q, audio and visual take opposite signs
  std::size_t len_t_min = 4, len_t_max = 8;
  std::size_t len_v_min = 4, len_v_max = 8;
  std::size_t len_a_min = 4, len_a_max = 8;
  std::size_t d_t_raw = 32, d_v_raw = 16, d_a_raw = 16;

  void validate() const {
    if (n_samples < 1) throw ConfigError("synth: n_samples must be >= 1");
    for (auto [lo, hi] : {std::pair{len_t_min, len_t_max}, {len_v_min, len_v_max},
                          {len_a_min, len_a_max}})
      if (lo < 1 || hi < lo) throw ConfigError("synth: bad sequence length range");
    for (double pr : {conflict_prob, bimodal_conflict_prob})
      if (!(pr >= 0.0 && pr <= 1.0)) throw ConfigError("synth: probabilities must be in [0,1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
    if (d_t_raw < 1 || d_v_raw < 1 || d_a_raw < 1)
      throw ConfigError("synth: raw widths must be >= 1");
  }
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller; the log argument is kept away from zero.
  const double u1 = std::max(unit_uniform(rng), 1e-300);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace detail

// Unit-norm encoding direction for one modality, fixed by (seed, name).
inline std::vector<double> synth_code(const SynthConfig& cfg, const std::string& modality) {
  const std::size_t width = modality == "t"   ? cfg.d_t_raw
                            : modality == "v" ? cfg.d_v_raw
                            : modality == "a" ? cfg.d_a_raw
                                              : 0;
  if (width == 0) throw ValueError("synth_code: modality must be t, v or a");
  std::mt19937_64 rng(mix64(cfg.seed ^ fnv1a("code." + modality)));
  std::vector<double> code(width);
  double norm2 = 0.0;
  for (auto& c : code) {
    c = detail::gaussian(rng);
    norm2 += c * c;
  }
  const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
  for (auto& c : code) c *= inv;
  return code;
}

// Mean-pooled projection of a sequence onto a code; recovers sign * s for
// clean data.
inline double synth_decode(const Tensor& seq, const std::vector<double>& code) {
  double acc = 0.0, norm2 = 0.0;
  for (double c : code) norm2 += c * c;
  for (std::size_t i = 0; i < seq.rows(); ++i)
    for (std::size_t j = 0; j < seq.cols(); ++j) acc += seq.at(i, j) * code[j];
  return acc / (double(seq.rows()) * norm2);
}

inline std::vector<ModalitySample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto code_t = synth_code(cfg, "t");
  const auto code_v = synth_code(cfg, "v");
  const auto code_a = synth_code(cfg, "a");

  auto make_seq = [&](std::mt19937_64& rng, const std::vector<double>& code, double signed_s,
                      std::size_t lo, std::size_t hi) {
    const std::size_t len = lo + (hi > lo ? std::size_t(rng() % (hi - lo + 1)) : 0);
    std::vector<double> data(len * code.size());
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < code.size(); ++j)
        data[i * code.size() + j] =
            signed_s * code[j] + cfg.noise_sigma * detail::gaussian(rng);
    return Tensor::from({len, code.size()}, std::move(data));
  };

  std::vector<ModalitySample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    std::mt19937_64 rng(mix64(cfg.seed ^ fnv1a("sample." + std::to_string(i))));
    const double s = -3.0 + 6.0 * detail::unit_uniform(rng);
    double g_t = 1.0, g_v = 1.0, g_a = 1.0;
    const bool unimodal = detail::unit_uniform(rng) < cfg.conflict_prob;
    const std::size_t which = std::size_t(rng() % 3);
    const bool bimodal = detail::unit_uniform(rng) < cfg.bimodal_conflict_prob;
    const double sigma_sign = detail::unit_uniform(rng) < 0.5 ? 1.0 : -1.0;
    if (unimodal) {
      (which == 0 ? g_t : which == 1 ? g_v : g_a) = -1.0;
    }
    if (bimodal) {
      g_t = 1.0;
      g_a = sigma_sign;
      g_v = -sigma_sign;
    }
    ModalitySample sample;
    sample.id = "synth-" + std::to_string(i);
    sample.label = s;
    sample.text = make_seq(rng, code_t, g_t * s, cfg.len_t_min, cfg.len_t_max);
    sample.visual = make_seq(rng, code_v, g_v * s, cfg.len_v_min, cfg.len_v_max);
    sample.audio = make_seq(rng, code_a, g_a * s, cfg.len_a_min, cfg.len_a_max);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace mcan
