// Dataset records, line-delimited JSON ingestion, and deterministic
// batching with right-padding and validity masks.
#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcan/common.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct ModalitySample {
  std::string id;
  double label = 0.0;
  Tensor text, visual, audio;  // n x raw_width each
};

struct BatchSample {
  std::string id;
  double label = 0.0;
  Tensor text, visual, audio;  // padded to the batch maximum
  Mask mask_t, mask_v, mask_a;
};

using Batch = std::vector<BatchSample>;

namespace detail {

inline Tensor matrix_from_json(const nlohmann::json& rows, const char* field, std::size_t line) {
  if (!rows.is_array() || rows.empty())
    throw DataError("dataset line " + std::to_string(line) + ": " + field +
                    " must be a non-empty array of rows");
  const std::size_t n = rows.size();
  std::size_t width = 0;
  std::vector<double> data;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = rows[i];
    if (!row.is_array() || row.empty())
      throw DataError("dataset line " + std::to_string(line) + ": " + field + " row " +
                      std::to_string(i) + " is not a non-empty array");
    if (i == 0) {
      width = row.size();
      data.reserve(n * width);
    } else if (row.size() != width) {
      throw DataError("dataset line " + std::to_string(line) + ": " + field +
                      " has ragged rows");
    }
    for (const auto& v : row) {
      if (!v.is_number())
        throw DataError("dataset line " + std::to_string(line) + ": " + field +
                        " contains a non-numeric entry");
      data.push_back(v.get<double>());
    }
  }
  return Tensor::from({n, width}, std::move(data));
}

inline nlohmann::json matrix_to_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline void validate_sample(const ModalitySample& s, const char* context) {
  if (!std::isfinite(s.label) || s.label < -3.0 || s.label > 3.0)
    throw DataError(std::string(context) + ": label " + std::to_string(s.label) +
                    " outside [-3, 3] for id " + s.id);
  for (const Tensor* t : {&s.text, &s.visual, &s.audio})
    if (t->rows() < 1) throw DataError(std::string(context) + ": empty sequence in id " + s.id);
}

inline std::vector<ModalitySample> load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("dataset: cannot open " + path);
  std::vector<ModalitySample> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t w_t = 0, w_v = 0, w_a = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    for (const char* field : {"id", "label", "text", "visual", "audio"})
      if (!rec.contains(field))
        throw DataError("dataset line " + std::to_string(lineno) + ": missing field " + field);
    ModalitySample s;
    if (!rec["id"].is_string() || !rec["label"].is_number())
      throw DataError("dataset line " + std::to_string(lineno) + ": bad id or label type");
    s.id = rec["id"].get<std::string>();
    s.label = rec["label"].get<double>();
    s.text = detail::matrix_from_json(rec["text"], "text", lineno);
    s.visual = detail::matrix_from_json(rec["visual"], "visual", lineno);
    s.audio = detail::matrix_from_json(rec["audio"], "audio", lineno);
    const std::string ctx = "dataset line " + std::to_string(lineno);
    validate_sample(s, ctx.c_str());
    if (out.empty()) {
      w_t = s.text.cols();
      w_v = s.visual.cols();
      w_a = s.audio.cols();
    } else if (s.text.cols() != w_t || s.visual.cols() != w_v || s.audio.cols() != w_a) {
      throw DataError(ctx + ": modality width differs from the first record");
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("dataset: no records in " + path);
  return out;
}

inline void save_dataset(const std::vector<ModalitySample>& samples, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("dataset: cannot open " + path + " for writing");
  for (const auto& s : samples) {
    nlohmann::json rec;
    rec["id"] = s.id;
    rec["label"] = s.label;
    rec["text"] = detail::matrix_to_json(s.text);
    rec["visual"] = detail::matrix_to_json(s.visual);
    rec["audio"] = detail::matrix_to_json(s.audio);
    os << rec.dump() << "\n";
  }
  if (!os) throw DataError("dataset: write failed for " + path);
}

namespace detail {

inline Tensor pad_rows(const Tensor& t, std::size_t rows) {
  if (t.rows() == rows) return t;
  Tensor out = Tensor::zeros({rows, t.cols()});
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j)
      out.mutable_data()[i * t.cols() + j] = t.at(i, j);
  return out;
}

inline Mask pad_mask(std::size_t valid, std::size_t total) {
  Mask m(total, 0);
  for (std::size_t i = 0; i < valid; ++i) m[i] = 1;
  return m;
}

}  // namespace detail

// Deterministic shuffle (in-house Fisher-Yates so the permutation is fixed
// by the seed, not by library internals), then fixed-size chunks padded to
// each batch's per-modality maximum.
inline std::vector<Batch> make_batches(const std::vector<ModalitySample>& samples,
                                       std::size_t batch_size, std::uint64_t seed,
                                       bool shuffle = true) {
  if (batch_size < 1) throw ValueError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle && order.size() > 1) {
    std::mt19937_64 rng(mix64(seed));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = std::size_t(rng() % (i + 1));
      std::swap(order[i], order[j]);
    }
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    std::size_t max_t = 0, max_v = 0, max_a = 0;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples[order[i]];
      max_t = std::max(max_t, s.text.rows());
      max_v = std::max(max_v, s.visual.rows());
      max_a = std::max(max_a, s.audio.rows());
    }
    Batch b;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples[order[i]];
      BatchSample bs;
      bs.id = s.id;
      bs.label = s.label;
      bs.text = detail::pad_rows(s.text, max_t);
      bs.visual = detail::pad_rows(s.visual, max_v);
      bs.audio = detail::pad_rows(s.audio, max_a);
      bs.mask_t = detail::pad_mask(s.text.rows(), max_t);
      bs.mask_v = detail::pad_mask(s.visual.rows(), max_v);
      bs.mask_a = detail::pad_mask(s.audio.rows(), max_a);
      b.push_back(std::move(bs));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace mcan
