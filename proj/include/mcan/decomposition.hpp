// Aligned/conflict split of a fused representation by truncated SVD.
// The singular subspaces are treated as constants of the forward pass, so
// gradients flow through plain projections: d(aligned) = Uk Uk^T dF Vk Vk^T,
// and the conflict part receives the complementary projection. Numeric
// differentiation of the split must therefore reuse the bases captured on
// the analytic pass; SplitCache records and replays them.
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/svd.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct SplitResult {
  Tensor aligned;   // m x n, top-k reconstruction
  Tensor conflict;  // m x n, remainder
  std::size_t k_used = 0;
  Tensor spectrum;  // 1 x h singular values, descending
};

// Frozen bases of one split site: detached, no gradient tracking.
struct SplitBases {
  Tensor uk, vk;  // m x k, n x k
  Tensor ur, vr;  // m x r, n x r with r = h - k
  std::size_t k_used = 0;
  std::vector<double> spectrum;
};

// Records bases on the pass that owns the gradients, then hands the same
// bases back to value-only re-evaluations in call order.
class SplitCache {
 public:
  bool replaying() const { return replaying_; }

  void record(SplitBases b) { entries_.push_back(std::move(b)); }

  const SplitBases& next() {
    if (cursor_ >= entries_.size())
      throw ValueError("split cache: replay ran past the recorded splits");
    return entries_[cursor_++];
  }

  // Switch to replay and restart from the first recorded split.
  void rewind() {
    replaying_ = true;
    cursor_ = 0;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  bool replaying_ = false;
  std::vector<SplitBases> entries_;
  std::size_t cursor_ = 0;
};

namespace detail {

inline Tensor columns(const Tensor& m, std::size_t c0, std::size_t c1) {
  return slice_cols(m, c0, c1).detached();
}

}  // namespace detail

// k is clamped to min(k, h-1) with h = min(m, n) so the conflict part is
// never empty. With a cache in replay mode the stored bases are used as-is.
inline SplitResult split_aligned_conflict(const Tensor& f, std::size_t k,
                                          SplitCache* cache = nullptr) {
  detail::require_rank2(f, "split_aligned_conflict");
  const std::size_t m = f.rows(), n = f.cols();
  if (m < 2 || n < 2)
    throw ShapeError("split_aligned_conflict: need at least 2x2, got " + shape_str(f.shape()));
  if (k < 1) throw ValueError("split_aligned_conflict: k must be >= 1");

  SplitBases bases;
  if (cache && cache->replaying()) {
    const SplitBases& stored = cache->next();
    if (stored.uk.rows() != m || stored.vk.rows() != n)
      throw ShapeError("split_aligned_conflict: cached bases do not fit the input");
    bases = stored;
  } else {
    const std::size_t h = std::min(m, n);
    const std::size_t ku = std::min(k, h - 1);
    SvdResult s = svd(f.detached());
    bases.k_used = ku;
    bases.spectrum = s.sigma;
    bases.uk = detail::columns(s.u, 0, ku);
    bases.vk = detail::columns(s.v, 0, ku);
    bases.ur = detail::columns(s.u, ku, h);
    bases.vr = detail::columns(s.v, ku, h);
    if (cache) cache->record(bases);
  }

  // aligned = Uk (Uk^T f Vk) Vk^T; the bases are constants, f carries the graph.
  Tensor core_k = matmul(matmul(transpose(bases.uk), f), bases.vk);
  Tensor aligned = matmul(matmul(bases.uk, core_k), transpose(bases.vk));
  Tensor core_r = matmul(matmul(transpose(bases.ur), f), bases.vr);
  Tensor conflict = matmul(matmul(bases.ur, core_r), transpose(bases.vr));

  SplitResult out;
  out.aligned = std::move(aligned);
  out.conflict = std::move(conflict);
  out.k_used = bases.k_used;
  out.spectrum = Tensor::row(bases.spectrum);
  return out;
}

}  // namespace mcan
