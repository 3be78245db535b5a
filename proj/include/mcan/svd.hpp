// One-sided Jacobi SVD for small dense matrices. Deterministic for a given
// input: fixed sweep order, stable descending sort, and a sign convention
// that makes each left singular vector's first nonzero entry non-negative.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct SvdResult {
  Tensor u;                   // m x r, orthonormal columns
  std::vector<double> sigma;  // r values, descending, non-negative
  Tensor v;                   // n x r, orthonormal columns
  int sweeps = 0;             // Jacobi sweeps spent
};

namespace detail {

// Columns-of-vectors layout keeps the rotation update cache friendly.
struct ColMat {
  std::size_t rows = 0;
  std::vector<std::vector<double>> col;

  ColMat(std::size_t m, std::size_t n, bool ident = false) : rows(m), col(n) {
    for (std::size_t j = 0; j < n; ++j) {
      col[j].assign(m, 0.0);
      if (ident && j < m) col[j][j] = 1.0;
    }
  }
};

inline double col_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Core routine, m >= n assumed.
inline SvdResult svd_tall(const Tensor& a, int max_sweeps) {
  const std::size_t m = a.rows(), n = a.cols();
  ColMat w(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) w.col[j][i] = a.at(i, j);
  ColMat v(n, n, /*ident=*/true);

  const double tol = 1e-14;
  int sweeps = 0;
  double worst = 0.0;
  bool converged = (n < 2);
  while (!converged && sweeps < max_sweeps) {
    ++sweeps;
    worst = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_dot(w.col[p], w.col[p]);
        const double beta = col_dot(w.col[q], w.col[q]);
        const double gamma = col_dot(w.col[p], w.col[q]);
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        const double off = std::fabs(gamma) / scale;
        worst = std::max(worst, off);
        if (off <= tol) continue;
        rotated = true;
        // Classic Jacobi rotation zeroing the (p,q) off-diagonal of W^T W.
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w.col[p][i], wq = w.col[q][i];
          w.col[p][i] = c * wp - s * wq;
          w.col[q][i] = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v.col[p][i], vq = v.col[q][i];
          v.col[p][i] = c * vp - s * vq;
          v.col[q][i] = s * vp + c * vq;
        }
      }
    converged = !rotated;
  }
  if (!converged)
    throw NumericError("svd: Jacobi failed to converge after " + std::to_string(sweeps) +
                       " sweeps, residual " + std::to_string(worst));

  std::vector<double> sig(n);
  for (std::size_t j = 0; j < n; ++j) sig[j] = std::sqrt(col_dot(w.col[j], w.col[j]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&sig](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  double sig_max = 0.0;
  for (double s : sig) sig_max = std::max(sig_max, s);
  const double zero_tol = sig_max * double(std::max(m, n)) * 1e-15;

  SvdResult r;
  r.sweeps = sweeps;
  r.sigma.resize(n);
  r.u = Tensor::zeros({m, n});
  r.v = Tensor::zeros({n, n});
  auto& ud = r.u.mutable_data();
  auto& vd = r.v.mutable_data();
  std::vector<std::size_t> pending;  // output slots needing a basis completion
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    const double s = sig[j];
    r.sigma[jj] = (s <= zero_tol) ? 0.0 : s;
    for (std::size_t i = 0; i < n; ++i) vd[i * n + jj] = v.col[j][i];
    if (s <= zero_tol) {
      pending.push_back(jj);
    } else {
      for (std::size_t i = 0; i < m; ++i) ud[i * n + jj] = w.col[j][i] / s;
    }
  }

  // Null singular values leave W columns with no direction; fill those U slots
  // from canonical basis vectors, orthogonalized against everything placed so far.
  for (std::size_t slot : pending) {
    bool placed = false;
    for (std::size_t cand = 0; cand < m && !placed; ++cand) {
      std::vector<double> vec(m, 0.0);
      vec[cand] = 1.0;
      // Unfilled slots are still all-zero columns, so projecting against every
      // other column only removes components already placed.
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t jj = 0; jj < n; ++jj) {
          if (jj == slot) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += vec[i] * ud[i * n + jj];
          for (std::size_t i = 0; i < m; ++i) vec[i] -= d * ud[i * n + jj];
        }
      double nrm = std::sqrt(col_dot(vec, vec));
      if (nrm > 0.1) {
        for (std::size_t i = 0; i < m; ++i) ud[i * n + slot] = vec[i] / nrm;
        placed = true;
      }
    }
    if (!placed) throw NumericError("svd: basis completion failed");
  }
  return r;
}

}  // namespace detail

// Thin SVD a = u * diag(sigma) * v^T with r = min(m, n) columns.
inline SvdResult svd(const Tensor& a, int max_sweeps = 100) {
  detail::require_rank2(a, "svd");
  detail::check_input_finite(a, "svd");
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0 || n == 0) throw ShapeError("svd: empty matrix");

  SvdResult r;
  if (m >= n) {
    r = detail::svd_tall(a, max_sweeps);
  } else {
    SvdResult t = detail::svd_tall(transpose(a).detached(), max_sweeps);
    r.u = t.v;
    r.v = t.u;
    r.sigma = std::move(t.sigma);
    r.sweeps = t.sweeps;
  }

  // Sign convention: first nonzero entry of each u column non-negative.
  const std::size_t rr = r.sigma.size();
  auto& ud = r.u.mutable_data();
  auto& vd = r.v.mutable_data();
  const std::size_t um = r.u.rows(), vm = r.v.rows();
  for (std::size_t j = 0; j < rr; ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < um; ++i) {
      if (std::fabs(ud[i * rr + j]) > 1e-12) {
        lead = ud[i * rr + j];
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < um; ++i) ud[i * rr + j] = -ud[i * rr + j];
      for (std::size_t i = 0; i < vm; ++i) vd[i * rr + j] = -vd[i * rr + j];
    }
  }
  return r;
}

}  // namespace mcan
