// Finite-difference verification of the full objective's gradients, block
// by block. The analytic pass records every SVD split's bases; numeric
// re-evaluations replay them, so both sides differentiate the same frozen
// projections. Block error is max |analytic - numeric| over the block,
// scaled by the larger gradient magnitude (floored, so noise on near-zero
// blocks is judged absolutely).
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mcan/adam.hpp"
#include "mcan/common.hpp"
#include "mcan/decomposition.hpp"
#include "mcan/model.hpp"
#include "mcan/params.hpp"

namespace mcan {

struct BlockCheck {
  std::string name;
  double max_abs_diff = 0.0;
  double scale = 0.0;  // denominator used for the relative error
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  double worst_rel = 0.0;

  bool passed(double tol) const { return worst_rel <= tol; }
};

// tamper runs after the analytic backward pass; tests use it to corrupt a
// gradient and prove the comparison catches it.
inline GradcheckReport gradcheck(const Batch& batch, ParamRegistry& reg, const ModelConfig& cfg,
                                 double fd_step = 1e-5, double denom_floor = 1e-2,
                                 const std::function<void(ParamRegistry&)>& tamper = nullptr) {
  reg.set_grad_enabled(true);
  reg.zero_grads();
  SplitCache cache;
  ForwardResult fwd = forward_batch(batch, reg, cfg, &cache);
  backward(fwd.total);
  if (tamper) tamper(reg);

  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, t] : reg.items())
    analytic[name] = t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0);

  // Value-only re-evaluations under the recorded bases.
  reg.set_grad_enabled(false);
  cache.rewind();
  auto eval = [&]() {
    cache.rewind();
    return forward_batch(batch, reg, cfg, &cache).total.item();
  };

  GradcheckReport report;
  for (const auto& [name, t] : reg.items()) {
    Tensor param = t;
    auto& data = param.mutable_data();
    const auto& a = analytic[name];
    BlockCheck blk;
    blk.name = name;
    double worst = 0.0, amax = 0.0, fmax = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + fd_step;
      const double up = eval();
      data[i] = saved - fd_step;
      const double dn = eval();
      data[i] = saved;
      const double fd = (up - dn) / (2.0 * fd_step);
      worst = std::max(worst, std::fabs(a[i] - fd));
      amax = std::max(amax, std::fabs(a[i]));
      fmax = std::max(fmax, std::fabs(fd));
    }
    blk.max_abs_diff = worst;
    blk.scale = std::max(denom_floor, std::max(amax, fmax));
    blk.rel_error = worst / blk.scale;
    report.worst_rel = std::max(report.worst_rel, blk.rel_error);
    report.blocks.push_back(std::move(blk));
  }
  reg.set_grad_enabled(true);
  return report;
}

}  // namespace mcan
