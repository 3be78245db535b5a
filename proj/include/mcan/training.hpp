// Objective assembly and evaluation metrics. The weighted total follows
// total = main + alpha*(oc_micro + oc_macro) + beta*(diff_micro + diff_macro)
// with the same association in graph and scalar form, so reports match the
// differentiated value bit for bit.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/model.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

struct LossReport {
  double main = 0.0, oc_micro = 0.0, oc_macro = 0.0, diff_micro = 0.0, diff_macro = 0.0;
  double total = 0.0;
  double alpha = 0.0, beta = 0.0;
};

inline LossReport total_loss(double main, double oc_micro, double oc_macro, double diff_micro,
                             double diff_macro, double alpha, double beta) {
  for (double v : {main, oc_micro, oc_macro, diff_micro, diff_macro})
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite component");
  LossReport r;
  r.main = main;
  r.oc_micro = oc_micro;
  r.oc_macro = oc_macro;
  r.diff_micro = diff_micro;
  r.diff_macro = diff_macro;
  r.alpha = alpha;
  r.beta = beta;
  r.total = main + (alpha * (oc_micro + oc_macro) + beta * (diff_micro + diff_macro));
  return r;
}

inline LossReport loss_report(const ForwardResult& fwd, const ModelConfig& cfg) {
  return total_loss(fwd.main.item(), fwd.oc_micro.item(), fwd.oc_macro.item(),
                    fwd.diff_micro.item(), fwd.diff_macro.item(), cfg.alpha, cfg.beta);
}

struct MetricReport {
  double acc2 = 0.0, acc7 = 0.0, f1 = 0.0, corr = 0.0, mae = 0.0;
  std::size_t n_total = 0;   // samples scored
  std::size_t n_binary = 0;  // samples kept for acc2/f1 (nonzero label)
};

namespace detail {

inline int to_class7(double v) {
  const long r = std::lround(v);
  return int(std::clamp(r, -3l, 3l));
}

}  // namespace detail

// Regression metrics over one split: mean absolute error, Pearson
// correlation, 7-class accuracy after rounding into [-3, 3], and binary
// accuracy/F1 on the nonzero-label subset with prediction >= 0 as positive.
inline MetricReport compute_metrics(const std::vector<double>& preds,
                                    const std::vector<double>& labels) {
  const std::size_t n = preds.size();
  if (n != labels.size()) throw ValueError("metrics: length mismatch");
  if (n < 2) throw ValueError("metrics: need at least 2 samples");
  for (double v : preds)
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite prediction");
  for (double v : labels)
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite label");

  MetricReport m;
  m.n_total = n;
  double abs_sum = 0.0, mean_p = 0.0, mean_l = 0.0;
  std::size_t hits7 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    abs_sum += std::fabs(preds[i] - labels[i]);
    mean_p += preds[i];
    mean_l += labels[i];
    if (detail::to_class7(preds[i]) == detail::to_class7(labels[i])) ++hits7;
  }
  m.mae = abs_sum / double(n);
  m.acc7 = double(hits7) / double(n);
  mean_p /= double(n);
  mean_l /= double(n);

  double cov = 0.0, var_p = 0.0, var_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = preds[i] - mean_p, dl = labels[i] - mean_l;
    cov += dp * dl;
    var_p += dp * dp;
    var_l += dl * dl;
  }
  if (var_p == 0.0 || var_l == 0.0)
    throw NumericError("metrics: zero variance makes correlation undefined");
  m.corr = cov / std::sqrt(var_p * var_l);

  std::size_t tp = 0, fp = 0, fn = 0, hits2 = 0, kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 0.0) continue;
    ++kept;
    const bool pos_pred = preds[i] >= 0.0;
    const bool pos_label = labels[i] > 0.0;
    if (pos_pred == pos_label) ++hits2;
    if (pos_pred && pos_label) ++tp;
    if (pos_pred && !pos_label) ++fp;
    if (!pos_pred && pos_label) ++fn;
  }
  m.n_binary = kept;
  if (kept > 0) {
    m.acc2 = double(hits2) / double(kept);
    const double denom_p = double(tp + fp), denom_r = double(tp + fn);
    if (tp > 0 && denom_p > 0.0 && denom_r > 0.0) {
      const double prec = double(tp) / denom_p, rec = double(tp) / denom_r;
      m.f1 = 2.0 * prec * rec / (prec + rec);
    }
  }
  return m;
}

}  // namespace mcan
