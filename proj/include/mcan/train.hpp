// Training loop and run directory layout. A run directory is
// self-describing: config.json (the merged settings the run actually used),
// metrics.jsonl (one validation record per epoch), best.bin (checkpoint of
// the best validation epoch), best.json (final scores recomputed from the
// reloaded checkpoint, so they reflect exactly what best.bin restores).
#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcan/adam.hpp"
#include "mcan/config.hpp"
#include "mcan/data.hpp"
#include "mcan/model.hpp"
#include "mcan/params.hpp"
#include "mcan/training.hpp"

namespace mcan {

struct EvalResult {
  MetricReport metrics;
  LossReport loss;
};

// Unshuffled batch-of-1 evaluation with gradients off; loss components are
// averaged per sample, predictions feed the metric block.
inline EvalResult evaluate(const std::vector<ModalitySample>& samples, ParamRegistry& reg,
                           const ModelConfig& cfg) {
  if (samples.size() < 2) throw ValueError("evaluate: need at least 2 samples");
  reg.set_grad_enabled(false);
  EvalResult out;
  std::vector<double> preds, labels;
  double main = 0.0, oc_mi = 0.0, oc_ma = 0.0, di_mi = 0.0, di_ma = 0.0;
  try {
    const auto batches = make_batches(samples, 1, 0, false);
    for (const Batch& b : batches) {
      ForwardResult fwd = forward_batch(b, reg, cfg);
      preds.push_back(fwd.traces[0].at("y_main").item());
      labels.push_back(b[0].label);
      main += fwd.main.item();
      oc_mi += fwd.oc_micro.item();
      oc_ma += fwd.oc_macro.item();
      di_mi += fwd.diff_micro.item();
      di_ma += fwd.diff_macro.item();
    }
  } catch (...) {
    reg.set_grad_enabled(true);
    throw;
  }
  reg.set_grad_enabled(true);
  const double n = double(samples.size());
  out.loss = total_loss(main / n, oc_mi / n, oc_ma / n, di_mi / n, di_ma / n, cfg.alpha, cfg.beta);
  out.metrics = compute_metrics(preds, labels);
  return out;
}

inline nlohmann::json metrics_record(std::size_t epoch, const std::string& split,
                                     const EvalResult& ev) {
  return nlohmann::json{{"epoch", epoch},
                        {"split", split},
                        {"acc2", ev.metrics.acc2},
                        {"acc7", ev.metrics.acc7},
                        {"f1", ev.metrics.f1},
                        {"corr", ev.metrics.corr},
                        {"mae", ev.metrics.mae},
                        {"loss",
                         {{"main", ev.loss.main},
                          {"oc_micro", ev.loss.oc_micro},
                          {"oc_macro", ev.loss.oc_macro},
                          {"diff_micro", ev.loss.diff_micro},
                          {"diff_macro", ev.loss.diff_macro},
                          {"total", ev.loss.total}}}};
}

struct TrainOutcome {
  std::string run_dir;
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  nlohmann::json best;  // contents of best.json
};

inline TrainOutcome train_run(const RunConfig& rc) {
  if (rc.data.train_path.empty()) throw ConfigError("train: data.train_path is required");
  const auto train_set = load_dataset(rc.data.train_path);
  if (train_set.size() < 2) throw DataError("train: need at least 2 training samples");
  const auto val_set =
      rc.data.val_path.empty() ? train_set : load_dataset(rc.data.val_path);
  std::vector<ModalitySample> test_set;
  if (!rc.data.test_path.empty()) test_set = load_dataset(rc.data.test_path);

  namespace fs = std::filesystem;
  fs::create_directories(rc.train.run_dir);
  {
    std::ofstream cfg_out(fs::path(rc.train.run_dir) / "config.json");
    cfg_out << rc.doc.dump(2) << "\n";
  }

  ParamRegistry reg(rc.train.seed);
  register_model(reg, rc.model);
  Adam opt(rc.optim);

  std::ofstream metrics_out(fs::path(rc.train.run_dir) / "metrics.jsonl");
  const std::string ckpt_path = (fs::path(rc.train.run_dir) / "best.bin").string();

  TrainOutcome outcome;
  outcome.run_dir = rc.train.run_dir;
  for (std::size_t epoch = 1; epoch <= rc.train.epochs; ++epoch) {
    // Fresh permutation each epoch, still a pure function of (seed, epoch).
    const auto batches =
        make_batches(train_set, rc.train.batch_size, rc.train.seed + 1000003 * epoch);
    for (const Batch& b : batches) {
      reg.zero_grads();
      ForwardResult fwd = forward_batch(b, reg, rc.model);
      backward(fwd.total);
      reg.clip_grad_norm(rc.train.clip_norm);
      opt.step(reg);
    }
    EvalResult val = evaluate(val_set, reg, rc.model);
    metrics_out << metrics_record(epoch, "val", val).dump() << "\n";
    metrics_out.flush();
    if (val.metrics.mae < outcome.best_val_mae) {
      outcome.best_val_mae = val.metrics.mae;
      outcome.best_epoch = epoch;
      save_checkpoint(reg, ckpt_path);
    }
  }

  // Score the checkpoint that best.bin actually restores: reload it (f32
  // round trip included) instead of reusing the in-memory weights.
  assign_checkpoint(reg, load_checkpoint(ckpt_path));
  EvalResult val = evaluate(val_set, reg, rc.model);
  nlohmann::json best{{"best_epoch", outcome.best_epoch},
                      {"checkpoint", "best.bin"},
                      {"val", metrics_record(outcome.best_epoch, "val", val)}};
  if (test_set.size() >= 2) {
    EvalResult test = evaluate(test_set, reg, rc.model);
    best["test"] = metrics_record(outcome.best_epoch, "test", test);
  }
  {
    std::ofstream best_out(fs::path(rc.train.run_dir) / "best.json");
    best_out << best.dump(2) << "\n";
  }
  outcome.best = std::move(best);
  return outcome;
}

}  // namespace mcan
