// Ablation matrix: {full, wo_diff (beta=0), wo_oc (alpha=0), wo_cmb,
// k<K> for each sweep value} x seeds. Each seed gets one shared synthetic
// train/val/test triple so arms differ only in the model configuration,
// and each (arm, seed) cell is an ordinary training run directory.
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcan/config.hpp"
#include "mcan/synth.hpp"
#include "mcan/train.hpp"

namespace mcan {

struct AblationArm {
  std::string name;
  double alpha, beta;
  bool use_cmb;
  std::size_t k;  // 0 keeps the automatic rule
};

inline std::vector<AblationArm> ablation_arms(const RunConfig& rc) {
  const double a = rc.model.alpha, b = rc.model.beta;
  std::vector<AblationArm> arms = {
      {"full", a, b, true, rc.model.k},
      {"wo_diff", a, 0.0, true, rc.model.k},
      {"wo_oc", 0.0, b, true, rc.model.k},
      {"wo_cmb", a, b, false, rc.model.k},
  };
  for (std::size_t k : rc.ablation.k_sweep)
    arms.push_back({"k" + std::to_string(k), a, b, true, k});
  return arms;
}

namespace detail {

struct MeanSd {
  double mean = 0.0, sd = 0.0;
};

inline MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd r;
  for (double x : xs) r.mean += x;
  r.mean /= double(xs.size());
  if (xs.size() > 1) {
    double s = 0.0;
    for (double x : xs) s += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(s / double(xs.size() - 1));
  }
  return r;
}

inline std::string fmt_cell(const MeanSd& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f±%.4f", m.mean, m.sd);
  return buf;
}

}  // namespace detail

// Generate (or reuse) the per-seed datasets under out_dir/data/seed<S>/.
// One pool per seed, sliced into train/val/test: the splits must share the
// modality code directions (those are keyed by the generator seed), so
// generating each split independently would change the feature space
// between training and evaluation.
inline DataPaths ablation_datasets(const RunConfig& rc, std::uint64_t seed) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(rc.ablation.out_dir) / "data" / ("seed" + std::to_string(seed));
  fs::create_directories(dir);
  DataPaths paths;
  paths.train_path = (dir / "train.jsonl").string();
  paths.val_path = (dir / "val.jsonl").string();
  paths.test_path = (dir / "test.jsonl").string();
  if (fs::exists(paths.train_path) && fs::exists(paths.val_path) && fs::exists(paths.test_path))
    return paths;

  const std::size_t n_train = rc.synth.n_samples;
  const std::size_t n_val = rc.ablation.val_samples;
  const std::size_t n_test = rc.ablation.test_samples;
  SynthConfig sc = rc.synth;
  sc.n_samples = n_train + n_val + n_test;
  sc.seed = mix64(seed ^ fnv1a("ablation.data"));
  const auto pool = generate_synthetic(sc);

  auto slice = [&pool](std::size_t begin, std::size_t n) {
    return std::vector<ModalitySample>(pool.begin() + std::ptrdiff_t(begin),
                                       pool.begin() + std::ptrdiff_t(begin + n));
  };
  save_dataset(slice(0, n_train), paths.train_path);
  save_dataset(slice(n_train, n_val), paths.val_path);
  save_dataset(slice(n_train + n_val, n_test), paths.test_path);
  return paths;
}

// Run the full matrix; writes report.json and a mean+-sd table to
// report.txt under out_dir, then returns the report document.
inline nlohmann::json run_ablation(const RunConfig& rc) {
  namespace fs = std::filesystem;
  fs::create_directories(rc.ablation.out_dir);
  const auto arms = ablation_arms(rc);

  nlohmann::json report;
  report["seeds"] = rc.ablation.seeds;
  report["arms"] = nlohmann::json::object();

  std::map<std::string, std::map<std::string, std::vector<double>>> columns;
  const char* metric_keys[] = {"acc2", "acc7", "f1", "corr", "mae"};

  for (std::uint64_t seed : rc.ablation.seeds) {
    const DataPaths paths = ablation_datasets(rc, seed);
    for (const AblationArm& arm : arms) {
      RunConfig cell = rc;
      cell.model.alpha = arm.alpha;
      cell.model.beta = arm.beta;
      cell.model.use_cmb = arm.use_cmb;
      cell.model.k = arm.k;
      cell.data = paths;
      cell.train.seed = seed;
      cell.train.run_dir =
          (fs::path(rc.ablation.out_dir) / "runs" / arm.name / ("seed" + std::to_string(seed)))
              .string();
      cell.doc["loss"]["alpha"] = arm.alpha;
      cell.doc["loss"]["beta"] = arm.beta;
      cell.doc["model"]["use_cmb"] = arm.use_cmb;
      cell.doc["model"]["k"] = arm.k;
      cell.doc["train"]["seed"] = seed;
      cell.doc["train"]["run_dir"] = cell.train.run_dir;
      cell.doc["data"]["train_path"] = paths.train_path;
      cell.doc["data"]["val_path"] = paths.val_path;
      cell.doc["data"]["test_path"] = paths.test_path;

      TrainOutcome run = train_run(cell);
      if (!run.best.contains("test"))
        throw DataError("ablation: run produced no test metrics: " + cell.train.run_dir);
      const nlohmann::json& test = run.best["test"];
      report["arms"][arm.name]["seed" + std::to_string(seed)] = test;
      for (const char* key : metric_keys)
        columns[arm.name][key].push_back(test[key].get<double>());
    }
  }

  for (const AblationArm& arm : arms) {
    for (const char* key : metric_keys) {
      const auto ms = detail::mean_sd(columns[arm.name][key]);
      report["arms"][arm.name]["mean"][key] = ms.mean;
      report["arms"][arm.name]["sd"][key] = ms.sd;
    }
  }

  {
    std::ofstream js(fs::path(rc.ablation.out_dir) / "report.json");
    js << report.dump(2) << "\n";
  }
  {
    std::ofstream txt(fs::path(rc.ablation.out_dir) / "report.txt");
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %15s %15s %15s %15s %15s\n", "arm", "Acc2", "Acc7",
                  "F1", "Corr", "MAE");
    txt << line;
    for (const AblationArm& arm : arms) {
      std::string row;
      std::snprintf(line, sizeof(line), "%-10s", arm.name.c_str());
      row += line;
      for (const char* key : metric_keys) {
        const auto ms = detail::mean_sd(columns[arm.name][key]);
        std::snprintf(line, sizeof(line), " %15s", detail::fmt_cell(ms).c_str());
        row += line;
      }
      txt << row << "\n";
    }
  }
  return report;
}

}  // namespace mcan
