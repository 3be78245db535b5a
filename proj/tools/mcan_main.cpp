// Command line front end. Subcommands: synth, train, eval, gradcheck,
// decompose, ablate. Exit codes: 0 success, 1 runtime or numeric failure
// (including a failed gradient check), 2 usage, config, or data errors.
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcan/ablation.hpp"
#include "mcan/config.hpp"
#include "mcan/data.hpp"
#include "mcan/decomposition.hpp"
#include "mcan/gradcheck.hpp"
#include "mcan/model.hpp"
#include "mcan/params.hpp"
#include "mcan/svd.hpp"
#include "mcan/synth.hpp"
#include "mcan/train.hpp"
#include "mcan/training.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sc, CommonArgs& args) {
  sc->add_option("--config", args.config_path, "config file (JSON)");
  sc->add_option("--set", args.overrides, "dotted override, e.g. model.k=16")
      ->take_all();
}

int run_synth(const CommonArgs& args) {
  const mcan::RunConfig rc = mcan::load_config(args.config_path, args.overrides);
  const auto samples = mcan::generate_synthetic(rc.synth);
  mcan::save_dataset(samples, rc.synth_out_path);
  nlohmann::json out{{"path", rc.synth_out_path}, {"n_samples", samples.size()}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_train(const CommonArgs& args) {
  const mcan::RunConfig rc = mcan::load_config(args.config_path, args.overrides);
  const mcan::TrainOutcome outcome = mcan::train_run(rc);
  std::cout << outcome.best.dump(2) << "\n";
  return 0;
}

int run_eval(const std::string& run_dir, const std::string& data_path) {
  namespace fs = std::filesystem;
  const mcan::RunConfig rc = mcan::load_config((fs::path(run_dir) / "config.json").string());
  mcan::ParamRegistry reg(rc.train.seed);
  mcan::register_model(reg, rc.model);
  mcan::assign_checkpoint(reg, mcan::load_checkpoint((fs::path(run_dir) / "best.bin").string()));

  std::size_t best_epoch = 0;
  {
    std::ifstream is(fs::path(run_dir) / "best.json");
    if (is) {
      nlohmann::json best = nlohmann::json::parse(is, nullptr, false);
      if (!best.is_discarded() && best.contains("best_epoch"))
        best_epoch = best["best_epoch"].get<std::size_t>();
    }
  }

  nlohmann::json out;
  if (!data_path.empty()) {
    const auto ev = mcan::evaluate(mcan::load_dataset(data_path), reg, rc.model);
    out["custom"] = mcan::metrics_record(best_epoch, "custom", ev);
  } else {
    if (rc.data.train_path.empty() && rc.data.val_path.empty())
      throw mcan::ConfigError("eval: run config names no datasets; pass --data");
    const auto val_set = rc.data.val_path.empty() ? mcan::load_dataset(rc.data.train_path)
                                                  : mcan::load_dataset(rc.data.val_path);
    out["val"] = mcan::metrics_record(best_epoch, "val", mcan::evaluate(val_set, reg, rc.model));
    if (!rc.data.test_path.empty()) {
      const auto test_set = mcan::load_dataset(rc.data.test_path);
      out["test"] =
          mcan::metrics_record(best_epoch, "test", mcan::evaluate(test_set, reg, rc.model));
    }
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_gradcheck(const CommonArgs& args) {
  const mcan::RunConfig rc = mcan::load_config(args.config_path, args.overrides);
  mcan::SynthConfig sc = rc.synth;
  sc.n_samples = 2;
  const auto samples = mcan::generate_synthetic(sc);
  const auto batches = mcan::make_batches(samples, 2, rc.train.seed, false);

  mcan::ParamRegistry reg(rc.train.seed);
  mcan::register_model(reg, rc.model);
  const mcan::GradcheckReport report = mcan::gradcheck(batches.at(0), reg, rc.model);

  for (const mcan::BlockCheck& b : report.blocks)
    std::printf("%-34s max_abs %.3e  rel %.3e\n", b.name.c_str(), b.max_abs_diff, b.rel_error);
  const bool ok = report.passed(1e-4);
  std::printf("worst rel %.3e  tolerance 1.0e-04  %s\n", report.worst_rel, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int run_decompose(const std::string& matrix_path, std::size_t k) {
  std::ifstream is(matrix_path);
  if (!is) throw mcan::DataError("decompose: cannot open " + matrix_path);
  nlohmann::json doc = nlohmann::json::parse(is, nullptr, false);
  if (doc.is_discarded()) throw mcan::DataError("decompose: invalid JSON in " + matrix_path);
  const nlohmann::json& rows = doc.is_object() && doc.contains("matrix") ? doc["matrix"] : doc;
  const mcan::Tensor f = mcan::detail::matrix_from_json(rows, "matrix", 1);

  mcan::ModelConfig cfg;
  cfg.k = k;
  const std::size_t h = std::min(f.rows(), f.cols());
  mcan::SplitResult split = mcan::split_aligned_conflict(f, mcan::effective_k(cfg, h));

  auto to_rows = [](const mcan::Tensor& t) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
      out.push_back(row);
    }
    return out;
  };
  auto fro = [](const mcan::Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
  };
  nlohmann::json spectrum = nlohmann::json::array();
  for (std::size_t j = 0; j < split.spectrum.cols(); ++j) spectrum.push_back(split.spectrum.at(0, j));

  nlohmann::json out{{"k_used", split.k_used},
                     {"spectrum", spectrum},
                     {"aligned_norm", fro(split.aligned)},
                     {"conflict_norm", fro(split.conflict)},
                     {"aligned", to_rows(split.aligned)},
                     {"conflict", to_rows(split.conflict)}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_ablate(const CommonArgs& args) {
  const mcan::RunConfig rc = mcan::load_config(args.config_path, args.overrides);
  const nlohmann::json report = mcan::run_ablation(rc);
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal sentiment toolkit: conflict-aware fusion network"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, gradcheck_args, ablate_args;
  std::string eval_run_dir, eval_data_path, decompose_matrix;
  std::size_t decompose_k = 0;

  CLI::App* sc_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(sc_synth, synth_args);
  CLI::App* sc_train = app.add_subcommand("train", "train a model into a run directory");
  add_common(sc_train, train_args);
  CLI::App* sc_eval = app.add_subcommand("eval", "score a finished run directory");
  sc_eval->add_option("--run", eval_run_dir, "run directory")->required();
  sc_eval->add_option("--data", eval_data_path, "score this dataset instead of the run's splits");
  CLI::App* sc_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check on a 2-sample batch");
  add_common(sc_gradcheck, gradcheck_args);
  CLI::App* sc_decompose =
      app.add_subcommand("decompose", "split one matrix into aligned and conflict parts");
  sc_decompose->add_option("--matrix", decompose_matrix, "JSON file: 2D array or {\"matrix\": ...}")
      ->required();
  sc_decompose->add_option("--k", decompose_k, "truncation rank (0 = automatic)");
  CLI::App* sc_ablate = app.add_subcommand("ablate", "run the ablation matrix");
  add_common(sc_ablate, ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sc_synth->parsed()) return run_synth(synth_args);
    if (sc_train->parsed()) return run_train(train_args);
    if (sc_eval->parsed()) return run_eval(eval_run_dir, eval_data_path);
    if (sc_gradcheck->parsed()) return run_gradcheck(gradcheck_args);
    if (sc_decompose->parsed()) return run_decompose(decompose_matrix, decompose_k);
    if (sc_ablate->parsed()) return run_ablate(ablate_args);
  } catch (const mcan::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mcan::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
