#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "mcan/adam.hpp"
#include "mcan/gradcheck.hpp"
#include "mcan/model.hpp"
#include "mcan/synth.hpp"
#include "mcan/training.hpp"
#include "support/oracles.hpp"

using namespace mcan;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d = 6;
  cfg.d_t_raw = 5;
  cfg.d_v_raw = 4;
  cfg.d_a_raw = 4;
  cfg.micro_layers = 1;
  cfg.macro_layers = 1;
  cfg.heads = 2;
  cfg.d_k = 3;
  cfg.ffn_hidden = 6;
  cfg.k = 2;
  return cfg;
}

SynthConfig matching_synth(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_samples = n;
  sc.seed = seed;
  sc.d_t_raw = cfg.d_t_raw;
  sc.d_v_raw = cfg.d_v_raw;
  sc.d_a_raw = cfg.d_a_raw;
  sc.len_t_min = 2;
  sc.len_t_max = 5;
  sc.len_v_min = 2;
  sc.len_v_max = 5;
  sc.len_a_min = 2;
  sc.len_a_max = 5;
  return sc;
}

}  // namespace

TEST_CASE("forward trace exposes every named intermediate") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(17);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 3, 2));
  auto batches = make_batches(samples, 3, 1, false);
  ForwardResult fwd = forward_batch(batches[0], reg, cfg);
  REQUIRE(fwd.traces.size() == 3);

  const std::set<std::string> base = {"f_t",           "f_v",           "f_a",
                                      "f_ta",          "f_tv",          "f_ta_aligned",
                                      "f_ta_conflict", "f_tv_aligned",  "f_tv_conflict",
                                      "z_c_aligned",   "z_c_conflict",  "y_main"};
  const std::set<std::string> branch = {"f_t_prime",  "f_v_prime", "f_a_prime",
                                        "f_tv_dprime", "f_ta_dprime", "y_t",
                                        "y_v",         "y_a",         "y_tv",
                                        "y_ta"};
  for (const SampleTrace& tr : fwd.traces) {
    REQUIRE(tr.values.size() == 22);
    for (const auto& key : base) REQUIRE(tr.values.count(key) == 1);
    for (const auto& key : branch) REQUIRE(tr.values.count(key) == 1);
    REQUIRE_THROWS_AS(tr.at("no_such_key"), ValueError);
  }

  SECTION("without the conflict branch only the base keys appear") {
    ModelConfig plain = tiny_model();
    plain.use_cmb = false;
    ParamRegistry reg2(17);
    register_model(reg2, plain);
    ForwardResult fwd2 = forward_batch(batches[0], reg2, plain);
    for (const SampleTrace& tr : fwd2.traces) {
      REQUIRE(tr.values.size() == 12);
      for (const auto& key : base) REQUIRE(tr.values.count(key) == 1);
    }
    REQUIRE(fwd2.oc_micro.item() == 0.0);
    REQUIRE(fwd2.diff_macro.item() == 0.0);
  }
}

TEST_CASE("trace shapes follow the stream lengths") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(19);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 4, 3));
  auto batches = make_batches(samples, 4, 1, false);
  const BatchSample& s = batches[0][0];
  SampleTrace tr = forward_sample(s, reg, cfg);

  const std::size_t nt = s.mask_t.size(), nv = s.mask_v.size(), na = s.mask_a.size();
  REQUIRE(tr.at("f_t").rows() == nt);
  REQUIRE(tr.at("f_ta").rows() == nt + na);
  REQUIRE(tr.at("f_tv").rows() == nt + nv);
  REQUIRE(tr.at("z_c_aligned").rows() == 2 * nt + na + nv);
  REQUIRE(tr.at("y_main").rows() == 1);
  REQUIRE(tr.at("y_main").cols() == 1);
  REQUIRE(tr.at("f_t_prime").rows() == 1);
  REQUIRE(tr.at("f_t_prime").cols() == cfg.d);
  REQUIRE(tr.mask_ta.size() == nt + na);
  REQUIRE(tr.mask_zc.size() == 2 * nt + na + nv);
}

TEST_CASE("forward pass is deterministic") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(23);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 4, 5));
  auto batches = make_batches(samples, 4, 7);
  ForwardResult a = forward_batch(batches[0], reg, cfg);
  ForwardResult b = forward_batch(batches[0], reg, cfg);
  REQUIRE(a.total.item() == b.total.item());
  REQUIRE(a.traces[2].at("y_main").item() == b.traces[2].at("y_main").item());
}

TEST_CASE("padding never changes a sample's outputs") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(29);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 12, 11));

  // The same samples once inside padded batches, once alone (batch of one
  // pads nothing: every max length is the sample's own).
  auto padded = make_batches(samples, 4, 13);
  auto solo = make_batches(samples, 1, 13, false);

  std::map<std::string, double> solo_pred;
  double solo_total_mean = 0.0;
  for (const Batch& b : solo) {
    ForwardResult fwd = forward_batch(b, reg, cfg);
    solo_pred[b[0].id] = fwd.traces[0].at("y_main").item();
    solo_total_mean += fwd.total.item();
  }
  solo_total_mean /= double(samples.size());

  double batched_total_mean = 0.0;
  std::size_t batched_samples = 0;
  for (const Batch& b : padded) {
    ForwardResult fwd = forward_batch(b, reg, cfg);
    batched_total_mean += fwd.total.item() * double(b.size());
    batched_samples += b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
      INFO("sample " << b[i].id);
      REQUIRE(std::fabs(fwd.traces[i].at("y_main").item() - solo_pred[b[i].id]) < 1e-10);
    }
  }
  REQUIRE(batched_samples == samples.size());
  batched_total_mean /= double(samples.size());
  REQUIRE(std::fabs(batched_total_mean - solo_total_mean) < 1e-8);
}

TEST_CASE("samples in a batch cannot influence each other") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(31);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 2, 17));
  auto batches = make_batches(samples, 2, 1, false);

  Batch original = batches[0];
  ForwardResult before = forward_batch(original, reg, cfg);

  Batch tampered = original;
  for (auto& v : tampered[1].text.mutable_data()) v += 0.5;
  ForwardResult after = forward_batch(tampered, reg, cfg);

  REQUIRE(after.traces[0].at("y_main").item() == before.traces[0].at("y_main").item());
  REQUIRE(after.traces[1].at("y_main").item() != before.traces[1].at("y_main").item());
}

TEST_CASE("zero loss weights reproduce the branchless model bit for bit") {
  ModelConfig with_branch = tiny_model();
  with_branch.alpha = 0.0;
  with_branch.beta = 0.0;
  ModelConfig without = tiny_model();
  without.use_cmb = false;

  ParamRegistry reg_a(37), reg_b(37);
  register_model(reg_a, with_branch);
  register_model(reg_b, without);

  auto samples = generate_synthetic(matching_synth(with_branch, 8, 19));
  Adam opt_a, opt_b;
  for (int epoch = 0; epoch < 2; ++epoch) {
    auto batches = make_batches(samples, 4, 100 + epoch);
    for (const Batch& b : batches) {
      reg_a.zero_grads();
      ForwardResult fa = forward_batch(b, reg_a, with_branch);
      backward(fa.total);
      reg_a.clip_grad_norm(1.0);
      opt_a.step(reg_a);

      reg_b.zero_grads();
      ForwardResult fb = forward_batch(b, reg_b, without);
      backward(fb.total);
      reg_b.clip_grad_norm(1.0);
      opt_b.step(reg_b);

      REQUIRE(fa.main.item() == fb.main.item());
      REQUIRE(fa.total.item() == fb.total.item());
    }
  }
  // Every shared parameter took the identical trajectory.
  for (const auto& [name, tb] : reg_b.items())
    REQUIRE(reg_a.get(name).data() == tb.data());
}

TEST_CASE("analytic gradients agree with finite differences end to end") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(41);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 2, 23));
  auto batches = make_batches(samples, 2, 1, false);

  GradcheckReport report = gradcheck(batches[0], reg, cfg);
  REQUIRE(report.blocks.size() == reg.size());
  CAPTURE(report.worst_rel);
  REQUIRE(report.passed(1e-4));

  SECTION("a corrupted backward pass is detected") {
    ParamRegistry reg2(41);
    register_model(reg2, cfg);
    GradcheckReport bad = gradcheck(batches[0], reg2, cfg, 1e-5, 1e-2, [](ParamRegistry& r) {
      Tensor w = r.get("head.main.w1");
      if (w.has_grad()) w.impl()->grad[0] += 0.123;
    });
    REQUIRE_FALSE(bad.passed(1e-4));
  }
}

TEST_CASE("conflict norm never grows as the kept rank rises") {
  ModelConfig cfg = tiny_model();
  ParamRegistry reg(43);
  register_model(reg, cfg);
  auto samples = generate_synthetic(matching_synth(cfg, 3, 29));
  auto batches = make_batches(samples, 1, 1, false);

  auto conflict_norm = [&](std::size_t k) {
    ModelConfig c = cfg;
    c.k = k;
    ForwardResult fwd = forward_batch(batches[0], reg, c);
    double s = 0.0;
    for (double v : fwd.traces[0].at("f_ta_conflict").data()) s += v * v;
    return std::sqrt(s);
  };
  double prev = conflict_norm(1);
  for (std::size_t k = 2; k <= 5; ++k) {
    const double cur = conflict_norm(k);
    REQUIRE(cur <= prev * (1.0 + 1e-12) + 1e-12);
    prev = cur;
  }
}
