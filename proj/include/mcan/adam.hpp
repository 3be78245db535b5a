// Adam with bias correction and two learning-rate groups: text-encoder
// parameters step at their own rate, everything else at the base rate.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcan/common.hpp"
#include "mcan/params.hpp"

namespace mcan {

struct AdamConfig {
  double lr_main = 1e-4;
  double lr_text = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update over every registered parameter; missing gradients count as
  // zero, which leaves a freshly initialized moment pair untouched.
  void step(ParamRegistry& reg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& [name, p] : reg.items()) {
      Tensor param = p;
      auto& slot = state_[name];
      if (slot.m.empty()) {
        slot.m.assign(param.numel(), 0.0);
        slot.v.assign(param.numel(), 0.0);
      } else if (slot.m.size() != param.numel()) {
        throw ShapeError("adam: state size mismatch for " + name);
      }
      const double lr = name.rfind("encoder.text.", 0) == 0 ? cfg_.lr_text : cfg_.lr_main;
      const bool has_grad = param.has_grad();
      auto& data = param.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = has_grad ? param.grad()[i] : 0.0;
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (!std::isfinite(data[i])) throw NumericError("adam: non-finite parameter in " + name);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace mcan
