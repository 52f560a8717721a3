#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "salnet/autodiff.hpp"
#include "salnet/core.hpp"

namespace salnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  long step_count() const { return t_; }

  friend void adam_step(ParamStore& store, AdamState& state, const AdamConfig& cfg);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments_;
  long t_ = 0;
};

// Standard Adam update with bias correction; consumes and zeroes adjoints.
inline void adam_step(ParamStore& store, AdamState& state, const AdamConfig& cfg) {
  state.t_ += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t_));
  for (auto& [name, p] : store.all()) {
    auto& mom = state.moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(p.data.size(), 0.0);
      mom.v.assign(p.data.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double g = p.grad[i];
      if (!std::isfinite(g)) throw numeric_error("non-finite gradient in parameter " + name);
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p.grad[i] = 0.0;
    }
  }
  store.touch();
}

}  // namespace salnet
