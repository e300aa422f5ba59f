#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mde/common.hpp"
#include "mde/models.hpp"
#include "mde/tensor.hpp"

namespace mde {

// lr0·(1 - step/total)^p, the polynomial annealing family.
inline double lr_schedule(int64_t step, int64_t total, double lr0, double p) {
  MDE_CHECK(total >= 1, ParameterError, "lr_schedule: total must be >= 1");
  MDE_CHECK(step >= 0 && step <= total, ParameterError, "lr_schedule: step ", step,
            " outside [0, ", total, "]");
  MDE_CHECK(lr0 > 0.0, ParameterError, "lr_schedule: base rate must be positive");
  MDE_CHECK(p >= 0.0, ParameterError, "lr_schedule: power must be non-negative");
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return lr0 * std::pow(frac, p);
}

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    MDE_CHECK(beta1 >= 0.0 && beta1 < 1.0, ConfigError, "adam: beta1 must be in [0,1)");
    MDE_CHECK(beta2 >= 0.0 && beta2 < 1.0, ConfigError, "adam: beta2 must be in [0,1)");
    MDE_CHECK(eps > 0.0, ConfigError, "adam: eps must be positive");
  }
};

// First/second moment accumulators, keyed like the parameters they track.
template <typename S>
struct AdamState {
  std::map<std::string, Tensor<S>> m;
  std::map<std::string, Tensor<S>> v;
  int64_t step = 0;  // number of updates applied so far
};

// One bias-corrected ADAM update over a named parameter set. Parameters
// without a gradient entry are an error; zero gradients still decay moments.
template <typename S>
void adam_step(AdamState<S>& st, const ParamRefs<S>& params,
               const std::map<std::string, Tensor<S>>& grads, double lr, const AdamConfig& cfg) {
  cfg.validate();
  MDE_CHECK(lr >= 0.0, ParameterError, "adam_step: negative learning rate");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));

  for (const auto& [name, tensor] : params) {
    auto git = grads.find(name);
    MDE_CHECK(git != grads.end(), ContractError, "adam_step: no gradient for parameter '", name,
              "'");
    const Tensor<S>& g = git->second;
    MDE_CHECK(g.shape == tensor->shape, DimensionError, "adam_step: gradient shape ",
              shape_str(g.shape), " does not match parameter '", name, "' ",
              shape_str(tensor->shape));

    auto mit = st.m.find(name);
    if (mit == st.m.end()) {
      mit = st.m.emplace(name, Tensor<S>::zeros(tensor->shape)).first;
      st.v.emplace(name, Tensor<S>::zeros(tensor->shape));
    }
    Tensor<S>& m = mit->second;
    Tensor<S>& v = st.v.at(name);
    MDE_CHECK(m.shape == tensor->shape, ContractError, "adam_step: stale moment shape for '", name,
              "'");

    Tensor<S>& w = *tensor;
    for (int64_t i = 0; i < w.size(); ++i) {
      const S gi = g[i];
      m[i] = static_cast<S>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
      v[i] = static_cast<S>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      w[i] = static_cast<S>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace mde
