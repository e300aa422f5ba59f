#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "mde/common.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

namespace mde {

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  // 0 checks every element; otherwise evenly spaced indices per parameter.
  int64_t max_elements_per_param = 0;
};

struct GradCheckWorst {
  std::string name;
  int64_t index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  GradCheckWorst worst;
};

// Compares tape gradients against central finite differences in double
// precision. `build` must deterministically construct a scalar loss from a
// fresh tape and a parameter map: Var build(Tape<double>&, const ParamMap&).
// Relative error uses a unit floor so near-zero entries are compared
// absolutely.
template <typename Build>
GradCheckReport grad_check(const std::map<std::string, Tensor<double>>& params, Build&& build,
                           GradCheckOptions opt = {}) {
  MDE_CHECK(opt.step > 0.0, ParameterError, "grad_check: step must be positive");
  MDE_CHECK(!params.empty(), ParameterError, "grad_check: no parameters to check");

  std::map<std::string, Tensor<double>> analytic;
  {
    Tape<double> tape;
    tape.check_finite = true;
    Var loss = build(tape, params);
    MDE_CHECK(tape.value(loss).size() == 1, ContractError, "grad_check: loss must be scalar");
    tape.backward(loss);
    analytic = tape.named_grads();
    for (const auto& [name, value] : params) {
      (void)value;
      MDE_CHECK(analytic.count(name) != 0, ContractError, "grad_check: parameter '", name,
                "' was never bound by the loss builder");
    }
  }

  auto eval = [&](const std::map<std::string, Tensor<double>>& p) {
    Tape<double> tape;
    Var loss = build(tape, p);
    return tape.value(loss)[0];
  };

  GradCheckReport report;
  std::map<std::string, Tensor<double>> work = params;
  for (const auto& [name, base] : params) {
    const Tensor<double>& grad = analytic.at(name);
    const int64_t n = base.size();
    int64_t count = n;
    int64_t stride = 1;
    if (opt.max_elements_per_param > 0 && n > opt.max_elements_per_param) {
      count = opt.max_elements_per_param;
      stride = n / count;
    }
    Tensor<double>& slot = work.at(name);
    for (int64_t j = 0; j < count; ++j) {
      const int64_t i = j * stride;
      const double saved = slot[i];
      slot[i] = saved + opt.step;
      const double up = eval(work);
      slot[i] = saved - opt.step;
      const double down = eval(work);
      slot[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = grad[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = GradCheckWorst{name, i, a, numeric};
      }
    }
  }
  report.pass = report.max_rel_err < opt.tol;
  return report;
}

}  // namespace mde
