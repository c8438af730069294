#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>

#include "ctfr/tensor.hpp"

namespace ctfr {

// Compares reverse-mode gradients against central finite differences and
// returns the worst relative error over all parameter elements.
//
// `loss_builder` must rebuild the scalar loss from the parameters' current
// values on every call — it is re-evaluated twice per element with that
// element nudged by ±epsilon (under NoGradGuard, so the probes build no
// graph). Per element the error is |fd - an| / max(|fd|, |an|); elements
// where max(|fd|, |an|) <= 1e-8 contribute zero, since both sides agree the
// derivative is numerically nil and the ratio would only amplify roundoff.
inline double finite_diff_check(const std::function<Tensor()>& loss_builder,
                                std::span<const Tensor> params, double epsilon) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  Tensor loss = loss_builder();
  auto analytic = grad(loss, params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p];
    auto& data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double f_plus, f_minus;
      {
        NoGradGuard ng;
        data[i] = saved + epsilon;
        f_plus = loss_builder().item();
        data[i] = saved - epsilon;
        f_minus = loss_builder().item();
      }
      data[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * epsilon);
      const double an = analytic[p][i];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom > 1e-8) worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace ctfr
