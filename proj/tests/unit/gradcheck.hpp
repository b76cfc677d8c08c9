#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advrem/tensor.hpp"

namespace advrem::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), true);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Worst relative error between analytic and central-difference gradients,
// |a - n| / max(1, |a|, |n|) over every element of every input.
inline double gradient_error(const std::function<Tensor(Tape*)>& loss_fn, std::vector<Tensor> inputs,
                             double eps = 1e-5) {
  for (auto& t : inputs) t.clear_grad();
  Tape tape;
  Tensor loss = loss_fn(&tape);
  tape.backward(loss);
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = loss_fn(nullptr).item();
      t[i] = saved - eps;
      const double down = loss_fn(nullptr).item();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace advrem::testing
