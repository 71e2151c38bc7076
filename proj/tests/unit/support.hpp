#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "balign/autograd.hpp"
#include "balign/nn.hpp"
#include "balign/tensor.hpp"

namespace testutil {

inline balign::Tensor random_tensor(const balign::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  balign::Tensor t(shape);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline double max_abs_diff(const balign::Tensor& a, const balign::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Max over every input element of |analytic - numeric| / max(|analytic|, |numeric|, floor).
// The floor keeps round-off on near-zero gradients from dominating.
inline double gradient_check(const std::function<balign::Var(const std::vector<balign::Var>&)>& f,
                             std::vector<balign::Tensor> inputs, double h = 1e-5, double floor = 1e-3) {
  std::vector<balign::Var> vars;
  for (auto& t : inputs) vars.push_back(balign::parameter(t));
  balign::backward(f(vars));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const balign::Tensor analytic = vars[k].has_grad() ? vars[k].grad() : balign::Tensor(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<balign::Var> cs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          balign::Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          cs.push_back(balign::constant(t));
        }
        return f(cs).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Scalar probe: weighted sum with fixed pseudo-random weights, so every output
// element contributes a distinct amount.
inline balign::Var probe(const balign::Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return balign::sum(balign::mul(y, balign::constant(random_tensor(y.shape(), rng))));
}

// Central differences on every scalar of every parameter in `ps`. Biases are
// jittered first: at zero bias, all-zero patches sit exactly on the kink.
inline double parameter_gradient_check(balign::nn::ParamStore& ps, const std::function<balign::Var()>& loss, double h = 1e-5,
                                       double floor = 1e-3) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& [name, v] : ps.entries())
    if (name.ends_with(".b")) {
      balign::Var p = v;
      for (auto& e : p.mutable_value().storage()) e += u(rng);
    }
  ps.zero_grad();
  balign::backward(loss());
  double worst = 0.0;
  for (auto& [name, v] : ps.entries()) {
    balign::Var p = v;
    const balign::Tensor analytic = p.has_grad() ? p.grad() : balign::Tensor(p.shape());
    for (std::size_t i = 0; i < p.value().size(); ++i) {
      const double saved = p.value()[i];
      p.mutable_value()[i] = saved + h;
      const double up = loss().value()[0];
      p.mutable_value()[i] = saved - h;
      const double down = loss().value()[0];
      p.mutable_value()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testutil
