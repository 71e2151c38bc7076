#include "balign/optim.hpp"

#include <cmath>

#include "balign/errors.hpp"

namespace balign {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const Var& p : params_) {
    if (!p.requires_grad()) throw UsageError("Adam given a parameter that does not require gradients");
    m_.emplace_back(Tensor::zeros(p.shape()));
    v_.emplace_back(Tensor::zeros(p.shape()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.mutable_value().data();
    const auto g = p.grad().data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      w[i] -= opt_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

}  // namespace balign
