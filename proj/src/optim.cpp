#include "vidseq/optim.hpp"

#include <cmath>
#include <numbers>

namespace vidseq {

double cosine_lr(double base, std::int64_t step, std::int64_t horizon) {
  if (horizon <= 0 || step >= horizon) return 0.0;
  if (step <= 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(horizon);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  if (options_.lr < 0 || options_.beta1 < 0 || options_.beta1 >= 1 || options_.beta2 < 0 ||
      options_.beta2 >= 1 || options_.eps <= 0 || options_.weight_decay < 0) {
    throw OptimizerError("invalid AdamW hyper-parameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw OptimizerError("parameter " + std::to_string(i) + " has no gradient");
    }
  }
  const double lr = lr_for_next_step();
  const double t = static_cast<double>(steps_ + 1);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      const double update = mhat / (std::sqrt(vhat) + options_.eps) +
                            options_.weight_decay * static_cast<double>(w[j]);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * update);
    }
  }
  ++steps_;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace vidseq
