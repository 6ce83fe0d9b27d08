#pragma once

#include <cstdint>
#include <vector>

#include "vidseq/tensor.hpp"

namespace vidseq {

struct AdamWOptions {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t horizon = 1000;  // cosine schedule reaches 0 here
};

// base * 0.5 * (1 + cos(pi * step / horizon)), clamped to 0 past the horizon.
double cosine_lr(double base, std::int64_t step, std::int64_t horizon);

// AdamW with bias correction and decoupled weight decay. The s-th call to
// step() (0-based) uses cosine_lr(lr, s, horizon).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWOptions options);

  void step();
  void zero_grad();

  double lr_for_next_step() const { return cosine_lr(options_.lr, steps_, options_.horizon); }
  std::int64_t steps_taken() const { return steps_; }
  void set_steps_taken(std::int64_t s) { steps_ = s; }
  const AdamWOptions& options() const { return options_; }

  std::size_t size() const { return params_.size(); }
  std::vector<T>& first_moment(std::size_t i) { return m_.at(i); }
  std::vector<T>& second_moment(std::size_t i) { return v_.at(i); }
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor<T>> params_;
  AdamWOptions options_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t steps_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace vidseq
