#pragma once

#include "dglight/tensor.hpp"

#include <cstdint>
#include <utility>

namespace dglight {

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros_like(const Tensor& param);
};

// One bias-corrected Adam update. Throws on shape mismatch, non-finite
// gradients or a non-positive learning rate.
std::pair<Tensor, AdamState> adam_step(const Tensor& params, const Tensor& grads, AdamState state,
                                       double lr);

// Adam over a named parameter set; moments are created lazily per name.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}

  void step(ParamMap& params, const ParamMap& grads);

  double lr() const { return lr_; }
  const std::map<std::string, AdamState>& states() const { return states_; }

 private:
  double lr_;
  std::map<std::string, AdamState> states_;
};

}  // namespace dglight
