#include "dglight/adam.hpp"

#include "dglight/error.hpp"

#include <cmath>

namespace dglight {

AdamState AdamState::zeros_like(const Tensor& param) {
  AdamState s;
  s.first_moment = Tensor::Zero(param.rows(), param.cols());
  s.second_moment = Tensor::Zero(param.rows(), param.cols());
  return s;
}

std::pair<Tensor, AdamState> adam_step(const Tensor& params, const Tensor& grads, AdamState state,
                                       double lr) {
  if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
  if (shape_of(params) != shape_of(grads) || shape_of(params) != shape_of(state.first_moment) ||
      shape_of(params) != shape_of(state.second_moment)) {
    throw Error("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) throw Error("adam_step: non-finite gradient");

  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const auto m_hat = state.first_moment.array() / c1;
  const auto v_hat = state.second_moment.array() / c2;
  Tensor updated = params.array() - lr * m_hat / (v_hat.sqrt() + state.eps);
  return {std::move(updated), std::move(state)};
}

void AdamOptimizer::step(ParamMap& params, const ParamMap& grads) {
  for (auto& [name, value] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto it = states_.find(name);
    if (it == states_.end()) it = states_.emplace(name, AdamState::zeros_like(value)).first;
    auto [next, state] = adam_step(value, g->second, std::move(it->second), lr_);
    value = std::move(next);
    it->second = std::move(state);
  }
}

}  // namespace dglight
