#include "stjla/optim.hpp"

#include <cmath>

namespace stjla {

Tensor ParameterSet::add(std::string name, Tensor value) {
  for (const Parameter& p : items_) {
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  if (!value.requires_grad()) value = Tensor(value.shape(), value.data(), true);
  items_.push_back({std::move(name), value});
  return value;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const Parameter& p : items_) {
    if (p.name == name) return p.value;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

Index ParameterSet::element_count() const {
  Index n = 0;
  for (const Parameter& p : items_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() const {
  for (const Parameter& p : items_) p.value.zero_grad();
}

Tensor init_weight(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vector v(fan_in * fan_out);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Tensor init_bias(Index size) { return Tensor::zeros({size}, true); }

AdamState AdamState::for_parameters(const ParameterSet& params) {
  AdamState s;
  for (const Parameter& p : params.items()) {
    s.m.push_back(Vector::Zero(p.value.size()));
    s.v.push_back(Vector::Zero(p.value.size()));
  }
  return s;
}

void adam_step(const ParameterSet& params, AdamState& state, Scalar lr) {
  if (!(lr > 0)) throw ContractError("learning rate must be positive");
  const auto& items = params.items();
  if (state.m.size() != items.size() || state.v.size() != items.size()) {
    throw ContractError("optimizer state does not match parameter set");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor& p = items[i].value;
    if (state.m[i].size() != p.size() || state.v[i].size() != p.size()) {
      throw ContractError("optimizer state shape mismatch for '" + items[i].name + "'");
    }
    if (p.has_grad() && !p.grad().allFinite()) {
      throw NumericError("non-finite gradient in parameter '" + items[i].name + "'");
    }
  }

  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar c1 = 1 - std::pow(state.beta1, t);
  const Scalar c2 = 1 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor& p = items[i].value;
    const Vector g = p.grad();
    state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g.cwiseProduct(g);
    auto m_hat = state.m[i].array() / c1;
    auto v_hat = state.v[i].array() / c2;
    p.mutable_leaf_data().array() -= lr * m_hat / (v_hat.sqrt() + state.eps);
  }
}

}  // namespace stjla
