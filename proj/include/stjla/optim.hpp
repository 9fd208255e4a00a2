#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stjla/tensor.hpp"

namespace stjla {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered collection of named learnable leaves.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value);
  const std::vector<Parameter>& items() const { return items_; }
  const Tensor& get(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  Index element_count() const;
  void zero_grad() const;

 private:
  std::vector<Parameter> items_;
};

/// Weight init: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = rows.
Tensor init_weight(Index fan_in, Index fan_out, std::mt19937_64& rng);
Tensor init_bias(Index size);

struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  std::int64_t step = 0;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;

  static AdamState for_parameters(const ParameterSet& params);
};

/// One bias-corrected Adam update using the gradients stored on `params`.
/// Parameters that received no gradient are treated as having a zero gradient.
/// Throws NumericError naming the parameter if any gradient is non-finite;
/// in that case nothing is modified.
void adam_step(const ParameterSet& params, AdamState& state, Scalar lr);

}  // namespace stjla
