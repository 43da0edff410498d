#pragma once

#include <string_view>

#include "erpd/policy.hpp"

namespace erpd {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

/// First-order optimizer over a flat parameter vector. `ascend` moves the
/// parameters along +grad; callers minimising pass the negated gradient.
/// A zero gradient leaves the parameters bit-identical.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void ascend(Vector& params, const Vector& grad);
  void reset();

  double lr() const noexcept { return lr_; }
  long steps() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Vector m_, v_;
};

}  // namespace erpd
