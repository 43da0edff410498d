#include "erpd/optim.hpp"

#include <fmt/format.h>

#include <cmath>

#include "erpd/errors.hpp"

namespace erpd {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError(fmt::format("unknown optimizer '{}'", name));
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError(fmt::format("learning rate must be positive, got {}", lr));
}

void Optimizer::reset() {
  t_ = 0;
  m_.resize(0);
  v_.resize(0);
}

void Optimizer::ascend(Vector& params, const Vector& grad) {
  ++t_;
  if (kind_ == OptimizerKind::sgd) {
    params += lr_ * grad;
    return;
  }
  if (m_.size() != grad.size()) {
    m_ = Vector::Zero(grad.size());
    v_ = Vector::Zero(grad.size());
  }
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  params.array() += lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace erpd
