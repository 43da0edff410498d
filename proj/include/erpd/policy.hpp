#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>

#include "erpd/rng.hpp"

namespace erpd {

using Token = int;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelDims {
  int feat = 0;
  int hidden = 0;
  int vocab = 0;

  // w1 (hidden x feat) + b1 + w2 (vocab x hidden) + b2
  Eigen::Index param_count() const {
    return Eigen::Index(hidden) * feat + hidden + Eigen::Index(vocab) * hidden + vocab;
  }
  bool operator==(const ModelDims&) const = default;
};

/// Parameters of the one-hidden-layer tanh softmax policy
///
///   logits(s) = w2 * tanh(w1 * s + b1) + b2
///
/// Storage is a single flat vector laid out as w1 (row-major), b1,
/// w2 (row-major), b2. Gradients use the same layout, so a gradient vector
/// can be added to `flat()` directly and finite-difference probes index the
/// same coordinates as checkpoints.
class PolicyParams {
 public:
  using MatrixMap = Eigen::Map<RowMajorMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  PolicyParams() = default;
  explicit PolicyParams(ModelDims dims);
  PolicyParams(ModelDims dims, Vector flat);

  static PolicyParams zeros(ModelDims dims) { return PolicyParams(dims); }
  // Entries drawn i.i.d. from N(0, scale^2 / fan_in) per layer.
  static PolicyParams random(ModelDims dims, Rng& rng, double scale = 1.0);

  const ModelDims& dims() const noexcept { return dims_; }
  const Vector& flat() const noexcept { return flat_; }
  Vector& flat() noexcept { return flat_; }

  ConstMatrixMap w1() const;
  ConstVectorMap b1() const;
  ConstMatrixMap w2() const;
  ConstVectorMap b2() const;
  MatrixMap w1();
  VectorMap b1();
  MatrixMap w2();
  VectorMap b2();

  bool all_finite() const { return flat_.allFinite(); }

 private:
  Eigen::Index b1_offset() const { return Eigen::Index(dims_.hidden) * dims_.feat; }
  Eigen::Index w2_offset() const { return b1_offset() + dims_.hidden; }
  Eigen::Index b2_offset() const { return w2_offset() + Eigen::Index(dims_.vocab) * dims_.hidden; }

  ModelDims dims_{};
  Vector flat_;
};

// Views into a flat gradient vector laid out like PolicyParams::flat().
struct GradientView {
  PolicyParams::MatrixMap w1;
  PolicyParams::VectorMap b1;
  PolicyParams::MatrixMap w2;
  PolicyParams::VectorMap b2;
};
GradientView gradient_view(const ModelDims& dims, Vector& grad);

/// Intermediate values of one forward pass, reused by the backward pass.
struct Forward {
  Vector hidden;     // tanh activations
  Vector logits;
  Vector log_probs;  // log-softmax of logits
  Vector probs;
};

Forward forward(const PolicyParams& params, const Vector& state);

Vector logits(const PolicyParams& params, const Vector& state);
double log_prob(const PolicyParams& params, const Vector& state, Token action);
double entropy(const PolicyParams& params, const Vector& state);
double entropy_of(const Forward& fwd);
Vector grad_log_prob(const PolicyParams& params, const Vector& state, Token action);

// Numerically stable log-softmax (max subtraction).
Vector log_softmax(const Vector& z);

/// Backpropagates a gradient with respect to the logits into the flat
/// parameter gradient: grad += scale * d(logits)/d(theta)^T * dlogits.
void accumulate_backprop(const PolicyParams& params, const Vector& state, const Forward& fwd,
                         const Vector& dlogits, double scale, Vector& grad);

// d log p(a) / d logits = e_a - p
Vector dlogits_log_prob(const Forward& fwd, Token action);
// d p(a) / d logits = p_a (e_a - p)
Vector dlogits_prob(const Forward& fwd, Token action);
// d H / d logits_j = -p_j (log p_j + H)
Vector dlogits_entropy(const Forward& fwd);

struct SampledToken {
  Token token = 0;
  double logprob = 0.0;  // always under temperature 1
};

/// Draws from softmax(logits / temperature). The returned log-probability is
/// the untempered one, so behaviour log-probs are comparable across
/// temperatures.
SampledToken sample_token(const PolicyParams& params, const Vector& state, double temperature, Rng& rng);
SampledToken sample_from_logits(const Vector& logits, double temperature, Rng& rng);

/// Linear value head v(s) = w . s + b (PPO teacher only).
struct ValueParams {
  Vector w;
  double b = 0.0;

  static ValueParams zeros(int feat) { return {Vector::Zero(feat), 0.0}; }
  double operator()(const Vector& state) const { return w.dot(state) + b; }
  bool all_finite() const { return w.allFinite() && std::isfinite(b); }
};

/// Immutable capture of a policy at a given update count.
class PolicySnapshot {
 public:
  PolicySnapshot(PolicyParams params, long step, std::string tag);

  const PolicyParams& params() const noexcept { return params_; }
  long step() const noexcept { return step_; }
  const std::string& tag() const noexcept { return tag_; }

 private:
  PolicyParams params_;
  long step_;
  std::string tag_;
};

PolicySnapshot snapshot(const PolicyParams& params, long step, std::string tag);
PolicyParams restore(const PolicySnapshot& snap);

/// Checkpoint document: JSON object with fields in fixed order
/// format_version, feat, hidden, vocab, step, tag, w1, b1, w2, b2.
/// Numbers are written with 17 significant digits so reading back is exact.
std::string checkpoint_to_string(const PolicySnapshot& snap);
PolicySnapshot checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::string& path, const PolicySnapshot& snap);
PolicySnapshot load_checkpoint(const std::string& path);

}  // namespace erpd
