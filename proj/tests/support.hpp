#pragma once

// Test-only helpers: finite-difference oracle, naive reference evaluation and
// random instance generators. Nothing here calls the gradient code under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "erpd/env.hpp"
#include "erpd/losses.hpp"
#include "erpd/policy.hpp"

namespace erpd::testing {

// Central differences over every coordinate of `x`.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps coordinates
// whose true derivative is ~0 from dividing rounding noise by ~0.
inline double max_relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Triple-loop evaluation of w2 * tanh(w1 * s + b1) + b2, reading the flat
// layout directly.
inline std::vector<double> naive_logits(const PolicyParams& p, const Vector& s) {
  const auto& d = p.dims();
  const double* x = p.flat().data();
  const double* w1 = x;
  const double* b1 = w1 + d.hidden * d.feat;
  const double* w2 = b1 + d.hidden;
  const double* b2 = w2 + d.vocab * d.hidden;
  std::vector<double> h(std::size_t(d.hidden));
  for (int i = 0; i < d.hidden; ++i) {
    double acc = b1[i];
    for (int j = 0; j < d.feat; ++j) acc += w1[i * d.feat + j] * s[j];
    h[std::size_t(i)] = std::tanh(acc);
  }
  std::vector<double> z(std::size_t(d.vocab));
  for (int a = 0; a < d.vocab; ++a) {
    double acc = b2[a];
    for (int i = 0; i < d.hidden; ++i) acc += w2[a * d.hidden + i] * h[std::size_t(i)];
    z[std::size_t(a)] = acc;
  }
  return z;
}

// Small environment used by gradient tests: few parameters, short answers.
inline EnvSpec small_env(EnvKind kind = EnvKind::reverse_copy) {
  EnvSpec env;
  env.kind = kind;
  env.prompt_len = 2;
  env.vocab = 5;
  env.eos_token = 4;
  env.max_gen_len = 4;
  env.answer_base = 3;
  env.history = 2;
  env.validate();
  return env;
}

inline ModelDims dims_for(const EnvSpec& env, int hidden = 5) { return {env.feature_size(), hidden, env.vocab}; }

inline PolicyParams random_params(const ModelDims& dims, Rng& rng, double scale = 1.0) {
  PolicyParams p = PolicyParams::random(dims, rng, scale);
  std::normal_distribution<double> n(0.0, 0.3 * scale);
  for (Eigen::Index i = 0; i < p.b1().size(); ++i) p.b1()[i] = n(rng);
  for (Eigen::Index i = 0; i < p.b2().size(); ++i) p.b2()[i] = n(rng);
  return p;
}

inline PolicyParams perturbed(const PolicyParams& p, Rng& rng, double sigma) {
  PolicyParams q = p;
  std::normal_distribution<double> n(0.0, sigma);
  for (Eigen::Index i = 0; i < q.flat().size(); ++i) q.flat()[i] += n(rng);
  return q;
}

// One randomized gradient-check instance: a batch collected by `collector`
// and a nearby evaluation point `policy` so ratios differ from 1.
struct Instance {
  EnvSpec env;
  PolicyParams collector;
  PolicyParams policy;
  TrajectoryBatch batch;
  TokenTable table;
};

inline Instance random_instance(std::uint64_t seed, EnvKind kind = EnvKind::reverse_copy, double drift = 0.3) {
  Rng rng = derive_stream(seed, 77);
  Instance inst;
  inst.env = small_env(kind);
  const ModelDims dims = dims_for(inst.env);
  inst.collector = random_params(dims, rng);
  inst.policy = perturbed(inst.collector, rng, drift);
  inst.batch = collect_batch(inst.collector, inst.env, 2, 3, 1.0, seed);
  // force both labels to appear so every loss branch is exercised
  inst.batch.groups[0][0].reward = 1;
  inst.batch.groups[1][1].reward = 1;
  inst.table = build_token_table(inst.batch);
  return inst;
}

// Wrap a (params -> value) function of a fixed-dims policy for FD probing.
inline std::function<double(const Vector&)> on_flat(const ModelDims& dims,
                                                    std::function<double(const PolicyParams&)> f) {
  return [dims, f](const Vector& x) { return f(PolicyParams(dims, x)); };
}

}  // namespace erpd::testing
