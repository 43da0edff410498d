#include "erpd/distill.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "erpd/errors.hpp"

namespace erpd {

std::string_view to_string(SignalStrategy s) {
  switch (s) {
    case SignalStrategy::s1_fixed_old: return "s1_fixed_old";
    case SignalStrategy::s1_evolving: return "s1_evolving";
    case SignalStrategy::s2_unlearned: return "s2_unlearned";
    case SignalStrategy::s3_past_student: return "s3_past_student";
  }
  return "?";
}

SignalStrategy signal_strategy_from_string(std::string_view name) {
  for (auto s : {SignalStrategy::s1_fixed_old, SignalStrategy::s1_evolving, SignalStrategy::s2_unlearned,
                 SignalStrategy::s3_past_student}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError(fmt::format("unknown signal strategy '{}'", name));
}

std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::none: return "none";
    case MaskMode::keep_nonneg: return "keep_nonneg";
    case MaskMode::keep_nonpos: return "keep_nonpos";
  }
  return "?";
}

MaskMode mask_mode_from_string(std::string_view name) {
  for (auto m : {MaskMode::none, MaskMode::keep_nonneg, MaskMode::keep_nonpos}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError(fmt::format("unknown mask mode '{}'", name));
}

std::string SignalSpec::default_denominator(SignalStrategy s) {
  switch (s) {
    case SignalStrategy::s2_unlearned: return "unlearned";
    case SignalStrategy::s3_past_student: return "student_b0";
    default: return "old";
  }
}

void SignalSpec::validate(const SnapshotStore& store) const {
  if (!store.contains(numerator)) {
    throw ConfigError(fmt::format("signal numerator snapshot '{}' not found", numerator));
  }
  if (strategy != SignalStrategy::s1_evolving && !store.contains(denominator_tag())) {
    throw ConfigError(fmt::format("signal denominator snapshot '{}' not found", denominator_tag()));
  }
}

std::vector<double> raw_log_ratio(const TokenTable& table, const PolicyParams& numerator,
                                  const PolicyParams& denominator) {
  if (!(numerator.dims() == denominator.dims())) throw ConfigError("signal snapshots have different dimensions");
  std::vector<double> out(table.token_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const TokenRow& row = table.rows[i];
    out[i] = log_prob(numerator, row.state, row.action) - log_prob(denominator, row.state, row.action);
  }
  return out;
}

MaskResult mask_signal(std::span<const double> values, MaskMode mask) {
  MaskResult out{{values.begin(), values.end()}, 0.0};
  if (values.empty() || mask == MaskMode::none) return out;
  std::size_t zeroed = 0;
  for (double& v : out.values) {
    const bool drop = mask == MaskMode::keep_nonneg ? v < 0.0 : v > 0.0;
    if (drop) {
      v = 0.0;
      ++zeroed;
    }
  }
  out.masked_fraction = double(zeroed) / double(values.size());
  return out;
}

namespace {

constexpr double kWhitenEps = 1e-6;

void mean_std(std::span<const double> v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / double(v.size()));
}

bool constant(std::span<const double> v) {
  for (double x : v) {
    if (x != v.front()) return false;
  }
  return true;
}

}  // namespace

std::vector<double> whiten(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.size() <= 1 || constant(values)) return out;
  double mean = 0.0, sd = 0.0;
  mean_std(values, mean, sd);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (values[i] - mean) / std::max(sd, kWhitenEps);
  return out;
}

TokenSignal build_signal(const TokenTable& table, const SignalSpec& spec, const SnapshotStore& store,
                         const PolicyParams* live) {
  spec.validate(store);
  TokenSignal sig;
  sig.spec = spec;
  const PolicyParams& num = store.get(spec.numerator).params();
  if (spec.strategy == SignalStrategy::s1_evolving) {
    if (!live) throw ConfigError("evolving-denominator signal needs the live policy");
    sig.raw = raw_log_ratio(table, num, *live);
    sig.recompute_per_step = true;
  } else {
    sig.raw = raw_log_ratio(table, num, store.get(spec.denominator_tag()).params());
  }
  MaskResult m = mask_signal(sig.raw, spec.mask);
  sig.masked = std::move(m.values);
  sig.stats.masked_fraction = m.masked_fraction;
  if (!sig.masked.empty()) mean_std(sig.masked, sig.stats.pre_mean, sig.stats.pre_std);
  sig.values = spec.whiten ? whiten(sig.masked) : sig.masked;
  return sig;
}

DistillObjective distill_objective(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                                   std::span<const double> signal, const DistillSettings& settings) {
  if (signal.size() != table.token_count()) throw InputError("signal not aligned with batch tokens");
  std::vector<std::size_t> rows;
  subset_rows(table, subset, rows);
  DistillObjective out;
  out.grad = Vector::Zero(policy.dims().param_count());
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const Forward f = forward(policy, row.state);
    const double log_r = f.log_probs[row.action] - row.behavior_logp;
    const double r = std::exp(log_r);
    const double adv = signal[idx];
    out.surrogate += clipped_surrogate_term(r, adv, settings.eps_low, settings.eps_high);
    out.kl += std::expm1(log_r) - log_r;
    // d/dlogp of [clip term - kl_weight (r - 1 - log r)]
    double coeff = clipped_surrogate_dr(r, adv, settings.eps_low, settings.eps_high) * r;
    if (settings.kl_weight != 0.0) coeff -= settings.kl_weight * (r - 1.0);
    if (coeff != 0.0) accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * coeff, out.grad);
    if (settings.entropy_weight != 0.0) {
      out.entropy += entropy_of(f);
      accumulate_backprop(policy, row.state, f, dlogits_entropy(f), inv_n * settings.entropy_weight, out.grad);
    }
  }
  out.surrogate *= inv_n;
  out.kl *= inv_n;
  out.entropy *= inv_n;
  out.value = out.surrogate - settings.kl_weight * out.kl + settings.entropy_weight * out.entropy;
  return out;
}

DistillObjective distill_step(PolicyParams& policy, Optimizer& optimizer, const TokenTable& table,
                              TrajectorySubset subset, const TokenSignal& signal, const DistillSettings& settings) {
  DistillObjective obj = distill_objective(table, subset, policy, signal.values, settings);
  optimizer.ascend(policy.flat(), obj.grad);
  return obj;
}

std::vector<std::size_t> ensemble_schedule(std::size_t n_specs, std::span<const int> block_steps) {
  if (n_specs != block_steps.size()) {
    throw ConfigError(fmt::format("ensemble has {} signals but {} block lengths", n_specs, block_steps.size()));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < block_steps.size(); ++i) {
    if (block_steps[i] <= 0) throw ConfigError("ensemble block lengths must be positive");
    out.insert(out.end(), std::size_t(block_steps[i]), i);
  }
  return out;
}

double ratio_diagnostic(const TokenTable& table, const PolicyParams& student, const PolicyParams& teacher,
                        const PolicyParams& old) {
  if (table.rows.empty()) return 0.0;
  double sum = 0.0;
  for (const TokenRow& row : table.rows) {
    const double lo = log_prob(old, row.state, row.action);
    const double ds = std::abs(log_prob(student, row.state, row.action) - lo);
    const double dt = std::abs(log_prob(teacher, row.state, row.action) - lo);
    sum += ds / (dt + 1e-8);
  }
  return sum / double(table.rows.size());
}

void write_signal_dump(const std::string& path, const TokenSignal& signal) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write signal dump {}", path));
  out << "token\traw\tmasked\twhitened\n";
  for (std::size_t i = 0; i < signal.values.size(); ++i) {
    out << fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\n", i, signal.raw[i], signal.masked[i], signal.values[i]);
  }
}

}  // namespace erpd
