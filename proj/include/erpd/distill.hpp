#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "erpd/losses.hpp"
#include "erpd/metrics.hpp"
#include "erpd/optim.hpp"
#include "erpd/policy.hpp"
#include "erpd/snapshot_store.hpp"

namespace erpd {

enum class SignalStrategy { s1_fixed_old, s1_evolving, s2_unlearned, s3_past_student };
enum class MaskMode { none, keep_nonneg, keep_nonpos };

std::string_view to_string(SignalStrategy s);
SignalStrategy signal_strategy_from_string(std::string_view name);
std::string_view to_string(MaskMode m);
MaskMode mask_mode_from_string(std::string_view name);

/// How the token-level signal log(pi_num / pi_den) is formed.
/// s1_evolving ignores `denominator` and divides by the live policy.
struct SignalSpec {
  SignalStrategy strategy = SignalStrategy::s1_fixed_old;
  std::string numerator = "extreme";
  std::string denominator;  // empty: the strategy's default tag
  MaskMode mask = MaskMode::none;
  bool whiten = true;

  // Default denominator tag for a strategy ("old", "unlearned", "student_b0").
  static std::string default_denominator(SignalStrategy s);
  std::string denominator_tag() const { return denominator.empty() ? default_denominator(strategy) : denominator; }
  // Checks the tags against the store; throws ConfigError naming a missing tag.
  void validate(const SnapshotStore& store) const;
};

struct SignalStats {
  double pre_mean = 0.0;  // after masking, before whitening
  double pre_std = 0.0;
  double masked_fraction = 0.0;
};

/// Per-token advantage substitute, aligned with TokenTable rows.
struct TokenSignal {
  std::vector<double> values;  // final (masked, whitened) values
  std::vector<double> raw;
  std::vector<double> masked;
  SignalSpec spec;
  SignalStats stats;
  bool recompute_per_step = false;
};

std::vector<double> raw_log_ratio(const TokenTable& table, const PolicyParams& numerator,
                                  const PolicyParams& denominator);

struct MaskResult {
  std::vector<double> values;
  double masked_fraction = 0.0;  // entries set to zero by the mask / total
};
MaskResult mask_signal(std::span<const double> values, MaskMode mask);

/// (v - mean) / max(population std, 1e-6); zeros when n <= 1 or v is constant.
/// The guard is a floor rather than an additive term so the output std is 1
/// for any spread above 1e-6.
std::vector<double> whiten(std::span<const double> values);

/// raw -> mask -> whiten. For s1_evolving `live` supplies the denominator
/// and the result is flagged for per-step recomputation.
TokenSignal build_signal(const TokenTable& table, const SignalSpec& spec, const SnapshotStore& store,
                         const PolicyParams* live = nullptr);

struct DistillSettings {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double kl_weight = 0.0;
  double entropy_weight = 0.0;
};

struct DistillObjective {
  double value = 0.0;      // surrogate - kl_weight * kl + entropy_weight * entropy
  double surrogate = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  Vector grad;
};

/// Clipped surrogate with the signal as advantage, r = pi / pi_old taken
/// from the stored behaviour log-probs, k3 KL penalty against the same
/// behaviour policy and an optional entropy bonus. Maximised.
DistillObjective distill_objective(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                                   std::span<const double> signal, const DistillSettings& settings);

/// One ascent step. Returns the objective evaluated before the update.
DistillObjective distill_step(PolicyParams& policy, Optimizer& optimizer, const TokenTable& table,
                              TrajectorySubset subset, const TokenSignal& signal, const DistillSettings& settings);

/// Block-sequential assignment: the first block_steps[0] steps use spec 0,
/// the next block_steps[1] use spec 1, and so on.
std::vector<std::size_t> ensemble_schedule(std::size_t n_specs, std::span<const int> block_steps);

/// Mean over tokens of |log pi_student - log pi_old| / (|log pi_teacher - log pi_old| + 1e-8).
double ratio_diagnostic(const TokenTable& table, const PolicyParams& student, const PolicyParams& teacher,
                        const PolicyParams& old);

/// Columnar dump: token index, raw, masked and whitened value per line.
void write_signal_dump(const std::string& path, const TokenSignal& signal);

}  // namespace erpd
