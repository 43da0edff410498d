#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "erpd/env.hpp"
#include "erpd/losses.hpp"
#include "erpd/policy.hpp"

namespace erpd {

enum class Phase { stage1, stage2, online, eval };

std::string_view to_string(Phase phase);
Phase phase_from_string(std::string_view name);

/// One logged training step. Optional fields serialize as empty CSV cells.
struct MetricsRow {
  long step = 0;
  Phase phase = Phase::stage1;
  double objective = 0.0;
  double reverse_kl = 0.0;
  double kl_penalty = 0.0;
  double entropy = 0.0;
  std::optional<double> avg_at_k;
  std::optional<double> pos_prob;
  std::optional<double> neg_prob;
  std::optional<double> ratio_diag;
  std::optional<double> explained_var;
  std::optional<double> wall_ms;
};

inline constexpr std::string_view kMetricsHeader =
    "step,phase,objective,reverse_kl,kl_penalty,entropy,avg_at_k,pos_prob,neg_prob,ratio_diag,explained_var,wall_ms";

std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);
/// Inverse of write_metrics_csv; rewriting the result reproduces the file.
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

struct KlEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t tokens = 0;
};

/// Monte-Carlo reverse KL[pi || ref]: fresh rollouts from `policy` on
/// uniformly drawn prompts, averaged per generated token of
/// log pi(a|s) - log ref(a|s).
KlEstimate reverse_kl_estimate(const PolicyParams& policy, const PolicyParams& ref, const EnvSpec& env,
                               std::size_t n_rollouts, std::uint64_t seed, double temperature = 1.0);

/// 1 - Var(target - pred) / Var(target) with population variances; empty
/// when fewer than two points or Var(target) == 0.
std::optional<double> explained_variance(std::span<const double> predictions, std::span<const double> targets);

struct PosNegProb {
  std::optional<double> pos;
  std::optional<double> neg;
};

/// Mean token probability under `policy`, split by trajectory reward.
PosNegProb pos_neg_prob_track(const TokenTable& table, const PolicyParams& policy);

double batch_entropy(const TokenTable& table, const PolicyParams& policy);

/// Per-token probabilities of the stored actions (value predictions of the
/// MSE teacher) and the broadcast terminal rewards.
std::optional<double> batch_explained_variance(const TokenTable& table, const PolicyParams& policy);

}  // namespace erpd
