#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "erpd/env.hpp"
#include "erpd/policy.hpp"

namespace erpd {

/// One generated token of a batch with its precomputed state encoding.
struct TokenRow {
  std::size_t trajectory = 0;  // flat trajectory index (group-major)
  std::size_t group = 0;
  std::size_t position = 0;    // t within the trajectory
  Token action = 0;
  double behavior_logp = 0.0;
  double reward = 0.0;         // terminal reward of the trajectory
  Vector state;
};

/// Flattened view of a TrajectoryBatch. State features are a pure function
/// of (prompt, prefix), so they are encoded once per batch.
struct TokenTable {
  std::vector<TokenRow> rows;
  // rows of trajectory i are [traj_begin[i], traj_begin[i+1])
  std::vector<std::size_t> traj_begin;
  std::vector<double> traj_reward;
  std::vector<std::size_t> traj_group;
  std::size_t group_count = 0;

  std::size_t trajectory_count() const { return traj_reward.size(); }
  std::size_t token_count() const { return rows.size(); }
  std::size_t traj_length(std::size_t i) const { return traj_begin[i + 1] - traj_begin[i]; }
};

TokenTable build_token_table(const TrajectoryBatch& batch);

/// Trajectory subset used for minibatching; empty selects every trajectory.
using TrajectorySubset = std::span<const std::size_t>;

enum class LossKind { grpo, ppo, sapo, ce, mse, sft };
enum class CeAggregate { sum, mean };
enum class LambdaMode { fixed_one, dynamic };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

/// Teacher loss choice plus every hyperparameter it may use. `sft` is plain
/// log-likelihood ascent on positive trajectories (recovery phase).
struct LossSpec {
  LossKind kind = LossKind::grpo;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta = 0.01;
  double tau_pos = 1.0;
  double tau_neg = 1.05;
  CeAggregate ce_aggregate = CeAggregate::sum;
  LambdaMode ppo_lambda_mode = LambdaMode::dynamic;
  double kl_weight = 0.0;
  double entropy_weight = 0.0;

  void validate() const;
};

struct LossResult {
  double value = 0.0;
  Vector grad;
};

// ---- advantages and per-token surrogate terms ----

/// Per-trajectory group-normalised advantages
/// (R_i - mean) / (population std + 1e-6). Indexed like TokenTable trajectories.
std::vector<double> grpo_advantages(const TokenTable& table);
std::vector<double> grpo_advantages(const TrajectoryBatch& batch);

double clipped_surrogate_term(double r, double adv, double eps_low, double eps_high);
// d/dr of the clipped term; exactly zero inside the dead zone.
double clipped_surrogate_dr(double r, double adv, double eps_low, double eps_high);

double sapo_weight(double r, double adv, double tau_pos, double tau_neg);
double sapo_weight_dr(double r, double adv, double tau_pos, double tau_neg);

// ---- objectives (value, gradient wrt flat policy params) ----

/// Mean over tokens of the clipped surrogate with the given per-token
/// advantages (one entry per table row). Maximised.
LossResult clipped_objective(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                             std::span<const double> token_adv, double eps_low, double eps_high);

LossResult grpo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                              const LossSpec& spec);
LossResult sapo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                              const LossSpec& spec);
/// Maximised. ref supplies log pi_old; normally the collector.
LossResult ce_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                            const PolicyParams& ref, const LossSpec& spec);
/// Minimised: mean over tokens of (pi(a|s) - R)^2.
LossResult mse_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy);
/// Maximised: mean over positive trajectories of sum_t log pi(a_t|s_t).
LossResult sft_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy);
/// Mean exact entropy over visited states. Maximised when used as a bonus.
LossResult entropy_regularizer(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy);
/// Mean over tokens of r - 1 - log r with r = pi/pi_ref. Subtracted.
LossResult kl_penalty(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                      const PolicyParams& ref);
/// Same estimator against the stored behaviour log-probs (the collector).
LossResult kl_penalty_to_behavior(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy);

// ---- PPO ----

double dynamic_lambda(std::size_t length);

struct GaeResult {
  std::vector<double> advantages;  // per table row
  std::vector<double> returns;     // lambda-returns, per table row
};

/// GAE with gamma = 1 and the terminal reward as the only reward. lambda
/// <= 0 selects the dynamic per-trajectory lambda = min(1, 1/(0.05 T)).
GaeResult gae(const TokenTable& table, const ValueParams& value, double lambda);

struct ValueLossResult {
  double value = 0.0;
  ValueParams grad;
};

/// Mean over tokens of (v(s_t) - target_t)^2; targets are held fixed.
ValueLossResult value_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const ValueParams& value,
                                    std::span<const double> targets);

struct PpoResult {
  double objective = 0.0;
  Vector grad;
  double value_loss = 0.0;
  ValueParams value_grad;
};

/// Policy phase: advantages from GAE with lambda per spec.ppo_lambda_mode.
PpoResult ppo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                            const ValueParams& value, const LossSpec& spec);

/// Clears `out` and fills it with the token-row indices of the subset.
void subset_rows(const TokenTable& table, TrajectorySubset subset, std::vector<std::size_t>& out);

}  // namespace erpd
