#include "erpd/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "erpd/errors.hpp"

namespace erpd {

namespace {

constexpr double kGroupStdEps = 1e-6;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
// sigma(x) (1 - sigma(x)) without cancellation
double sigmoid_slope(double x) {
  const double e = std::exp(-std::abs(x));
  return e / ((1.0 + e) * (1.0 + e));
}

std::vector<std::size_t> rows_of(const TokenTable& table, TrajectorySubset subset) {
  std::vector<std::size_t> out;
  subset_rows(table, subset, out);
  return out;
}

std::vector<std::size_t> trajectories_of(const TokenTable& table, TrajectorySubset subset) {
  if (!subset.empty()) return {subset.begin(), subset.end()};
  std::vector<std::size_t> all(table.trajectory_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

}  // namespace

void subset_rows(const TokenTable& table, TrajectorySubset subset, std::vector<std::size_t>& out) {
  out.clear();
  if (subset.empty()) {
    out.resize(table.token_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return;
  }
  for (std::size_t tr : subset) {
    if (tr >= table.trajectory_count()) throw InputError(fmt::format("trajectory index {} out of range", tr));
    for (std::size_t r = table.traj_begin[tr]; r < table.traj_begin[tr + 1]; ++r) out.push_back(r);
  }
}

TokenTable build_token_table(const TrajectoryBatch& batch) {
  TokenTable table;
  table.group_count = batch.groups.size();
  std::size_t traj = 0;
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    for (const Trajectory& t : batch.groups[g]) {
      if (t.actions.size() != t.behavior_logps.size()) {
        throw InputError("trajectory has mismatched actions and behavior log-probs");
      }
      table.traj_begin.push_back(table.rows.size());
      table.traj_reward.push_back(t.reward);
      table.traj_group.push_back(g);
      for (std::size_t pos = 0; pos < t.actions.size(); ++pos) {
        TokenRow row;
        row.trajectory = traj;
        row.group = g;
        row.position = pos;
        row.action = t.actions[pos];
        row.behavior_logp = t.behavior_logps[pos];
        row.reward = t.reward;
        row.state = encode_state(batch.env, t.prompt, std::span<const Token>(t.actions.data(), pos));
        table.rows.push_back(std::move(row));
      }
      ++traj;
    }
  }
  table.traj_begin.push_back(table.rows.size());
  return table;
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::grpo: return "grpo";
    case LossKind::ppo: return "ppo";
    case LossKind::sapo: return "sapo";
    case LossKind::ce: return "ce";
    case LossKind::mse: return "mse";
    case LossKind::sft: return "sft";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view name) {
  for (LossKind k : {LossKind::grpo, LossKind::ppo, LossKind::sapo, LossKind::ce, LossKind::mse, LossKind::sft}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError(fmt::format("unknown loss kind '{}'", name));
}

void LossSpec::validate() const {
  if (!(eps_low > 0 && eps_low < 1)) throw ConfigError(fmt::format("eps_low {} outside (0,1)", eps_low));
  if (!(eps_high > 0 && eps_high < 1)) throw ConfigError(fmt::format("eps_high {} outside (0,1)", eps_high));
  if (!(beta > 0)) throw ConfigError(fmt::format("beta must be positive, got {}", beta));
  if (!(tau_pos > 0) || !(tau_neg > 0)) throw ConfigError("SAPO temperatures must be positive");
  if (kl_weight < 0 || entropy_weight < 0) throw ConfigError("kl_weight and entropy_weight must be nonnegative");
}

std::vector<double> grpo_advantages(const TokenTable& table) {
  std::vector<double> adv(table.trajectory_count(), 0.0);
  std::vector<double> sum(table.group_count, 0.0), sq(table.group_count, 0.0);
  std::vector<std::size_t> count(table.group_count, 0);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto g = table.traj_group[i];
    sum[g] += table.traj_reward[i];
    ++count[g];
  }
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto g = table.traj_group[i];
    const double d = table.traj_reward[i] - sum[g] / double(count[g]);
    sq[g] += d * d;
  }
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto g = table.traj_group[i];
    const double mean = sum[g] / double(count[g]);
    const double sd = std::sqrt(sq[g] / double(count[g]));
    adv[i] = (table.traj_reward[i] - mean) / (sd + kGroupStdEps);
  }
  return adv;
}

std::vector<double> grpo_advantages(const TrajectoryBatch& batch) {
  std::vector<double> adv;
  for (const auto& group : batch.groups) {
    double mean = 0.0;
    for (const auto& t : group) mean += t.reward;
    mean /= double(group.size());
    double var = 0.0;
    for (const auto& t : group) var += (t.reward - mean) * (t.reward - mean);
    const double sd = std::sqrt(var / double(group.size()));
    for (const auto& t : group) adv.push_back((t.reward - mean) / (sd + kGroupStdEps));
  }
  return adv;
}

double clipped_surrogate_term(double r, double adv, double eps_low, double eps_high) {
  const double clipped = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
  return std::min(r * adv, clipped * adv);
}

double clipped_surrogate_dr(double r, double adv, double eps_low, double eps_high) {
  if (adv > 0.0) return r > 1.0 + eps_high ? 0.0 : adv;
  if (adv < 0.0) return r < 1.0 - eps_low ? 0.0 : adv;
  return 0.0;
}

double sapo_weight(double r, double adv, double tau_pos, double tau_neg) {
  const double tau = adv >= 0.0 ? tau_pos : tau_neg;
  return 1.0 + (4.0 / tau) * (sigmoid(tau * (r - 1.0)) - 0.5);
}

double sapo_weight_dr(double r, double adv, double tau_pos, double tau_neg) {
  const double tau = adv >= 0.0 ? tau_pos : tau_neg;
  return 4.0 * sigmoid_slope(tau * (r - 1.0));
}

LossResult clipped_objective(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                             std::span<const double> token_adv, double eps_low, double eps_high) {
  if (token_adv.size() != table.token_count()) throw InputError("advantage vector not aligned with batch tokens");
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const double adv = token_adv[idx];
    const Forward f = forward(policy, row.state);
    const double r = std::exp(f.log_probs[row.action] - row.behavior_logp);
    out.value += clipped_surrogate_term(r, adv, eps_low, eps_high);
    const double dr = clipped_surrogate_dr(r, adv, eps_low, eps_high);
    if (dr != 0.0) accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * dr * r, out.grad);
  }
  out.value *= inv_n;
  return out;
}

namespace {

std::vector<double> broadcast(const TokenTable& table, const std::vector<double>& per_traj) {
  std::vector<double> out(table.token_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = per_traj[table.rows[i].trajectory];
  return out;
}

}  // namespace

LossResult grpo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                              const LossSpec& spec) {
  const auto adv = broadcast(table, grpo_advantages(table));
  return clipped_objective(table, subset, policy, adv, spec.eps_low, spec.eps_high);
}

LossResult sapo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                              const LossSpec& spec) {
  const auto traj_adv = grpo_advantages(table);
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const double adv = traj_adv[row.trajectory];
    const Forward f = forward(policy, row.state);
    const double r = std::exp(f.log_probs[row.action] - row.behavior_logp);
    out.value += sapo_weight(r, adv, spec.tau_pos, spec.tau_neg) * adv;
    const double dr = adv * sapo_weight_dr(r, adv, spec.tau_pos, spec.tau_neg);
    accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * dr * r, out.grad);
  }
  out.value *= inv_n;
  return out;
}

LossResult ce_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                            const PolicyParams& ref, const LossSpec& spec) {
  const auto trajs = trajectories_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (trajs.empty()) return out;
  const double inv_n = 1.0 / double(trajs.size());
  std::vector<Forward> fwd;
  for (std::size_t tr : trajs) {
    const std::size_t begin = table.traj_begin[tr], end = table.traj_begin[tr + 1];
    const std::size_t len = end - begin;
    if (len == 0) continue;
    const double agg = spec.ce_aggregate == CeAggregate::mean ? 1.0 / double(len) : 1.0;
    fwd.clear();
    double reward = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      const TokenRow& row = table.rows[r];
      fwd.push_back(forward(policy, row.state));
      reward += fwd.back().log_probs[row.action] - log_prob(ref, row.state, row.action);
    }
    reward *= spec.beta * agg;
    const double label = table.traj_reward[tr];
    out.value += -label * softplus(-reward) - (1.0 - label) * softplus(reward);
    const double dreward = label - sigmoid(reward);
    for (std::size_t r = begin; r < end; ++r) {
      const TokenRow& row = table.rows[r];
      const Forward& f = fwd[r - begin];
      accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * dreward * spec.beta * agg,
                          out.grad);
    }
  }
  out.value *= inv_n;
  return out;
}

LossResult mse_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy) {
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const Forward f = forward(policy, row.state);
    const double p = f.probs[row.action];
    const double resid = p - row.reward;
    out.value += resid * resid;
    accumulate_backprop(policy, row.state, f, dlogits_prob(f, row.action), inv_n * 2.0 * resid, out.grad);
  }
  out.value *= inv_n;
  return out;
}

LossResult sft_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy) {
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  std::vector<std::size_t> positives;
  for (std::size_t tr : trajectories_of(table, subset)) {
    if (table.traj_reward[tr] > 0.5) positives.push_back(tr);
  }
  if (positives.empty()) return out;
  const double inv_n = 1.0 / double(positives.size());
  for (std::size_t tr : positives) {
    for (std::size_t r = table.traj_begin[tr]; r < table.traj_begin[tr + 1]; ++r) {
      const TokenRow& row = table.rows[r];
      const Forward f = forward(policy, row.state);
      out.value += f.log_probs[row.action];
      accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n, out.grad);
    }
  }
  out.value *= inv_n;
  return out;
}

LossResult entropy_regularizer(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy) {
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const Forward f = forward(policy, row.state);
    out.value += entropy_of(f);
    accumulate_backprop(policy, row.state, f, dlogits_entropy(f), inv_n, out.grad);
  }
  out.value *= inv_n;
  return out;
}

LossResult kl_penalty(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                      const PolicyParams& ref) {
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const Forward f = forward(policy, row.state);
    const double log_r = f.log_probs[row.action] - log_prob(ref, row.state, row.action);
    const double r = std::exp(log_r);
    // r - 1 - log r, with expm1 for accuracy near r = 1
    out.value += std::expm1(log_r) - log_r;
    if (log_r != 0.0) {
      accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * (r - 1.0), out.grad);
    }
  }
  out.value *= inv_n;
  return out;
}

LossResult kl_penalty_to_behavior(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy) {
  const auto rows = rows_of(table, subset);
  LossResult out{0.0, Vector::Zero(policy.dims().param_count())};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const TokenRow& row = table.rows[idx];
    const Forward f = forward(policy, row.state);
    const double log_r = f.log_probs[row.action] - row.behavior_logp;
    out.value += std::expm1(log_r) - log_r;
    if (log_r != 0.0) {
      accumulate_backprop(policy, row.state, f, dlogits_log_prob(f, row.action), inv_n * std::expm1(log_r), out.grad);
    }
  }
  out.value *= inv_n;
  return out;
}

double dynamic_lambda(std::size_t length) {
  if (length == 0) return 1.0;
  return std::min(1.0, 1.0 / (0.05 * double(length)));
}

GaeResult gae(const TokenTable& table, const ValueParams& value, double lambda) {
  GaeResult out;
  out.advantages.assign(table.token_count(), 0.0);
  out.returns.assign(table.token_count(), 0.0);
  for (std::size_t tr = 0; tr < table.trajectory_count(); ++tr) {
    const std::size_t begin = table.traj_begin[tr], end = table.traj_begin[tr + 1];
    const std::size_t len = end - begin;
    if (len == 0) continue;
    const double lam = lambda > 0.0 ? lambda : dynamic_lambda(len);
    double next_value = 0.0;
    double next_adv = 0.0;
    for (std::size_t r = end; r-- > begin;) {
      const double v = value(table.rows[r].state);
      const double reward = (r + 1 == end) ? table.traj_reward[tr] : 0.0;
      const double delta = reward + next_value - v;
      const double adv = delta + lam * next_adv;
      out.advantages[r] = adv;
      out.returns[r] = adv + v;
      next_value = v;
      next_adv = adv;
    }
  }
  return out;
}

ValueLossResult value_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const ValueParams& value,
                                    std::span<const double> targets) {
  if (targets.size() != table.token_count()) throw InputError("value targets not aligned with batch tokens");
  const auto rows = rows_of(table, subset);
  ValueLossResult out{0.0, ValueParams::zeros(int(value.w.size()))};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / double(rows.size());
  for (std::size_t idx : rows) {
    const Vector& s = table.rows[idx].state;
    const double resid = value(s) - targets[idx];
    out.value += resid * resid;
    out.grad.w += (2.0 * inv_n * resid) * s;
    out.grad.b += 2.0 * inv_n * resid;
  }
  out.value *= inv_n;
  return out;
}

PpoResult ppo_loss_and_grad(const TokenTable& table, TrajectorySubset subset, const PolicyParams& policy,
                            const ValueParams& value, const LossSpec& spec) {
  const double lambda = spec.ppo_lambda_mode == LambdaMode::fixed_one ? 1.0 : -1.0;
  const GaeResult g = gae(table, value, lambda);
  PpoResult out;
  LossResult pol = clipped_objective(table, subset, policy, g.advantages, spec.eps_low, spec.eps_high);
  out.objective = pol.value;
  out.grad = std::move(pol.grad);
  ValueLossResult vl = value_loss_and_grad(table, subset, value, g.returns);
  out.value_loss = vl.value;
  out.value_grad = std::move(vl.grad);
  return out;
}

}  // namespace erpd
