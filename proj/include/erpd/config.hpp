#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "erpd/distill.hpp"
#include "erpd/env.hpp"
#include "erpd/losses.hpp"
#include "erpd/optim.hpp"

namespace erpd {

enum class ExtremeSelect { final, best_validation };

struct ModelConfig {
  int hidden = 32;
  double init_scale = 1.0;
};

// Supervised warm start on correct answers, producing a base policy with
// nontrivial accuracy before any RL.
struct BaseConfig {
  int pretrain_steps = 0;
  double pretrain_lr = 0.01;
  int pretrain_prompts = 64;
};

struct RolloutConfig {
  int n_prompts = 32;
  int k = 16;
  double temperature = 1.0;
};

struct Stage1Config {
  LossSpec loss;
  int steps = 80;
  int minibatch = 64;  // trajectories per update
  double lr = 1e-2;
  OptimizerKind optimizer = OptimizerKind::adam;
  int snapshot_every = 10;
  int unlearn_capture_step = 15;
  ExtremeSelect extreme_select = ExtremeSelect::final;
  int validate_every = 10;
  int value_pretrain_steps = 20;
  double value_lr = 1e-2;
  // Optional second segment (SFT-recovery ablation): from recovery_start on
  // the loss switches to recovery_loss.
  std::string recovery_loss = "none";
  int recovery_start = 0;
  // Additional teachers trained from the same base, stored as
  // "extreme_<loss>" and "unlearned_<loss>".
  std::vector<std::string> extra_teachers;
};

struct EnsembleEntry {
  SignalSpec signal;
  int steps = 0;
};

struct Stage2Config {
  int steps = 16;
  int minibatch = 0;  // 0: full batch per step
  double lr = 1e-2;
  OptimizerKind optimizer = OptimizerKind::adam;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double kl_weight = 0.0;
  double entropy_weight = 0.0;
  SignalSpec signal;
  // Non-empty: block-sequential teacher ensemble, overrides `signal`/`steps`.
  std::vector<EnsembleEntry> ensemble;
};

struct PipelineConfig {
  int n_batches = 1;
  std::vector<SignalStrategy> strategy_per_batch;  // last entry repeats
  bool online_interleave = false;
  int online_steps = 0;
  bool fresh_prompts = true;
};

struct OnlineConfig {
  int iterations = 50;
  int n_prompts = 8;
  int k = 8;
  double lr = 1e-2;
};

struct EvalConfig {
  int K = 16;
  int n_eval_prompts = 64;
  double temperature = 1.0;
  int every = 10;  // stage-1/2 AVG@K cadence in steps; 0 = first and last only
};

struct RunConfig {
  std::uint64_t seed = 0;
  EnvSpec env;
  ModelConfig model;
  BaseConfig base;
  RolloutConfig rollout;
  Stage1Config stage1;
  Stage2Config stage2;
  PipelineConfig pipeline;
  OnlineConfig online;
  EvalConfig eval;
  int kl_rollouts = 64;
  bool log_timing = false;

  ModelDims dims() const { return {env.feature_size(), model.hidden, env.vocab}; }
  void validate() const;

  /// Applies one dotted-key assignment; ConfigError names unknown keys.
  void set(std::string_view key, std::string_view value);
  std::vector<std::string> keys() const;
  /// Current value of a key, formatted as it would be parsed.
  std::string get(std::string_view key) const;
};

/// Parses `key = value` lines ('#' starts a comment) on top of defaults.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path);
/// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);
std::string dump_config(const RunConfig& cfg);

}  // namespace erpd
