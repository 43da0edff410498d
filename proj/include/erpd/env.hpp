#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "erpd/policy.hpp"
#include "erpd/rng.hpp"

namespace erpd {

enum class EnvKind { reverse_copy, parity, modsum };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view name);

/// Toy token-sequence task with a verifiable terminal reward.
///
/// reverse_copy: answer is the prompt reversed, then eos.
/// parity:       prompt is a bit string over {0,1}; answer is the XOR, then eos.
/// modsum:       prompt tokens are in [0, answer_base); answer is the sum mod
///               answer_base, then eos.
///
/// Prompt tokens never include eos. `history` is the number of most recent
/// generated tokens exposed to the policy through the state features.
struct EnvSpec {
  EnvKind kind = EnvKind::reverse_copy;
  int prompt_len = 3;
  int vocab = 8;
  int max_gen_len = 6;
  Token eos_token = 7;
  int answer_base = 5;  // modsum only
  int history = 4;

  void validate() const;
  int answer_length() const;  // including eos
  int feature_size() const;
  // Tokens a prompt may contain, in increasing order.
  std::vector<Token> prompt_alphabet() const;
  // Number of distinct prompts, saturating at UINT64_MAX.
  std::uint64_t prompt_space_size() const;
  std::vector<Token> prompt_from_index(std::uint64_t index) const;

  bool operator==(const EnvSpec&) const = default;
};

/// State encoding: prompt one-hots, then one-hots of the last `history`
/// generated tokens (most recent first, zeros when absent), then the
/// generated length divided by max_gen_len.
Vector encode_state(const EnvSpec& env, std::span<const Token> prompt, std::span<const Token> prefix);

std::vector<Token> correct_answer(const EnvSpec& env, std::span<const Token> prompt);
int terminal_reward(const EnvSpec& env, std::span<const Token> prompt, std::span<const Token> actions);

struct Trajectory {
  std::vector<Token> prompt;
  std::vector<Token> actions;
  std::vector<double> behavior_logps;
  int reward = 0;

  std::size_t size() const noexcept { return actions.size(); }
};

/// Fixed rollout set. Group g holds the k rollouts of prompts[g].
struct TrajectoryBatch {
  EnvSpec env;
  std::vector<std::vector<Token>> prompts;
  std::vector<std::vector<Trajectory>> groups;
  std::string collector;
  bool sampled_with_replacement = false;

  std::size_t group_size() const { return groups.empty() ? 0 : groups.front().size(); }
  std::size_t trajectory_count() const;
  std::size_t token_count() const;
  double mean_reward() const;
};

using TokenSampler = std::function<SampledToken(std::span<const Token> prompt, std::span<const Token> prefix,
                                                double temperature, Rng& rng)>;

TokenSampler network_sampler(const PolicyParams& params, const EnvSpec& env);

/// Generates until eos or max_gen_len tokens.
Trajectory rollout(const TokenSampler& sampler, const EnvSpec& env, std::span<const Token> prompt,
                   double temperature, Rng& rng);

struct PromptSample {
  std::vector<std::vector<Token>> prompts;
  bool with_replacement = false;
};

/// Uniform prompts, without replacement when the prompt space allows it.
PromptSample sample_prompts(const EnvSpec& env, std::size_t n, std::uint64_t seed);

/// Rollout (i, j) uses its own stream derived from (seed, i, j), so the
/// batch does not depend on collection order.
TrajectoryBatch collect_batch(const PolicyParams& policy, const EnvSpec& env, std::size_t n_prompts,
                              std::size_t k, double temperature, std::uint64_t seed,
                              std::string collector = "old");
TrajectoryBatch collect_batch_for_prompts(const TokenSampler& sampler, const EnvSpec& env,
                                          std::vector<std::vector<Token>> prompts, std::size_t k,
                                          double temperature, std::uint64_t seed, std::string collector);

struct AvgAtK {
  double mean = 0.0;
  // Standard error from rollout noise with the prompt set held fixed:
  // sqrt(sum_i phat_i (1 - phat_i) / K) / n.
  double std_error = 0.0;
};

AvgAtK evaluate_avg_at_k(const TokenSampler& sampler, const EnvSpec& env,
                         const std::vector<std::vector<Token>>& prompts, std::size_t K, double temperature,
                         std::uint64_t seed);
AvgAtK evaluate_avg_at_k(const PolicyParams& policy, const EnvSpec& env,
                         const std::vector<std::vector<Token>>& prompts, std::size_t K, double temperature,
                         std::uint64_t seed);

std::string batch_to_string(const TrajectoryBatch& batch);
TrajectoryBatch batch_from_string(const std::string& text);
void save_batch(const std::string& path, const TrajectoryBatch& batch);
TrajectoryBatch load_batch(const std::string& path);

}  // namespace erpd
