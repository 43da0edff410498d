#include "erpd/env.hpp"

#include <fmt/format.h>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "erpd/errors.hpp"

namespace erpd {

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::reverse_copy: return "reverse_copy";
    case EnvKind::parity: return "parity";
    case EnvKind::modsum: return "modsum";
  }
  return "?";
}

EnvKind env_kind_from_string(std::string_view name) {
  if (name == "reverse_copy") return EnvKind::reverse_copy;
  if (name == "parity") return EnvKind::parity;
  if (name == "modsum") return EnvKind::modsum;
  throw ConfigError(fmt::format("unknown env kind '{}'", name));
}

void EnvSpec::validate() const {
  if (prompt_len < 1 || prompt_len > 8) throw ConfigError(fmt::format("env.prompt_len {} outside 1..8", prompt_len));
  if (vocab < 4 || vocab > 32) throw ConfigError(fmt::format("env.vocab {} outside 4..32", vocab));
  if (max_gen_len < 1 || max_gen_len > 16) {
    throw ConfigError(fmt::format("env.max_gen_len {} outside 1..16", max_gen_len));
  }
  if (eos_token < 0 || eos_token >= vocab) throw ConfigError(fmt::format("env.eos_token {} outside vocabulary", eos_token));
  if (history < 0) throw ConfigError("env.history must be nonnegative");
  if (kind == EnvKind::parity && eos_token <= 1) throw ConfigError("parity needs eos_token outside {0,1}");
  if (kind == EnvKind::modsum) {
    if (answer_base < 2 || answer_base > vocab - 1) {
      throw ConfigError(fmt::format("env.answer_base {} must be in 2..vocab-1", answer_base));
    }
    if (eos_token < answer_base) throw ConfigError("modsum needs eos_token >= answer_base");
  }
  if (max_gen_len < answer_length()) {
    throw ConfigError(fmt::format("env.max_gen_len {} shorter than the answer length {}", max_gen_len, answer_length()));
  }
}

int EnvSpec::answer_length() const {
  return kind == EnvKind::reverse_copy ? prompt_len + 1 : 2;
}

int EnvSpec::feature_size() const { return (prompt_len + history) * vocab + 1; }

std::vector<Token> EnvSpec::prompt_alphabet() const {
  std::vector<Token> out;
  switch (kind) {
    case EnvKind::reverse_copy:
      for (Token t = 0; t < vocab; ++t) {
        if (t != eos_token) out.push_back(t);
      }
      break;
    case EnvKind::parity: out = {0, 1}; break;
    case EnvKind::modsum:
      out.resize(std::size_t(answer_base));
      std::iota(out.begin(), out.end(), 0);
      break;
  }
  return out;
}

std::uint64_t EnvSpec::prompt_space_size() const {
  const std::uint64_t base = prompt_alphabet().size();
  std::uint64_t n = 1;
  for (int i = 0; i < prompt_len; ++i) {
    if (n > std::numeric_limits<std::uint64_t>::max() / base) return std::numeric_limits<std::uint64_t>::max();
    n *= base;
  }
  return n;
}

std::vector<Token> EnvSpec::prompt_from_index(std::uint64_t index) const {
  const auto alphabet = prompt_alphabet();
  std::vector<Token> prompt(static_cast<std::size_t>(prompt_len));
  for (int i = prompt_len - 1; i >= 0; --i) {
    prompt[std::size_t(i)] = alphabet[index % alphabet.size()];
    index /= alphabet.size();
  }
  return prompt;
}

Vector encode_state(const EnvSpec& env, std::span<const Token> prompt, std::span<const Token> prefix) {
  if (int(prompt.size()) != env.prompt_len) {
    throw InputError(fmt::format("prompt has {} tokens, env expects {}", prompt.size(), env.prompt_len));
  }
  Vector s = Vector::Zero(env.feature_size());
  for (int i = 0; i < env.prompt_len; ++i) s[i * env.vocab + prompt[std::size_t(i)]] = 1.0;
  const int n = int(prefix.size());
  for (int j = 0; j < env.history && j < n; ++j) {
    s[(env.prompt_len + j) * env.vocab + prefix[std::size_t(n - 1 - j)]] = 1.0;
  }
  s[s.size() - 1] = double(n) / double(env.max_gen_len);
  return s;
}

std::vector<Token> correct_answer(const EnvSpec& env, std::span<const Token> prompt) {
  std::vector<Token> answer;
  switch (env.kind) {
    case EnvKind::reverse_copy: answer.assign(prompt.rbegin(), prompt.rend()); break;
    case EnvKind::parity: {
      Token x = 0;
      for (Token t : prompt) x ^= (t & 1);
      answer.push_back(x);
      break;
    }
    case EnvKind::modsum: {
      int sum = 0;
      for (Token t : prompt) sum += t;
      answer.push_back(sum % env.answer_base);
      break;
    }
  }
  answer.push_back(env.eos_token);
  return answer;
}

int terminal_reward(const EnvSpec& env, std::span<const Token> prompt, std::span<const Token> actions) {
  const auto answer = correct_answer(env, prompt);
  return std::equal(answer.begin(), answer.end(), actions.begin(), actions.end()) ? 1 : 0;
}

std::size_t TrajectoryBatch::trajectory_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

std::size_t TrajectoryBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& t : g) n += t.size();
  }
  return n;
}

double TrajectoryBatch::mean_reward() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& t : g) {
      sum += t.reward;
      ++n;
    }
  }
  return n ? sum / double(n) : 0.0;
}

TokenSampler network_sampler(const PolicyParams& params, const EnvSpec& env) {
  return [&params, &env](std::span<const Token> prompt, std::span<const Token> prefix, double temperature,
                         Rng& rng) {
    return sample_token(params, encode_state(env, prompt, prefix), temperature, rng);
  };
}

Trajectory rollout(const TokenSampler& sampler, const EnvSpec& env, std::span<const Token> prompt,
                   double temperature, Rng& rng) {
  Trajectory traj;
  traj.prompt.assign(prompt.begin(), prompt.end());
  while (int(traj.actions.size()) < env.max_gen_len) {
    const SampledToken s = sampler(prompt, traj.actions, temperature, rng);
    traj.actions.push_back(s.token);
    traj.behavior_logps.push_back(s.logprob);
    if (s.token == env.eos_token) break;
  }
  traj.reward = terminal_reward(env, prompt, traj.actions);
  return traj;
}

PromptSample sample_prompts(const EnvSpec& env, std::size_t n, std::uint64_t seed) {
  env.validate();
  Rng rng = derive_stream(seed, 0x70726f6d7074ULL);
  const std::uint64_t space = env.prompt_space_size();
  std::uniform_int_distribution<std::uint64_t> pick(0, space - 1);
  PromptSample out;
  out.with_replacement = n > space;
  std::set<std::uint64_t> seen;
  while (out.prompts.size() < n) {
    const std::uint64_t idx = pick(rng);
    if (!out.with_replacement && !seen.insert(idx).second) continue;
    out.prompts.push_back(env.prompt_from_index(idx));
  }
  return out;
}

TrajectoryBatch collect_batch_for_prompts(const TokenSampler& sampler, const EnvSpec& env,
                                          std::vector<std::vector<Token>> prompts, std::size_t k,
                                          double temperature, std::uint64_t seed, std::string collector) {
  if (prompts.empty()) throw ConfigError("collect_batch needs at least one prompt");
  if (k < 2) throw ConfigError(fmt::format("collect_batch needs k >= 2 rollouts per prompt, got {}", k));
  if (!(temperature > 0.0)) throw ConfigError("rollout temperature must be positive");
  TrajectoryBatch batch;
  batch.env = env;
  batch.collector = std::move(collector);
  batch.groups.resize(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    batch.groups[i].reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      Rng rng = derive_stream(seed, i + 1, j);
      batch.groups[i].push_back(rollout(sampler, env, prompts[i], temperature, rng));
    }
  }
  batch.prompts = std::move(prompts);
  return batch;
}

TrajectoryBatch collect_batch(const PolicyParams& policy, const EnvSpec& env, std::size_t n_prompts,
                              std::size_t k, double temperature, std::uint64_t seed, std::string collector) {
  env.validate();
  if (policy.dims().feat != env.feature_size() || policy.dims().vocab != env.vocab) {
    throw ConfigError("policy dimensions do not match the environment");
  }
  PromptSample ps = sample_prompts(env, n_prompts, seed);
  TrajectoryBatch batch = collect_batch_for_prompts(network_sampler(policy, env), env, std::move(ps.prompts), k,
                                                    temperature, seed, std::move(collector));
  batch.sampled_with_replacement = ps.with_replacement;
  return batch;
}

AvgAtK evaluate_avg_at_k(const TokenSampler& sampler, const EnvSpec& env,
                         const std::vector<std::vector<Token>>& prompts, std::size_t K, double temperature,
                         std::uint64_t seed) {
  if (K < 1) throw ConfigError("AVG@K needs K >= 1");
  if (prompts.empty()) throw ConfigError("AVG@K needs at least one prompt");
  double total = 0.0;
  double var_sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    double hits = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      Rng rng = derive_stream(seed, 0x6576616cULL + i, j);
      hits += rollout(sampler, env, prompts[i], temperature, rng).reward;
    }
    const double p = hits / double(K);
    total += p;
    var_sum += p * (1.0 - p) / double(K);
  }
  const double n = double(prompts.size());
  return {total / n, std::sqrt(var_sum) / n};
}

AvgAtK evaluate_avg_at_k(const PolicyParams& policy, const EnvSpec& env,
                         const std::vector<std::vector<Token>>& prompts, std::size_t K, double temperature,
                         std::uint64_t seed) {
  return evaluate_avg_at_k(network_sampler(policy, env), env, prompts, K, temperature, seed);
}

namespace {

nlohmann::ordered_json env_to_json(const EnvSpec& env) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(env.kind));
  j["prompt_len"] = env.prompt_len;
  j["vocab"] = env.vocab;
  j["max_gen_len"] = env.max_gen_len;
  j["eos_token"] = env.eos_token;
  j["answer_base"] = env.answer_base;
  j["history"] = env.history;
  return j;
}

EnvSpec env_from_json(const nlohmann::json& j) {
  EnvSpec env;
  env.kind = env_kind_from_string(j.at("kind").get<std::string>());
  env.prompt_len = j.at("prompt_len").get<int>();
  env.vocab = j.at("vocab").get<int>();
  env.max_gen_len = j.at("max_gen_len").get<int>();
  env.eos_token = j.at("eos_token").get<int>();
  env.answer_base = j.at("answer_base").get<int>();
  env.history = j.at("history").get<int>();
  env.validate();
  return env;
}

}  // namespace

std::string batch_to_string(const TrajectoryBatch& batch) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["env"] = env_to_json(batch.env);
  doc["collector"] = batch.collector;
  doc["sampled_with_replacement"] = batch.sampled_with_replacement;
  auto& groups = doc["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : batch.groups) {
    auto jg = nlohmann::ordered_json::array();
    for (const auto& t : g) {
      nlohmann::ordered_json jt;
      jt["prompt"] = t.prompt;
      jt["actions"] = t.actions;
      jt["behavior_logps"] = t.behavior_logps;
      jt["reward"] = t.reward;
      jg.push_back(std::move(jt));
    }
    groups.push_back(std::move(jg));
  }
  return doc.dump(1) + "\n";
}

TrajectoryBatch batch_from_string(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    TrajectoryBatch batch;
    batch.env = env_from_json(doc.at("env"));
    batch.collector = doc.at("collector").get<std::string>();
    batch.sampled_with_replacement = doc.at("sampled_with_replacement").get<bool>();
    for (const auto& jg : doc.at("groups")) {
      std::vector<Trajectory> group;
      for (const auto& jt : jg) {
        Trajectory t;
        t.prompt = jt.at("prompt").get<std::vector<Token>>();
        t.actions = jt.at("actions").get<std::vector<Token>>();
        t.behavior_logps = jt.at("behavior_logps").get<std::vector<double>>();
        t.reward = jt.at("reward").get<int>();
        if (t.actions.size() != t.behavior_logps.size()) throw ConfigError("batch dump: logp/action length mismatch");
        group.push_back(std::move(t));
      }
      if (group.empty()) throw ConfigError("batch dump: empty group");
      batch.prompts.push_back(group.front().prompt);
      batch.groups.push_back(std::move(group));
    }
    return batch;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed batch dump: {}", e.what()));
  }
}

void save_batch(const std::string& path, const TrajectoryBatch& batch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write batch dump {}", path));
  out << batch_to_string(batch);
}

TrajectoryBatch load_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("batch dump {} not found", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return batch_from_string(ss.str());
}

}  // namespace erpd
