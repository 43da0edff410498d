#include "erpd/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "erpd/errors.hpp"

namespace erpd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, v));
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{}: expected true/false, got '{}'", key, v));
}

std::string fmt_double(double x) { return fmt::format("{}", x); }

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string format_ensemble(const std::vector<EnsembleEntry>& e) {
  std::string out;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) out += ';';
    out += fmt::format("{}:{}:{}:{}:{}", to_string(e[i].signal.strategy), e[i].signal.numerator,
                       e[i].signal.denominator, to_string(e[i].signal.mask), e[i].steps);
  }
  return out;
}

std::vector<EnsembleEntry> parse_ensemble(std::string_view key, std::string_view v) {
  std::vector<EnsembleEntry> out;
  for (const auto& item : split(v, ';')) {
    const auto parts = split(item, ':');
    if (parts.size() != 5) {
      throw ConfigError(fmt::format("{}: entries are strategy:numerator:denominator:mask:steps, got '{}'", key, item));
    }
    EnsembleEntry e;
    e.signal.strategy = signal_strategy_from_string(parts[0]);
    e.signal.numerator = parts[1];
    e.signal.denominator = parts[2];
    e.signal.mask = mask_mode_from_string(parts[3]);
    e.steps = parse_int<int>(key, parts[4]);
    out.push_back(std::move(e));
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Registry = std::vector<std::pair<std::string, Field>>;

template <typename Access>
Field int_field(Access access) {
  return {[access](RunConfig& c, std::string_view k, std::string_view v) {
            auto& ref = access(c);
            ref = parse_int<std::remove_reference_t<decltype(ref)>>(k, v);
          },
          [access](const RunConfig& c) { return fmt::format("{}", access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field double_field(Access access) {
  return {[access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_double(k, v); },
          [access](const RunConfig& c) { return fmt_double(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field bool_field(Access access) {
  return {[access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_bool(k, v); },
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Field string_field(Access access) {
  return {[access](RunConfig& c, std::string_view, std::string_view v) { access(c) = std::string(v); },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }};
}

template <typename Access, typename Parse>
Field enum_field(Access access, Parse parse) {
  return {[access, parse](RunConfig& c, std::string_view, std::string_view v) { access(c) = parse(v); },
          [access](const RunConfig& c) { return std::string(to_string(access(const_cast<RunConfig&>(c)))); }};
}

#define ACC(expr) [](RunConfig& c) -> auto& { return c.expr; }

const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    auto add = [&r](std::string key, Field f) { r.emplace_back(std::move(key), std::move(f)); };
    add("seed", int_field(ACC(seed)));

    add("env.kind", enum_field(ACC(env.kind), env_kind_from_string));
    add("env.prompt_len", int_field(ACC(env.prompt_len)));
    add("env.vocab", int_field(ACC(env.vocab)));
    add("env.max_gen_len", int_field(ACC(env.max_gen_len)));
    add("env.eos_token", int_field(ACC(env.eos_token)));
    add("env.answer_base", int_field(ACC(env.answer_base)));
    add("env.history", int_field(ACC(env.history)));

    add("model.hidden", int_field(ACC(model.hidden)));
    add("model.init_scale", double_field(ACC(model.init_scale)));
    // feat and vocab are derived from the environment; accepted only when consistent
    add("model.feat", {[](RunConfig& c, std::string_view k, std::string_view v) {
                         if (parse_int<int>(k, v) != c.env.feature_size()) {
                           throw ConfigError(fmt::format("model.feat={} but the environment encodes {} features", v,
                                                         c.env.feature_size()));
                         }
                       },
                       [](const RunConfig& c) { return fmt::format("{}", c.env.feature_size()); }});
    add("model.vocab", {[](RunConfig& c, std::string_view k, std::string_view v) {
                          if (parse_int<int>(k, v) != c.env.vocab) {
                            throw ConfigError(fmt::format("model.vocab={} differs from env.vocab={}", v, c.env.vocab));
                          }
                        },
                        [](const RunConfig& c) { return fmt::format("{}", c.env.vocab); }});

    add("base.pretrain_steps", int_field(ACC(base.pretrain_steps)));
    add("base.pretrain_lr", double_field(ACC(base.pretrain_lr)));
    add("base.pretrain_prompts", int_field(ACC(base.pretrain_prompts)));

    add("rollout.n_prompts", int_field(ACC(rollout.n_prompts)));
    add("rollout.k", int_field(ACC(rollout.k)));
    add("rollout.temperature", double_field(ACC(rollout.temperature)));

    add("stage1.loss", enum_field(ACC(stage1.loss.kind), loss_kind_from_string));
    add("stage1.eps_low", double_field(ACC(stage1.loss.eps_low)));
    add("stage1.eps_high", double_field(ACC(stage1.loss.eps_high)));
    add("stage1.beta", double_field(ACC(stage1.loss.beta)));
    add("stage1.tau_pos", double_field(ACC(stage1.loss.tau_pos)));
    add("stage1.tau_neg", double_field(ACC(stage1.loss.tau_neg)));
    add("stage1.ce_aggregate",
        {[](RunConfig& c, std::string_view k, std::string_view v) {
           if (v == "sum") c.stage1.loss.ce_aggregate = CeAggregate::sum;
           else if (v == "mean") c.stage1.loss.ce_aggregate = CeAggregate::mean;
           else throw ConfigError(fmt::format("{}: expected sum or mean, got '{}'", k, v));
         },
         [](const RunConfig& c) { return std::string(c.stage1.loss.ce_aggregate == CeAggregate::sum ? "sum" : "mean"); }});
    add("stage1.ppo_lambda_mode",
        {[](RunConfig& c, std::string_view k, std::string_view v) {
           if (v == "fixed_one") c.stage1.loss.ppo_lambda_mode = LambdaMode::fixed_one;
           else if (v == "dynamic") c.stage1.loss.ppo_lambda_mode = LambdaMode::dynamic;
           else throw ConfigError(fmt::format("{}: expected fixed_one or dynamic, got '{}'", k, v));
         },
         [](const RunConfig& c) {
           return std::string(c.stage1.loss.ppo_lambda_mode == LambdaMode::fixed_one ? "fixed_one" : "dynamic");
         }});
    add("stage1.kl_weight", double_field(ACC(stage1.loss.kl_weight)));
    add("stage1.entropy_weight", double_field(ACC(stage1.loss.entropy_weight)));
    add("stage1.steps", int_field(ACC(stage1.steps)));
    add("stage1.minibatch", int_field(ACC(stage1.minibatch)));
    add("stage1.lr", double_field(ACC(stage1.lr)));
    add("stage1.optimizer", enum_field(ACC(stage1.optimizer), optimizer_kind_from_string));
    add("stage1.snapshot_every", int_field(ACC(stage1.snapshot_every)));
    add("stage1.unlearn_capture_step", int_field(ACC(stage1.unlearn_capture_step)));
    add("stage1.extreme_select",
        {[](RunConfig& c, std::string_view k, std::string_view v) {
           if (v == "final") c.stage1.extreme_select = ExtremeSelect::final;
           else if (v == "best_validation") c.stage1.extreme_select = ExtremeSelect::best_validation;
           else throw ConfigError(fmt::format("{}: expected final or best_validation, got '{}'", k, v));
         },
         [](const RunConfig& c) {
           return std::string(c.stage1.extreme_select == ExtremeSelect::final ? "final" : "best_validation");
         }});
    add("stage1.validate_every", int_field(ACC(stage1.validate_every)));
    add("stage1.value_pretrain_steps", int_field(ACC(stage1.value_pretrain_steps)));
    add("stage1.value_lr", double_field(ACC(stage1.value_lr)));
    add("stage1.recovery_loss", string_field(ACC(stage1.recovery_loss)));
    add("stage1.recovery_start", int_field(ACC(stage1.recovery_start)));
    add("stage1.extra_teachers",
        {[](RunConfig& c, std::string_view, std::string_view v) {
           c.stage1.extra_teachers = split(v, ',');
           for (const auto& t : c.stage1.extra_teachers) loss_kind_from_string(t);
         },
         [](const RunConfig& c) { return join(c.stage1.extra_teachers); }});

    add("stage2.steps", int_field(ACC(stage2.steps)));
    add("stage2.minibatch", int_field(ACC(stage2.minibatch)));
    add("stage2.lr", double_field(ACC(stage2.lr)));
    add("stage2.optimizer", enum_field(ACC(stage2.optimizer), optimizer_kind_from_string));
    add("stage2.eps_low", double_field(ACC(stage2.eps_low)));
    add("stage2.eps_high", double_field(ACC(stage2.eps_high)));
    add("stage2.kl_weight", double_field(ACC(stage2.kl_weight)));
    add("stage2.entropy_weight", double_field(ACC(stage2.entropy_weight)));
    add("stage2.signal.strategy", enum_field(ACC(stage2.signal.strategy), signal_strategy_from_string));
    add("stage2.signal.numerator", string_field(ACC(stage2.signal.numerator)));
    add("stage2.signal.denominator", string_field(ACC(stage2.signal.denominator)));
    add("stage2.signal.mask", enum_field(ACC(stage2.signal.mask), mask_mode_from_string));
    add("stage2.signal.whiten", bool_field(ACC(stage2.signal.whiten)));
    add("stage2.ensemble", {[](RunConfig& c, std::string_view k, std::string_view v) {
                              c.stage2.ensemble = parse_ensemble(k, v);
                            },
                            [](const RunConfig& c) { return format_ensemble(c.stage2.ensemble); }});

    add("pipeline.n_batches", int_field(ACC(pipeline.n_batches)));
    add("pipeline.strategy_per_batch",
        {[](RunConfig& c, std::string_view, std::string_view v) {
           c.pipeline.strategy_per_batch.clear();
           for (const auto& s : split(v, ',')) c.pipeline.strategy_per_batch.push_back(signal_strategy_from_string(s));
         },
         [](const RunConfig& c) {
           std::vector<std::string> names;
           for (auto s : c.pipeline.strategy_per_batch) names.emplace_back(to_string(s));
           return join(names);
         }});
    add("pipeline.online_interleave", bool_field(ACC(pipeline.online_interleave)));
    add("pipeline.online_steps", int_field(ACC(pipeline.online_steps)));
    add("pipeline.fresh_prompts", bool_field(ACC(pipeline.fresh_prompts)));

    add("online.iterations", int_field(ACC(online.iterations)));
    add("online.n_prompts", int_field(ACC(online.n_prompts)));
    add("online.k", int_field(ACC(online.k)));
    add("online.lr", double_field(ACC(online.lr)));

    add("eval.K", int_field(ACC(eval.K)));
    add("eval.n_eval_prompts", int_field(ACC(eval.n_eval_prompts)));
    add("eval.temperature", double_field(ACC(eval.temperature)));
    add("eval.every", int_field(ACC(eval.every)));

    add("metrics.kl_rollouts", int_field(ACC(kl_rollouts)));
    add("log.timing", bool_field(ACC(log_timing)));
    return r;
  }();
  return reg;
}

#undef ACC

const Field& find_field(std::string_view key) {
  for (const auto& [k, f] : registry()) {
    if (k == key) return f;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { find_field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : registry()) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  env.validate();
  stage1.loss.validate();
  if (model.hidden < 1) throw ConfigError("model.hidden must be positive");
  if (rollout.n_prompts < 1) throw ConfigError("rollout.n_prompts must be >= 1");
  if (rollout.k < 2) throw ConfigError("rollout.k must be >= 2");
  if (!(rollout.temperature > 0)) throw ConfigError("rollout.temperature must be positive");
  if (stage1.steps < 0) throw ConfigError("stage1.steps must be nonnegative");
  if (stage1.minibatch < 1) throw ConfigError("stage1.minibatch must be positive");
  if (stage1.minibatch > rollout.n_prompts * rollout.k) {
    throw ConfigError(fmt::format("stage1.minibatch {} exceeds the {} trajectories per batch", stage1.minibatch,
                                  rollout.n_prompts * rollout.k));
  }
  if (stage1.recovery_loss != "none") loss_kind_from_string(stage1.recovery_loss);
  for (const auto& t : stage1.extra_teachers) loss_kind_from_string(t);
  if (stage2.steps < 0) throw ConfigError("stage2.steps must be nonnegative");
  if (stage2.minibatch < 0 || stage2.minibatch > rollout.n_prompts * rollout.k) {
    throw ConfigError("stage2.minibatch must be in [0, trajectories per batch]");
  }
  if (!(stage2.eps_low > 0 && stage2.eps_low < 1) || !(stage2.eps_high > 0 && stage2.eps_high < 1)) {
    throw ConfigError("stage2 clip thresholds must be in (0,1)");
  }
  if (stage2.kl_weight < 0 || stage2.entropy_weight < 0) throw ConfigError("stage2 weights must be nonnegative");
  for (const auto& e : stage2.ensemble) {
    if (e.steps < 1) throw ConfigError("stage2.ensemble block lengths must be positive");
  }
  if (pipeline.n_batches < 1) throw ConfigError("pipeline.n_batches must be >= 1");
  if (online.iterations < 0 || online.n_prompts < 1 || online.k < 2) throw ConfigError("invalid online settings");
  if (eval.K < 1 || eval.n_eval_prompts < 1) throw ConfigError("eval.K and eval.n_eval_prompts must be >= 1");
  if (kl_rollouts < 1) throw ConfigError("metrics.kl_rollouts must be >= 1");
}

RunConfig parse_config(std::string_view text, RunConfig cfg) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' is not key=value", o));
    cfg.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& key : cfg.keys()) out += fmt::format("{} = {}\n", key, cfg.get(key));
  return out;
}

}  // namespace erpd
