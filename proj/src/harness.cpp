#include "erpd/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "erpd/errors.hpp"
#include "erpd/losses.hpp"
#include "erpd/optim.hpp"

namespace erpd {

namespace {

enum Purpose : std::uint64_t {
  kInit = 1,
  kPretrain,
  kEval,
  kValidation,
  kKl,
  kShuffle,
  kBatch,
  kPrompts,
  kOnline,
};

using Clock = std::chrono::steady_clock;

struct StepLogger {
  const RunConfig& cfg;
  const TokenTable& table;
  const PolicyParams& reference;
  std::vector<std::vector<Token>> prompts;
  Clock::time_point start = Clock::now();

  bool eval_due(long step, long last) const {
    if (step == 0 || step == last) return true;
    return cfg.eval.every > 0 && step % cfg.eval.every == 0;
  }

  MetricsRow row(long step, Phase phase, double objective, const PolicyParams& policy, bool with_eval) const {
    MetricsRow r;
    r.step = step;
    r.phase = phase;
    r.objective = objective;
    r.reverse_kl =
        reverse_kl_estimate(policy, reference, cfg.env, std::size_t(cfg.kl_rollouts), sub_seed(cfg.seed, kKl)).mean;
    r.kl_penalty = kl_penalty_to_behavior(table, {}, policy).value;
    r.entropy = batch_entropy(table, policy);
    const PosNegProb pn = pos_neg_prob_track(table, policy);
    r.pos_prob = pn.pos;
    r.neg_prob = pn.neg;
    r.explained_var = batch_explained_variance(table, policy);
    if (with_eval) {
      r.avg_at_k = evaluate_avg_at_k(policy, cfg.env, prompts, std::size_t(cfg.eval.K), cfg.eval.temperature,
                                     sub_seed(cfg.seed, kEval))
                       .mean;
    }
    if (cfg.log_timing) {
      r.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }
    return r;
  }
};

// Cycles through shuffled epochs of trajectory indices.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t size, Rng rng) : perm_(n), size_(size), rng_(std::move(rng)) {
    std::iota(perm_.begin(), perm_.end(), std::size_t(0));
    pos_ = n;
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    if (size_ >= perm_.size()) return out;  // full batch
    while (out.size() < size_) {
      if (pos_ == perm_.size()) {
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(perm_[pos_++]);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<std::size_t> perm_;
  std::size_t size_;
  Rng rng_;
  std::size_t pos_ = 0;
};

void check_finite(double objective, const PolicyParams& policy, long step, std::string_view what) {
  if (!std::isfinite(objective) || !policy.all_finite()) {
    throw DivergenceError(fmt::format("{} diverged at step {} (objective {})", what, step, objective), step);
  }
}

struct Stage1Objective {
  double value = 0.0;
  Vector grad;  // ascent direction
};

Stage1Objective stage1_objective(LossKind kind, const LossSpec& spec, const TokenTable& table, TrajectorySubset subset,
                                 const PolicyParams& policy, const PolicyParams& old, ValueParams& value,
                                 Optimizer* value_opt) {
  Stage1Objective out;
  switch (kind) {
    case LossKind::grpo: {
      auto r = grpo_loss_and_grad(table, subset, policy, spec);
      out = {r.value, std::move(r.grad)};
      break;
    }
    case LossKind::sapo: {
      auto r = sapo_loss_and_grad(table, subset, policy, spec);
      out = {r.value, std::move(r.grad)};
      break;
    }
    case LossKind::ce: {
      auto r = ce_loss_and_grad(table, subset, policy, old, spec);
      out = {r.value, std::move(r.grad)};
      break;
    }
    case LossKind::mse: {
      auto r = mse_loss_and_grad(table, subset, policy);
      out = {-r.value, -r.grad};
      break;
    }
    case LossKind::sft: {
      auto r = sft_loss_and_grad(table, subset, policy);
      out = {r.value, std::move(r.grad)};
      break;
    }
    case LossKind::ppo: {
      auto r = ppo_loss_and_grad(table, subset, policy, value, spec);
      out = {r.objective, std::move(r.grad)};
      if (value_opt) {
        Vector flat(value.w.size() + 1);
        flat << value.w, value.b;
        Vector g(flat.size());
        g << -r.value_grad.w, -r.value_grad.b;
        value_opt->ascend(flat, g);
        value.w = flat.head(value.w.size());
        value.b = flat[flat.size() - 1];
      }
      break;
    }
  }
  if (spec.kl_weight > 0.0) {
    auto kl = kl_penalty_to_behavior(table, subset, policy);
    out.value -= spec.kl_weight * kl.value;
    out.grad -= spec.kl_weight * kl.grad;
  }
  if (spec.entropy_weight > 0.0) {
    auto h = entropy_regularizer(table, subset, policy);
    out.value += spec.entropy_weight * h.value;
    out.grad += spec.entropy_weight * h.grad;
  }
  return out;
}

void pretrain_value(const TokenTable& table, ValueParams& value, const Stage1Config& s1) {
  if (s1.value_pretrain_steps <= 0) return;
  Optimizer opt(OptimizerKind::adam, s1.value_lr);
  for (int i = 0; i < s1.value_pretrain_steps; ++i) {
    const GaeResult g = gae(table, value, 1.0);
    const ValueLossResult vl = value_loss_and_grad(table, {}, value, g.returns);
    Vector flat(value.w.size() + 1);
    flat << value.w, value.b;
    Vector grad(flat.size());
    grad << -vl.grad.w, -vl.grad.b;
    opt.ascend(flat, grad);
    value.w = flat.head(value.w.size());
    value.b = flat[flat.size() - 1];
  }
}

Stage1Result stage1_single(const PolicyParams& base, const TokenTable& table,
                           const RunConfig& cfg, std::uint64_t stream) {
  const Stage1Config& s1 = cfg.stage1;
  Stage1Result out;
  out.store.put(snapshot(base, 0, "old"));
  out.store.put(snapshot(base, 0, "step_0"));
  out.store.record_history(snapshot(base, 0, "step_0"));

  PolicyParams policy = base;
  out.value = ValueParams::zeros(base.dims().feat);
  Optimizer opt(s1.optimizer, s1.lr);
  Optimizer value_opt(OptimizerKind::adam, s1.value_lr);
  MinibatchSampler sampler(table.trajectory_count(), std::size_t(s1.minibatch),
                           derive_stream(cfg.seed, kShuffle, stream));
  StepLogger log{cfg, table, base, eval_prompts(cfg)};
  const auto val_prompts = s1.extreme_select == ExtremeSelect::best_validation ? validation_prompts(cfg)
                                                                                : std::vector<std::vector<Token>>{};
  const bool has_recovery = s1.recovery_loss != "none";
  const LossKind recovery_kind = has_recovery ? loss_kind_from_string(s1.recovery_loss) : s1.loss.kind;

  if (s1.loss.kind == LossKind::ppo) pretrain_value(table, out.value, s1);

  const long last = s1.steps;
  {
    ValueParams v = out.value;
    const auto obj = stage1_objective(s1.loss.kind, s1.loss, table, {}, policy, base, v, nullptr);
    out.metrics.push_back(log.row(0, Phase::stage1, obj.value, policy, log.eval_due(0, last)));
  }

  double best_val = -1.0;
  PolicyParams best = base;
  long best_step = 0;
  auto validate = [&](long step) {
    if (val_prompts.empty()) return;
    const double v = evaluate_avg_at_k(policy, cfg.env, val_prompts, std::size_t(cfg.eval.K), cfg.eval.temperature,
                                       sub_seed(cfg.seed, kValidation))
                         .mean;
    if (v > best_val) {
      best_val = v;
      best = policy;
      best_step = step;
    }
  };
  validate(0);

  bool captured_unlearned = false;
  for (long step = 1; step <= last; ++step) {
    const LossKind kind = has_recovery && step > s1.recovery_start ? recovery_kind : s1.loss.kind;
    const auto subset = sampler.next();
    const auto obj = stage1_objective(kind, s1.loss, table, subset, policy, base, out.value, &value_opt);
    check_finite(obj.value, policy, step, "stage-1 objective");
    opt.ascend(policy.flat(), obj.grad);
    check_finite(obj.value, policy, step, "stage-1 update");
    out.metrics.push_back(log.row(step, Phase::stage1, obj.value, policy, log.eval_due(step, last)));

    if (s1.snapshot_every > 0 && step % s1.snapshot_every == 0) {
      const std::string tag = fmt::format("step_{}", step);
      out.store.put(snapshot(policy, step, tag));
      out.store.record_history(snapshot(policy, step, tag));
    }
    if (step == s1.unlearn_capture_step) {
      out.store.put(snapshot(policy, step, "unlearned"));
      captured_unlearned = true;
    }
    if (s1.validate_every > 0 && step % s1.validate_every == 0) validate(step);
  }
  if (!captured_unlearned) out.store.put(snapshot(policy, last, "unlearned"));
  if (s1.extreme_select == ExtremeSelect::best_validation) {
    validate(last);
    out.store.put(snapshot(best, best_step, "extreme"));
  } else {
    out.store.put(snapshot(policy, last, "extreme"));
  }
  return out;
}

std::vector<MetricsRow> concat(std::vector<MetricsRow> a, const std::vector<MetricsRow>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return derive_stream(seed, purpose, index)();
}

PolicyParams make_base_policy(const RunConfig& cfg) {
  cfg.validate();
  Rng rng = derive_stream(cfg.seed, kInit);
  PolicyParams policy = PolicyParams::random(cfg.dims(), rng, cfg.model.init_scale);
  if (cfg.base.pretrain_steps <= 0) return policy;

  // One correct trajectory per warm-start prompt; maximise its likelihood.
  const auto prompts = sample_prompts(cfg.env, std::size_t(cfg.base.pretrain_prompts), sub_seed(cfg.seed, kPretrain));
  TrajectoryBatch demo;
  demo.env = cfg.env;
  demo.collector = "demo";
  for (const auto& p : prompts.prompts) {
    Trajectory t;
    t.prompt = p;
    t.actions = correct_answer(cfg.env, p);
    t.behavior_logps.assign(t.actions.size(), 0.0);
    t.reward = 1;
    demo.prompts.push_back(p);
    demo.groups.push_back({t});
  }
  const TokenTable table = build_token_table(demo);
  Optimizer opt(OptimizerKind::adam, cfg.base.pretrain_lr);
  for (int i = 0; i < cfg.base.pretrain_steps; ++i) {
    const LossResult r = sft_loss_and_grad(table, {}, policy);
    opt.ascend(policy.flat(), r.grad);
  }
  return policy;
}

std::vector<std::vector<Token>> eval_prompts(const RunConfig& cfg) {
  return sample_prompts(cfg.env, std::size_t(cfg.eval.n_eval_prompts), sub_seed(cfg.seed, kEval)).prompts;
}

std::vector<std::vector<Token>> validation_prompts(const RunConfig& cfg) {
  return sample_prompts(cfg.env, std::size_t(cfg.eval.n_eval_prompts), sub_seed(cfg.seed, kValidation)).prompts;
}

AvgAtK evaluate_policy(const PolicyParams& policy, const RunConfig& cfg) {
  return evaluate_avg_at_k(policy, cfg.env, eval_prompts(cfg), std::size_t(cfg.eval.K), cfg.eval.temperature,
                           sub_seed(cfg.seed, kEval));
}

Stage1Result stage1_train(const PolicyParams& base, const TrajectoryBatch& batch, const RunConfig& cfg,
                          std::uint64_t stream) {
  cfg.validate();
  if (!(base.dims() == cfg.dims())) throw ConfigError("base policy dimensions do not match the config");
  const TokenTable table = build_token_table(batch);
  Stage1Result out = stage1_single(base, table, cfg, stream);
  for (const auto& extra : cfg.stage1.extra_teachers) {
    RunConfig sub = cfg;
    sub.stage1.loss.kind = loss_kind_from_string(extra);
    sub.stage1.extra_teachers.clear();
    Stage1Result r = stage1_single(base, table, sub, stream);
    const auto& ex = r.store.get("extreme");
    const auto& un = r.store.get("unlearned");
    out.store.put(PolicySnapshot(ex.params(), ex.step(), "extreme_" + extra));
    out.store.put(PolicySnapshot(un.params(), un.step(), "unlearned_" + extra));
    out.metrics = concat(std::move(out.metrics), r.metrics);
  }
  return out;
}

Stage2Result stage2_distill(const SnapshotStore& store, const TrajectoryBatch& batch, const RunConfig& cfg,
                            std::uint64_t stream) {
  const Stage2Config& s2 = cfg.stage2;
  std::vector<SignalSpec> specs;
  std::vector<std::size_t> schedule;
  if (!s2.ensemble.empty()) {
    std::vector<int> blocks;
    for (const auto& e : s2.ensemble) {
      SignalSpec s = e.signal;
      s.whiten = s2.signal.whiten;
      specs.push_back(std::move(s));
      blocks.push_back(e.steps);
    }
    schedule = ensemble_schedule(specs.size(), blocks);
  } else {
    specs.push_back(s2.signal);
    schedule.assign(std::size_t(s2.steps), 0);
  }
  if (!store.contains("old")) throw ConfigError("snapshot 'old' not found");
  for (const auto& s : specs) s.validate(store);

  const TokenTable table = build_token_table(batch);
  const PolicyParams& old = store.get("old").params();
  PolicyParams policy = old;

  Stage2Result out;
  for (const auto& s : specs) out.signals.push_back(build_signal(table, s, store, &policy));

  Optimizer opt(s2.optimizer, s2.lr);
  const DistillSettings settings{s2.eps_low, s2.eps_high, s2.kl_weight, s2.entropy_weight};
  MinibatchSampler sampler(table.trajectory_count(), s2.minibatch > 0 ? std::size_t(s2.minibatch) : table.trajectory_count(),
                           derive_stream(cfg.seed, kShuffle, 0x1000 + stream));
  StepLogger log{cfg, table, old, eval_prompts(cfg)};
  const long last = long(schedule.size());

  auto teacher_of = [&](std::size_t idx) -> const PolicyParams& { return store.get(specs[idx].numerator).params(); };
  {
    const auto obj = distill_objective(table, {}, policy, out.signals.front().values, settings);
    MetricsRow r = log.row(0, Phase::stage2, obj.value, policy, log.eval_due(0, last));
    r.ratio_diag = ratio_diagnostic(table, policy, teacher_of(0), old);
    out.metrics.push_back(r);
  }
  for (long step = 1; step <= last; ++step) {
    const std::size_t idx = schedule[std::size_t(step - 1)];
    TokenSignal live_signal;
    const TokenSignal* sig = &out.signals[idx];
    if (sig->recompute_per_step) {
      live_signal = build_signal(table, specs[idx], store, &policy);
      sig = &live_signal;
    }
    const auto subset = sampler.next();
    const auto obj = distill_step(policy, opt, table, subset, *sig, settings);
    check_finite(obj.value, policy, step, "distillation objective");
    MetricsRow r = log.row(step, Phase::stage2, obj.value, policy, log.eval_due(step, last));
    r.ratio_diag = ratio_diagnostic(table, policy, teacher_of(idx), old);
    out.metrics.push_back(r);
  }
  out.student = std::move(policy);
  return out;
}

std::string format_report_row(const BatchReport& r) {
  return fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", r.batch, to_string(r.strategy), r.base.mean,
                     r.teacher.mean, r.student.mean, r.student.std_error, r.teacher_reverse_kl, r.student_reverse_kl);
}

namespace {

BatchReport parse_report_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (f.size() != 8) throw ConfigError(fmt::format("malformed report row '{}'", line));
  BatchReport r;
  r.batch = std::stoi(f[0]);
  r.strategy = signal_strategy_from_string(f[1]);
  r.base.mean = std::stod(f[2]);
  r.teacher.mean = std::stod(f[3]);
  r.student.mean = std::stod(f[4]);
  r.student.std_error = std::stod(f[5]);
  r.teacher_reverse_kl = std::stod(f[6]);
  r.student_reverse_kl = std::stod(f[7]);
  return r;
}

SignalSpec signal_for_batch(const RunConfig& cfg, int b) {
  SignalSpec spec = cfg.stage2.signal;
  const auto& plan = cfg.pipeline.strategy_per_batch;
  if (plan.empty()) return spec;
  const SignalStrategy s = plan[std::min<std::size_t>(std::size_t(b), plan.size() - 1)];
  if (s != spec.strategy) {
    spec.strategy = s;
    spec.denominator.clear();
  }
  return spec;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write {}", p.string()));
  out << text;
}

}  // namespace

TrajectoryBatch collect_pipeline_batch(const PolicyParams& policy, const RunConfig& cfg, int b) {
  const std::uint64_t prompt_seed = sub_seed(cfg.seed, kPrompts, cfg.pipeline.fresh_prompts ? std::uint64_t(b) : 0);
  auto prompts = sample_prompts(cfg.env, std::size_t(cfg.rollout.n_prompts), prompt_seed);
  TrajectoryBatch batch = collect_batch_for_prompts(network_sampler(policy, cfg.env), cfg.env,
                                                    std::move(prompts.prompts), std::size_t(cfg.rollout.k),
                                                    cfg.rollout.temperature, sub_seed(cfg.seed, kBatch, b), "old");
  batch.sampled_with_replacement = prompts.with_replacement;
  return batch;
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir, bool resume) {
  cfg.validate();
  PipelineResult out;
  PolicyParams policy = make_base_policy(cfg);
  std::vector<PolicySnapshot> students;

  for (int b = 0; b < cfg.pipeline.n_batches; ++b) {
    std::optional<std::filesystem::path> dir;
    if (out_dir) {
      dir = *out_dir / fmt::format("batch_{}", b);
      std::filesystem::create_directories(*dir);
    }
    const std::string student_tag = fmt::format("student_b{}", b);

    if (resume && dir && std::filesystem::exists(*dir / "student.ckpt") && std::filesystem::exists(*dir / "report.csv")) {
      PolicySnapshot st = load_checkpoint((*dir / "student.ckpt").string());
      std::ifstream rin(*dir / "report.csv");
      std::string header, line;
      std::getline(rin, header);
      std::getline(rin, line);
      out.report.push_back(parse_report_row(line));
      if (std::filesystem::exists(*dir / "metrics.csv")) {
        out.metrics = concat(std::move(out.metrics), read_metrics_csv((*dir / "metrics.csv").string()));
      }
      policy = st.params();
      students.emplace_back(st.params(), st.step(), student_tag);
      continue;
    }

    RunConfig bcfg = cfg;
    bcfg.stage2.signal = signal_for_batch(cfg, b);

    TrajectoryBatch batch = collect_pipeline_batch(policy, cfg, b);

    Stage1Result s1 = stage1_train(policy, batch, bcfg, std::uint64_t(b));
    for (const auto& st : students) s1.store.put(st);
    Stage2Result s2 = stage2_distill(s1.store, batch, bcfg, std::uint64_t(b));

    const PolicyParams& teacher = s1.store.get(bcfg.stage2.signal.numerator).params();
    BatchReport rep;
    rep.batch = b;
    rep.strategy = bcfg.stage2.signal.strategy;
    rep.base = evaluate_policy(policy, cfg);
    rep.teacher = evaluate_policy(teacher, cfg);
    rep.student = evaluate_policy(s2.student, cfg);
    const std::uint64_t kseed = sub_seed(cfg.seed, kKl, 0x100 + std::uint64_t(b));
    rep.teacher_reverse_kl = reverse_kl_estimate(teacher, policy, cfg.env, std::size_t(cfg.kl_rollouts), kseed).mean;
    rep.student_reverse_kl = reverse_kl_estimate(s2.student, policy, cfg.env, std::size_t(cfg.kl_rollouts), kseed).mean;
    out.report.push_back(rep);

    std::vector<MetricsRow> rows = concat(s1.metrics, s2.metrics);
    PolicyParams next = s2.student;
    if (cfg.pipeline.online_interleave && cfg.pipeline.online_steps > 0) {
      RunConfig ocfg = cfg;
      ocfg.online.iterations = cfg.pipeline.online_steps;
      ocfg.seed = sub_seed(cfg.seed, kOnline, 0x200 + std::uint64_t(b));
      OnlineResult on = run_online(ocfg, &next);
      next = on.policy;
      rows = concat(std::move(rows), on.metrics);
    }

    if (dir) {
      save_checkpoint((*dir / "teacher.ckpt").string(), s1.store.get(bcfg.stage2.signal.numerator));
      save_checkpoint((*dir / "student.ckpt").string(), PolicySnapshot(next, long(b + 1), student_tag));
      save_batch((*dir / "batch.dump").string(), batch);
      write_metrics_csv((*dir / "metrics.csv").string(), rows);
      write_text(*dir / "report.csv", std::string(kReportHeader) + "\n" + format_report_row(rep) + "\n");
    }
    out.metrics = concat(std::move(out.metrics), rows);
    students.emplace_back(next, long(b + 1), student_tag);
    policy = std::move(next);
  }

  if (out_dir) {
    std::string text = std::string(kReportHeader) + "\n";
    for (const auto& r : out.report) text += format_report_row(r) + "\n";
    write_text(*out_dir / "report.csv", text);
  }
  out.final_policy = std::move(policy);
  return out;
}

OnlineResult run_online(const RunConfig& cfg, const PolicyParams* start, long step_offset) {
  cfg.validate();
  OnlineResult out;
  out.policy = start ? *start : make_base_policy(cfg);
  const PolicyParams reference = out.policy;
  Optimizer opt(OptimizerKind::adam, cfg.online.lr);
  const auto prompts = eval_prompts(cfg);
  const long last = cfg.online.iterations;
  auto metrics_row = [&](long it, double objective, const TokenTable& table) {
    StepLogger log{cfg, table, reference, prompts};
    return log.row(step_offset + it, Phase::online, objective, out.policy, log.eval_due(it, last));
  };
  for (long it = 1; it <= last; ++it) {
    const TrajectoryBatch batch = collect_batch(out.policy, cfg.env, std::size_t(cfg.online.n_prompts),
                                                std::size_t(cfg.online.k), cfg.rollout.temperature,
                                                sub_seed(cfg.seed, kOnline, std::uint64_t(it)), "online");
    const TokenTable table = build_token_table(batch);
    if (it == 1) out.metrics.push_back(metrics_row(0, 0.0, table));
    const LossResult r = grpo_loss_and_grad(table, {}, out.policy, cfg.stage1.loss);
    check_finite(r.value, out.policy, it, "online objective");
    opt.ascend(out.policy.flat(), r.grad);
    ++out.updates;
    check_finite(r.value, out.policy, it, "online update");
    out.metrics.push_back(metrics_row(it, r.value, table));
  }
  return out;
}

}  // namespace erpd
