// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "erpd/cli.hpp"
#include "erpd/distill.hpp"
#include "erpd/harness.hpp"
#include "erpd/losses.hpp"
#include "support.hpp"

using namespace erpd;
using namespace erpd::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, bool pass, double seconds, const std::string& detail) {
  if (!pass) ++failures;
  fmt::print("criterion {:2d} {} ({:.1f} s) {}\n", id, pass ? "PASS" : "FAIL", seconds, detail);
  std::fflush(stdout);
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

RunConfig config(const std::string& name) { return load_config(std::string(ERPD_CONFIG_DIR) + "/" + name); }

// ---------------------------------------------------------------- criterion 1

using FlatObjective = std::function<double(const Instance&, const PolicyParams&)>;
using FlatGradient = std::function<Vector(const Instance&)>;

bool near_kink(const Instance& in, double lo, double hi) {
  for (const TokenRow& row : in.table.rows) {
    const double r = std::exp(log_prob(in.policy, row.state, row.action) - row.behavior_logp);
    if (std::abs(r - lo) < 1e-3 || std::abs(r - hi) < 1e-3) return true;
  }
  return false;
}

double worst_policy_error(const FlatObjective& f, const FlatGradient& g, bool clipped) {
  double worst = 0.0;
  int used = 0;
  for (std::uint64_t seed = 1; used < 50; ++seed) {
    const Instance in = random_instance(seed, seed % 2 ? EnvKind::reverse_copy : EnvKind::modsum);
    if (clipped && near_kink(in, 0.8, 1.28)) continue;
    ++used;
    const Vector fd = finite_difference(
        on_flat(in.policy.dims(), [&](const PolicyParams& q) { return f(in, q); }), in.policy.flat());
    worst = std::max(worst, max_relative_error(g(in), fd));
  }
  return worst;
}

ValueParams random_value(const Instance& in) {
  Rng rng = derive_stream(in.table.token_count(), 91);
  std::normal_distribution<double> n(0.0, 0.3);
  ValueParams v = ValueParams::zeros(in.env.feature_size());
  for (Eigen::Index i = 0; i < v.w.size(); ++i) v.w[i] = n(rng);
  v.b = n(rng);
  return v;
}

std::vector<double> random_signal(const Instance& in) {
  Rng rng = derive_stream(in.table.token_count(), 92);
  std::normal_distribution<double> n;
  std::vector<double> s(in.table.token_count());
  for (double& x : s) x = n(rng);
  return s;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  LossSpec grpo, sapo, ce, ppo;
  sapo.kind = LossKind::sapo;
  ce.kind = LossKind::ce;
  ce.beta = 0.7;
  ppo.kind = LossKind::ppo;
  const DistillSettings ds{0.2, 0.28, 0.1, 0.05};

  std::vector<std::pair<std::string, double>> errs;
  errs.emplace_back("grpo", worst_policy_error(
                                [&](const Instance& in, const PolicyParams& q) {
                                  return grpo_loss_and_grad(in.table, {}, q, grpo).value;
                                },
                                [&](const Instance& in) { return grpo_loss_and_grad(in.table, {}, in.policy, grpo).grad; },
                                true));
  errs.emplace_back("ppo_policy", worst_policy_error(
                                      [&](const Instance& in, const PolicyParams& q) {
                                        return ppo_loss_and_grad(in.table, {}, q, random_value(in), ppo).objective;
                                      },
                                      [&](const Instance& in) {
                                        return ppo_loss_and_grad(in.table, {}, in.policy, random_value(in), ppo).grad;
                                      },
                                      true));
  errs.emplace_back("sapo", worst_policy_error(
                                [&](const Instance& in, const PolicyParams& q) {
                                  return sapo_loss_and_grad(in.table, {}, q, sapo).value;
                                },
                                [&](const Instance& in) { return sapo_loss_and_grad(in.table, {}, in.policy, sapo).grad; },
                                false));
  errs.emplace_back("ce", worst_policy_error(
                              [&](const Instance& in, const PolicyParams& q) {
                                return ce_loss_and_grad(in.table, {}, q, in.collector, ce).value;
                              },
                              [&](const Instance& in) {
                                return ce_loss_and_grad(in.table, {}, in.policy, in.collector, ce).grad;
                              },
                              false));
  errs.emplace_back("mse", worst_policy_error(
                               [&](const Instance& in, const PolicyParams& q) { return mse_loss_and_grad(in.table, {}, q).value; },
                               [&](const Instance& in) { return mse_loss_and_grad(in.table, {}, in.policy).grad; }, false));
  errs.emplace_back("distill", worst_policy_error(
                                   [&](const Instance& in, const PolicyParams& q) {
                                     return distill_objective(in.table, {}, q, random_signal(in), ds).value;
                                   },
                                   [&](const Instance& in) {
                                     return distill_objective(in.table, {}, in.policy, random_signal(in), ds).grad;
                                   },
                                   true));
  errs.emplace_back("entropy", worst_policy_error(
                                   [&](const Instance& in, const PolicyParams& q) {
                                     return entropy_regularizer(in.table, {}, q).value;
                                   },
                                   [&](const Instance& in) { return entropy_regularizer(in.table, {}, in.policy).grad; },
                                   false));
  errs.emplace_back("kl", worst_policy_error(
                              [&](const Instance& in, const PolicyParams& q) {
                                return kl_penalty(in.table, {}, q, in.collector).value;
                              },
                              [&](const Instance& in) { return kl_penalty(in.table, {}, in.policy, in.collector).grad; },
                              false));

  double worst_value = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Instance in = random_instance(seed);
    const int feat = in.env.feature_size();
    const ValueParams v0 = random_value(in);
    Vector x(feat + 1);
    x << v0.w, v0.b;
    auto unpack = [feat](const Vector& y) { return ValueParams{y.head(feat), y[feat]}; };
    const auto targets = gae(in.table, v0, 1.0).returns;
    const auto r = value_loss_and_grad(in.table, {}, v0, targets);
    Vector g(feat + 1);
    g << r.grad.w, r.grad.b;
    const Vector fd =
        finite_difference([&](const Vector& y) { return value_loss_and_grad(in.table, {}, unpack(y), targets).value; }, x);
    worst_value = std::max(worst_value, max_relative_error(g, fd));
  }
  errs.emplace_back("ppo_value", worst_value);

  double worst = 0.0;
  std::string detail;
  for (const auto& [name, e] : errs) {
    worst = std::max(worst, e);
    detail += fmt::format(" {}={:.1e}", name, e);
  }
  const double secs = since(t0);
  report(1, worst < 1e-4 && secs < 60.0, secs,
         fmt::format("gradient fidelity, max rel err over 50 instances each:{}", detail));
}

// ---------------------------------------------------------------- criterion 2

void criterion_clip() {
  const auto t0 = Clock::now();
  const EnvSpec env = small_env();
  Rng rng = derive_stream(201);
  const PolicyParams p = random_params(dims_for(env), rng);
  LossSpec grpo, sapo, ppo;
  sapo.kind = LossKind::sapo;
  ppo.kind = LossKind::ppo;
  ppo.ppo_lambda_mode = LambdaMode::fixed_one;
  const ValueParams v0 = ValueParams::zeros(env.feature_size());
  bool ok = true;
  int checked = 0;
  double min_sapo = 1e300;
  for (double r = 0.05; r < 3.0; r += 0.05) {
    if (std::abs(r - 0.8) < 1e-6 || std::abs(r - 1.28) < 1e-6) continue;
    // two single-token trajectories, rewards 1 and 0, ratio r on both
    TrajectoryBatch b;
    b.env = env;
    b.prompts = {{0, 0}};
    b.groups.resize(1);
    for (int reward : {1, 0}) {
      Trajectory t;
      t.prompt = b.prompts[0];
      t.actions = {env.eos_token};
      t.reward = reward;
      t.behavior_logps = {log_prob(p, encode_state(env, t.prompt, {}), env.eos_token) - std::log(r)};
      b.groups[0].push_back(t);
    }
    const TokenTable t = build_token_table(b);
    const std::size_t pos[] = {0}, neg[] = {1};
    const double gp = grpo_loss_and_grad(t, pos, p, grpo).grad.cwiseAbs().maxCoeff();
    const double gn = grpo_loss_and_grad(t, neg, p, grpo).grad.cwiseAbs().maxCoeff();
    const double pp = ppo_loss_and_grad(t, pos, p, v0, ppo).grad.cwiseAbs().maxCoeff();
    const double sp = sapo_loss_and_grad(t, pos, p, sapo).grad.cwiseAbs().maxCoeff();
    const double sn = sapo_loss_and_grad(t, neg, p, sapo).grad.cwiseAbs().maxCoeff();
    ok &= r > 1.28 ? gp == 0.0 : gp > 1e-12;
    ok &= r < 0.8 ? gn == 0.0 : gn > 1e-12;
    ok &= r > 1.28 ? pp == 0.0 : pp > 1e-12;
    ok &= sp > 1e-12 && sn > 1e-12;
    min_sapo = std::min({min_sapo, sp, sn});
    ++checked;
  }
  report(2, ok, since(t0),
         fmt::format("clip semantics on {} single-token ratios: dead zones exactly 0, smallest SAPO grad {:.2e}", checked,
                     min_sapo));
}

// ---------------------------------------------------------------- criterion 3

void criterion_whitening() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst_mean = 0.0, worst_std = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = derive_stream(seed, 301);
    std::normal_distribution<double> n(0.0, 0.05 + 0.1 * double(seed % 20));
    std::vector<double> v(2 + seed % 300);
    for (double& x : v) x = n(rng) + double(seed % 7);
    const auto w = whiten(v);
    double mean = 0.0, var = 0.0;
    for (double x : w) mean += x;
    mean /= double(w.size());
    for (double x : w) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / double(w.size())) - 1.0));
  }
  ok &= worst_mean < 1e-9 && worst_std < 1e-6;
  for (const auto& degenerate : {std::vector<double>{}, std::vector<double>{3.0}, std::vector<double>(9, -0.25)}) {
    for (double x : whiten(degenerate)) ok &= x == 0.0;
  }
  int composed = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Instance in = random_instance(seed);
    SnapshotStore store;
    store.put(snapshot(in.policy, 1, "extreme"));
    store.put(snapshot(in.collector, 0, "old"));
    for (MaskMode m : {MaskMode::none, MaskMode::keep_nonneg, MaskMode::keep_nonpos}) {
      SignalSpec spec;
      spec.mask = m;
      const TokenSignal sig = build_signal(in.table, spec, store);
      ok &= sig.values == whiten(mask_signal(raw_log_ratio(in.table, in.policy, in.collector), m).values);
      ++composed;
    }
  }
  report(3, ok, since(t0),
         fmt::format("whitening: worst |mean| {:.1e}, worst |std-1| {:.1e}; degenerate -> zeros; {} mask-then-whiten "
                     "compositions exact",
                     worst_mean, worst_std, composed));
}

// ---------------------------------------------------------------- criterion 4

EnvSpec one_step_env() {
  EnvSpec env;
  env.kind = EnvKind::parity;
  env.prompt_len = 1;
  env.vocab = 4;
  env.eos_token = 3;
  env.max_gen_len = 2;
  env.history = 1;
  return env;
}

// Every token is drawn from the same state-independent distribution, so the
// exact per-token reverse KL is a single sum over the vocabulary.
PolicyParams fixed_dist(const ModelDims& dims, const std::vector<double>& p) {
  PolicyParams q = PolicyParams::zeros(dims);
  for (int a = 0; a < dims.vocab; ++a) q.b2()[a] = p[std::size_t(a)] > 0 ? std::log(p[std::size_t(a)]) : -1e3;
  return q;
}

void criterion_kl() {
  const auto t0 = Clock::now();
  const EnvSpec env = one_step_env();
  const ModelDims dims = dims_for(env, 3);
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> cases = {
      {{0.8, 0.2, 0, 0}, {0.5, 0.5, 0, 0}},
      {{0.1, 0.6, 0.3, 0}, {0.3, 0.3, 0.4, 0}},
      {{0.05, 0.05, 0.9, 0}, {0.4, 0.4, 0.2, 0}},
  };
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& [pi, ref] = cases[i];
    double exact = 0.0;
    for (std::size_t a = 0; a < pi.size(); ++a) {
      if (pi[a] > 0) exact += pi[a] * std::log(pi[a] / ref[a]);
    }
    const KlEstimate k = reverse_kl_estimate(fixed_dist(dims, pi), fixed_dist(dims, ref), env, 5000, 400 + i);
    const double z = std::abs(k.mean - exact) / k.std_error;
    ok &= k.tokens >= 10000 && z < 3.0;
    detail += fmt::format(" exact {:.6f} est {:.6f} ({:.2f} SE);", exact, k.mean, z);
  }
  Rng rng = derive_stream(402);
  const PolicyParams p = random_params(dims, rng);
  const KlEstimate same = reverse_kl_estimate(p, p, env, 1000, 5);
  ok &= same.mean == 0.0;
  report(4, ok, since(t0), fmt::format("reverse-KL estimator at 1e4 tokens:{} identical policies -> {}", detail, same.mean));
}

// ------------------------------------------------------- criteria 5, 8 and 9

struct CeRun {
  RunConfig cfg;
  PolicyParams base;
  TrajectoryBatch batch;
  Stage1Result s1;
  double stage1_seconds = 0.0;
};

CeRun ce_teacher() {
  const auto t0 = Clock::now();
  CeRun run;
  run.cfg = config("reverse_copy_ce.cfg");
  run.cfg.stage1.snapshot_every = 1;
  run.base = make_base_policy(run.cfg);
  run.batch = collect_pipeline_batch(run.base, run.cfg, 0);
  run.s1 = stage1_train(run.base, run.batch, run.cfg);
  run.stage1_seconds = since(t0);
  return run;
}

void criterion_ce_trend(const CeRun& run) {
  const auto t0 = Clock::now();
  std::vector<AvgAtK> score;
  for (const PolicySnapshot& snap : run.s1.store.history()) score.push_back(evaluate_policy(snap.params(), run.cfg));
  const std::size_t last = score.size() - 1;
  std::size_t prefix_best = 0;
  for (std::size_t t = 1; t <= 4; ++t)
    if (score[t].mean > score[prefix_best].mean) prefix_best = t;
  std::size_t late_best = 21;
  for (std::size_t t = 21; t <= last; ++t)
    if (score[t].mean > score[late_best].mean) late_best = t;
  const double se = std::hypot(score[late_best].std_error, score[prefix_best].std_error);
  const double margin = score[late_best].mean - score[prefix_best].mean;
  const double secs = run.stage1_seconds + since(t0);
  const bool ok = margin > 2.0 * se && score[last].mean > score[20].mean && secs < 300.0;
  report(5, ok, secs,
         fmt::format("CE stage 1 AVG@K: best of steps 0-4 {:.4f}, step 20 {:.4f}, best after 20 {:.4f} (step {}), "
                     "final {:.4f}; margin {:.4f} vs 2 SE {:.4f}",
                     score[prefix_best].mean, score[20].mean, score[late_best].mean, late_best, score[last].mean,
                     margin, 2.0 * se));
}

void criterion_kl_efficiency(const CeRun& run, const Stage2Result& fixed, double stage2_seconds) {
  const auto t0 = Clock::now();
  const PolicyParams& teacher = run.s1.store.get("extreme").params();
  const AvgAtK t = evaluate_policy(teacher, run.cfg), s = evaluate_policy(fixed.student, run.cfg);
  const std::uint64_t kseed = 0x6b6c5f6566ULL;
  const KlEstimate kt = reverse_kl_estimate(teacher, run.base, run.cfg.env, 4000, kseed);
  const KlEstimate ks = reverse_kl_estimate(fixed.student, run.base, run.cfg.env, 4000, kseed);
  const double secs = run.stage1_seconds + stage2_seconds + since(t0);
  const bool ok = s.mean >= 0.95 * t.mean && ks.mean <= 0.6 * kt.mean && secs < 600.0;
  report(8, ok, secs,
         fmt::format("student/teacher AVG@K {:.4f}/{:.4f} = {:.3f} (need >= 0.95), reverse KL to base "
                     "{:.4f}/{:.4f} = {:.3f} (need <= 0.6)",
                     s.mean, t.mean, s.mean / t.mean, ks.mean, kt.mean, ks.mean / kt.mean));
}

void criterion_surpass(const CeRun& run, const Stage2Result& fixed, double fixed_seconds) {
  const auto t0 = Clock::now();
  RunConfig evo_cfg = run.cfg;
  evo_cfg.stage2.signal.strategy = SignalStrategy::s1_evolving;
  const Stage2Result evo = stage2_distill(run.s1.store, run.batch, evo_cfg);
  const AvgAtK f = evaluate_policy(fixed.student, run.cfg), e = evaluate_policy(evo.student, run.cfg);
  const std::size_t n = evo.metrics.size();
  double tail = 0.0;
  std::size_t count = 0;
  for (std::size_t i = n - n / 4; i < n; ++i, ++count) tail += *evo.metrics[i].ratio_diag;
  tail /= double(count);
  const double fixed_final = *fixed.metrics.back().ratio_diag;
  const double secs = run.stage1_seconds + fixed_seconds + since(t0);
  const bool ok = f.mean >= e.mean && std::abs(tail - 1.0) < 0.1 && fixed_final > 1.0 && secs < 600.0;
  report(9, ok, secs,
         fmt::format("AVG@K fixed {:.4f} vs evolving {:.4f}; ratio diagnostic evolving (last quarter mean) {:.3f}, "
                     "fixed final {:.3f}",
                     f.mean, e.mean, tail, fixed_final));
}

// ---------------------------------------------------------------- criterion 6

void criterion_unlearn_recover() {
  const auto t0 = Clock::now();
  const RunConfig cfg = config("parity_mse.cfg");
  const PolicyParams base = make_base_policy(cfg);
  const Stage1Result s1 = stage1_train(base, collect_pipeline_batch(base, cfg, 0), cfg);
  const double init = *s1.metrics.front().pos_prob;
  double lo = init;
  std::size_t lo_step = 0;
  for (std::size_t i = 0; i < s1.metrics.size(); ++i) {
    if (*s1.metrics[i].pos_prob < lo) {
      lo = *s1.metrics[i].pos_prob;
      lo_step = i;
    }
  }
  const double fin = *s1.metrics.back().pos_prob;
  const auto ev = s1.metrics.back().explained_var;
  const double secs = since(t0);
  const bool ok = lo < 0.9 * init && fin > 1.1 * lo && ev && *ev > 0.9 && secs < 300.0;
  report(6, ok, secs,
         fmt::format("MSE pos_prob {:.4f} -> min {:.4f} (step {}) -> final {:.4f}; final explained variance {}", init, lo,
                     lo_step, fin, ev ? fmt::format("{:.4f}", *ev) : std::string("absent")));
}

// ---------------------------------------------------------------- criterion 7

void criterion_weak_to_strong() {
  const auto t0 = Clock::now();
  const RunConfig cfg = config("weak_to_strong.cfg");
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  const Stage1Result s1 = stage1_train(base, batch, cfg);
  const Stage2Result s2 = stage2_distill(s1.store, batch, cfg);
  const AvgAtK b = evaluate_policy(base, cfg);
  const AvgAtK t = evaluate_policy(s1.store.get("extreme").params(), cfg);
  const AvgAtK s = evaluate_policy(s2.student, cfg);
  const double se = std::hypot(s.std_error, b.std_error);
  const double secs = since(t0);
  const bool ok = t.mean < b.mean && s.mean - b.mean > 2.0 * se && secs < 600.0;
  report(7, ok, secs,
         fmt::format("AVG@K base {:.4f}, MSE teacher {:.4f}, unlearned-denominator student {:.4f}; gain {:.4f} vs 2 SE "
                     "{:.4f}",
                     b.mean, t.mean, s.mean, s.mean - b.mean, 2.0 * se));
}

// --------------------------------------------------------------- criterion 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "erpd_acceptance_det";
  fs::remove_all(root);
  const std::string cfg = std::string(ERPD_CONFIG_DIR) + "/reverse_copy_ce.cfg";
  const std::vector<std::string> small = {"--set", "stage1.steps=20", "--set", "stage2.steps=8",
                                          "--set", "pipeline.n_batches=2", "--set", "online.iterations=10"};
  bool ok = true;
  std::ostringstream sink;
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run;
    for (const char* cmd : {"pipeline", "online", "train-teacher"}) {
      std::vector<std::string> args{cmd, "--config", cfg, "--out", (out / cmd).string()};
      args.insert(args.end(), small.begin(), small.end());
      ok &= cli_main(args) == 0;
    }
    std::vector<std::string> d{"distill", "--config", cfg, "--from", (out / "train-teacher").string(), "--out",
                               (out / "distill").string(), "--emit-signal"};
    d.insert(d.end(), small.begin(), small.end());
    ok &= cli_main(d) == 0;
    ok &= cli_main({"eval", "--config", cfg, "--policy", (out / "distill" / "student.ckpt").string(), "--out",
                    (out / "eval").string()}) == 0;
  }
  std::cout.rdbuf(old_out);
  int csvs = 0, ckpts = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    const std::string ext = e.path().extension().string();
    if (ext == ".csv") {
      ok &= slurp(e.path()) == slurp(other);
      ++csvs;
    } else if (ext == ".ckpt") {
      const auto x = load_checkpoint(e.path().string()), y = load_checkpoint(other.string());
      ok &= x.params().flat() == y.params().flat() && x.step() == y.step();
      ++ckpts;
    }
  }
  fs::remove_all(root);
  report(10, ok && csvs > 0 && ckpts > 0, since(t0),
         fmt::format("two runs of pipeline/online/train-teacher/distill/eval: {} CSVs byte-identical, {} checkpoints "
                     "value-exact",
                     csvs, ckpts));
}

// --------------------------------------------------------------- criterion 11

void criterion_pipeline() {
  const auto t0 = Clock::now();
  const RunConfig cfg = config("reverse_copy_ce.cfg");
  const PipelineResult r = run_pipeline(cfg);
  bool ok = r.report.size() == 3;
  std::string trace;
  for (std::size_t b = 0; b < r.report.size(); ++b) {
    trace += fmt::format("{}{:.4f}", b ? " -> " : "", r.report[b].student.mean);
    if (b > 0) {
      const double tol = std::max(r.report[b].student.std_error, r.report[b - 1].student.std_error);
      ok &= r.report[b].student.mean >= r.report[b - 1].student.mean - tol;
    }
  }
  const double secs = since(t0);
  report(11, ok && secs < 1200.0, secs, fmt::format("3-batch pipeline student AVG@K {}", trace));
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_clip();
  criterion_whitening();
  criterion_kl();

  const CeRun ce = ce_teacher();
  criterion_ce_trend(ce);
  criterion_unlearn_recover();
  criterion_weak_to_strong();
  const auto t0 = Clock::now();
  const Stage2Result fixed = stage2_distill(ce.s1.store, ce.batch, ce.cfg);
  const double fixed_seconds = since(t0);
  criterion_kl_efficiency(ce, fixed, fixed_seconds);
  criterion_surpass(ce, fixed, fixed_seconds);
  criterion_determinism();
  criterion_pipeline();

  fmt::print("{} of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
