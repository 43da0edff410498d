#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "erpd/errors.hpp"
#include "erpd/harness.hpp"

using namespace erpd;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() {
  return parse_config(R"(
seed = 3
env.kind = reverse_copy
env.prompt_len = 2
env.vocab = 5
env.eos_token = 4
env.max_gen_len = 4
env.history = 2
model.hidden = 8
base.pretrain_steps = 20
base.pretrain_prompts = 8
base.pretrain_lr = 0.03
rollout.n_prompts = 4
rollout.k = 4
stage1.loss = grpo
stage1.steps = 6
stage1.minibatch = 8
stage1.lr = 0.02
stage1.snapshot_every = 2
stage1.unlearn_capture_step = 3
stage2.steps = 3
stage2.lr = 0.01
eval.K = 4
eval.n_eval_prompts = 8
eval.every = 2
metrics.kl_rollouts = 16
)");
}

std::string csv_text(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  write_metrics_csv(out, rows);
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("stage 1 with zero steps: extreme is old and the distilled student is old") {
  RunConfig cfg = tiny();
  cfg.stage1.steps = 0;
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  const Stage1Result s1 = stage1_train(base, batch, cfg);
  CHECK(s1.store.get("extreme").params().flat() == base.flat());
  CHECK(s1.metrics.size() == 1);
  const Stage2Result s2 = stage2_distill(s1.store, batch, cfg);
  for (double v : s2.signals.front().values) CHECK(v == 0.0);
  CHECK(s2.student.flat() == base.flat());
  CHECK(s2.metrics.size() == std::size_t(cfg.stage2.steps) + 1);
}

TEST_CASE("stage 1: snapshot schedule, fixed batch, metrics per step, determinism") {
  const RunConfig cfg = tiny();
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  const std::string before = batch_to_string(batch);
  const Stage1Result s1 = stage1_train(base, batch, cfg);
  CHECK(batch_to_string(batch) == before);
  for (const auto& g : batch.groups)
    for (const auto& t : g) CHECK(terminal_reward(cfg.env, t.prompt, t.actions) == t.reward);

  CHECK(s1.store.get("old").params().flat() == base.flat());
  CHECK(s1.store.get("unlearned").step() == 3);
  CHECK(s1.store.get("extreme").step() == 6);
  CHECK(s1.store.get("extreme").params().flat() != base.flat());
  REQUIRE(s1.store.history().size() == 4);  // steps 0, 2, 4, 6
  for (std::size_t i = 1; i < s1.store.history().size(); ++i) {
    CHECK(s1.store.history()[i].step() > s1.store.history()[i - 1].step());
  }

  REQUIRE(s1.metrics.size() == 7);
  for (std::size_t i = 0; i < s1.metrics.size(); ++i) {
    const MetricsRow& r = s1.metrics[i];
    CHECK(r.step == long(i));
    CHECK(r.phase == Phase::stage1);
    CHECK(std::isfinite(r.reverse_kl));
    CHECK(r.entropy >= 0.0);
    CHECK(r.entropy <= std::log(double(cfg.env.vocab)) + 1e-12);
    CHECK(r.avg_at_k.has_value() == (i % 2 == 0));
  }
  CHECK(s1.metrics.front().reverse_kl == 0.0);

  const Stage1Result again = stage1_train(base, batch, cfg);
  CHECK(csv_text(again.metrics) == csv_text(s1.metrics));
  CHECK(again.store.get("extreme").params().flat() == s1.store.get("extreme").params().flat());
}

TEST_CASE("every teacher loss trains without diverging") {
  for (const char* loss : {"grpo", "ppo", "sapo", "ce", "mse", "sft"}) {
    INFO(loss);
    RunConfig cfg = tiny();
    cfg.set("stage1.loss", loss);
    const PolicyParams base = make_base_policy(cfg);
    const Stage1Result s1 = stage1_train(base, collect_pipeline_batch(base, cfg, 0), cfg);
    CHECK(s1.metrics.size() == 7);
    for (const auto& r : s1.metrics) CHECK(std::isfinite(r.objective));
  }
}

TEST_CASE("stage 1 divergence names the step") {
  const RunConfig cfg = tiny();
  const PolicyParams base = make_base_policy(cfg);
  TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  batch.groups[1][2].behavior_logps[0] = std::nan("");
  try {
    stage1_train(base, batch, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("stage 2: missing tags fail before any update; ratio diagnostic logged") {
  const RunConfig cfg = tiny();
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  SnapshotStore store;
  store.put(snapshot(base, 0, "old"));
  CHECK_THROWS_AS(stage2_distill(store, batch, cfg), ConfigError);

  const Stage1Result s1 = stage1_train(base, batch, cfg);
  const Stage2Result s2 = stage2_distill(s1.store, batch, cfg);
  REQUIRE(s2.metrics.size() == 4);
  for (const auto& r : s2.metrics) {
    CHECK(r.phase == Phase::stage2);
    CHECK(r.ratio_diag.has_value());
  }
  CHECK(*s2.metrics.front().ratio_diag == 0.0);
  CHECK(s2.student.flat() != base.flat());

  RunConfig ens = cfg;
  ens.set("stage1.extra_teachers", "mse");
  ens.set("stage2.ensemble", "s1_fixed_old:extreme:old:none:2;s2_unlearned:extreme_mse:unlearned_mse:none:3");
  const Stage1Result s1e = stage1_train(base, batch, ens);
  CHECK(s1e.store.contains("extreme_mse"));
  const Stage2Result s2e = stage2_distill(s1e.store, batch, ens);
  CHECK(s2e.signals.size() == 2);
  CHECK(s2e.metrics.size() == 6);
}

TEST_CASE("more distillation steps drift further from the base") {
  const RunConfig cfg = tiny();
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  const Stage1Result s1 = stage1_train(base, batch, cfg);
  RunConfig a = cfg, b = cfg;
  a.stage2.steps = 16;
  b.stage2.steps = 32;
  const auto kl = [&](const RunConfig& c) {
    const PolicyParams student = stage2_distill(s1.store, batch, c).student;
    return reverse_kl_estimate(student, base, cfg.env, 2000, 11).mean;
  };
  CHECK(kl(b) >= kl(a));
}

TEST_CASE("pipeline: one batch composes stage 1 and stage 2") {
  RunConfig cfg = tiny();
  const PipelineResult r = run_pipeline(cfg);
  REQUIRE(r.report.size() == 1);
  const PolicyParams base = make_base_policy(cfg);
  const TrajectoryBatch batch = collect_pipeline_batch(base, cfg, 0);
  const Stage1Result s1 = stage1_train(base, batch, cfg, 0);
  const Stage2Result s2 = stage2_distill(s1.store, batch, cfg, 0);
  CHECK(r.final_policy.flat() == s2.student.flat());
}

TEST_CASE("pipeline resume reproduces an uninterrupted run") {
  RunConfig cfg = tiny();
  cfg.pipeline.n_batches = 3;
  cfg.set("pipeline.strategy_per_batch", "s1_fixed_old,s2_unlearned,s3_past_student");
  const fs::path full = scratch("erpd_pipe_full");
  const PipelineResult a = run_pipeline(cfg, full);
  REQUIRE(a.report.size() == 3);
  CHECK(a.report[2].strategy == SignalStrategy::s3_past_student);
  CHECK(fs::exists(full / "batch_2" / "student.ckpt"));
  const std::string report = slurp(full / "report.csv");
  CHECK(report.rfind(std::string(kReportHeader) + "\n", 0) == 0);

  // interrupt after batch 0
  const fs::path part = scratch("erpd_pipe_part");
  fs::create_directories(part);
  fs::copy(full / "batch_0", part / "batch_0");
  const PipelineResult b = run_pipeline(cfg, part, true);
  CHECK(b.final_policy.flat() == a.final_policy.flat());
  CHECK(slurp(part / "report.csv") == report);
  CHECK(csv_text(b.metrics) == csv_text(a.metrics));
  for (int i = 0; i < 3; ++i) {
    const std::string d = "batch_" + std::to_string(i);
    CHECK(slurp(part / d / "metrics.csv") == slurp(full / d / "metrics.csv"));
  }
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST_CASE("online baseline: one update per iteration, deterministic") {
  RunConfig cfg = tiny();
  cfg.online.iterations = 4;
  cfg.online.n_prompts = 3;
  cfg.online.k = 4;
  const OnlineResult a = run_online(cfg);
  CHECK(a.updates == 4);
  CHECK(a.metrics.size() == 5);
  CHECK(a.metrics.back().phase == Phase::online);
  const OnlineResult b = run_online(cfg);
  CHECK(csv_text(a.metrics) == csv_text(b.metrics));
  CHECK(a.policy.flat() == b.policy.flat());
}

TEST_CASE("metrics CSV read back reproduces the file") {
  const RunConfig cfg = tiny();
  const PolicyParams base = make_base_policy(cfg);
  const Stage1Result s1 = stage1_train(base, collect_pipeline_batch(base, cfg, 0), cfg);
  const fs::path p = scratch("erpd_metrics_rt.csv");
  write_metrics_csv(p.string(), s1.metrics);
  CHECK(csv_text(read_metrics_csv(p.string())) == slurp(p));
  fs::remove(p);
}
