#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "erpd/config.hpp"
#include "erpd/distill.hpp"
#include "erpd/env.hpp"
#include "erpd/metrics.hpp"
#include "erpd/policy.hpp"
#include "erpd/snapshot_store.hpp"

namespace erpd {

/// Deterministic child seed for a named purpose.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0);

/// Random initialisation followed by the optional supervised warm start.
PolicyParams make_base_policy(const RunConfig& cfg);

std::vector<std::vector<Token>> eval_prompts(const RunConfig& cfg);
std::vector<std::vector<Token>> validation_prompts(const RunConfig& cfg);

AvgAtK evaluate_policy(const PolicyParams& policy, const RunConfig& cfg);

/// The rollout batch the pipeline collects for batch index `b`.
TrajectoryBatch collect_pipeline_batch(const PolicyParams& policy, const RunConfig& cfg, int b);

struct Stage1Result {
  SnapshotStore store;  // "old", "extreme", "unlearned", "step_<n>" history
  std::vector<MetricsRow> metrics;
  ValueParams value;    // PPO only
};

/// Multi-step optimisation of the teacher loss on a fixed batch. Never
/// collects new rollouts. Throws DivergenceError on a non-finite objective.
Stage1Result stage1_train(const PolicyParams& base, const TrajectoryBatch& batch, const RunConfig& cfg,
                          std::uint64_t stream = 0);

struct Stage2Result {
  PolicyParams student;
  std::vector<MetricsRow> metrics;
  std::vector<TokenSignal> signals;  // as built at step 0, one per signal spec
};

/// Distils the configured signal (or ensemble) into the "old" snapshot.
/// Missing tags raise ConfigError before any update.
Stage2Result stage2_distill(const SnapshotStore& store, const TrajectoryBatch& batch, const RunConfig& cfg,
                            std::uint64_t stream = 0);

struct BatchReport {
  int batch = 0;
  SignalStrategy strategy = SignalStrategy::s1_fixed_old;
  AvgAtK base;
  AvgAtK teacher;
  AvgAtK student;
  double teacher_reverse_kl = 0.0;
  double student_reverse_kl = 0.0;
};

inline constexpr std::string_view kReportHeader =
    "batch,strategy,base_avg_at_k,teacher_avg_at_k,student_avg_at_k,avg_at_k_se,teacher_reverse_kl,student_reverse_kl";
std::string format_report_row(const BatchReport& r);

struct PipelineResult {
  PolicyParams final_policy;
  std::vector<BatchReport> report;
  std::vector<MetricsRow> metrics;
};

/// Iterated collect -> stage1 -> stage2, the student seeding the next batch.
/// With `out_dir`, writes out/batch_<b>/{teacher.ckpt, student.ckpt,
/// metrics.csv, batch.dump, report.csv} and out/report.csv. With `resume`,
/// batches whose student checkpoint and report already exist are skipped.
PipelineResult run_pipeline(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            bool resume = false);

struct OnlineResult {
  PolicyParams policy;
  std::vector<MetricsRow> metrics;
  long updates = 0;
};

/// On-policy baseline: each iteration collects a small batch with the
/// current policy and takes one GRPO step on it.
OnlineResult run_online(const RunConfig& cfg, const PolicyParams* start = nullptr, long step_offset = 0);

}  // namespace erpd
