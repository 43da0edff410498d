#include "erpd/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "erpd/errors.hpp"
#include "erpd/harness.hpp"

namespace erpd {

namespace fs = std::filesystem;

constexpr std::uint64_t kEvalKlPurpose = 0x65766b6c;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "dotted-key config file");
  cmd->add_option("--set", args.overrides, "override, e.g. --set stage2.steps=16")->allow_extra_args(false);
  cmd->add_option("--out", args.out, "output directory");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_config(args.config);
  apply_overrides(cfg, args.overrides);
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const CommonArgs& args, const RunConfig& cfg) {
  fs::path out(args.out);
  fs::create_directories(out);
  std::ofstream(out / "config.txt", std::ios::binary) << dump_config(cfg);
  return out;
}

PolicyParams policy_or_base(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return make_base_policy(cfg);
  PolicyParams p = load_checkpoint(path).params();
  if (!(p.dims() == cfg.dims())) throw ConfigError(fmt::format("checkpoint {} does not match the config dims", path));
  return p;
}

SnapshotStore load_store(const fs::path& dir) {
  SnapshotStore store;
  if (!fs::is_directory(dir)) return store;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".ckpt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    PolicySnapshot snap = load_checkpoint(f.string());
    store.put(PolicySnapshot(snap.params(), snap.step(), f.stem().string()));
  }
  return store;
}

void require_tag(const SnapshotStore& store, const std::string& tag, const fs::path& dir) {
  if (!store.contains(tag)) {
    throw ConfigError(fmt::format("snapshot '{}' not found in {} (expected {}.ckpt; run train-teacher first)", tag,
                                  dir.string(), tag));
  }
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Extreme-region policy distillation laboratory"};
  app.require_subcommand(1);

  CommonArgs rollout_args, teacher_args, distill_args, pipeline_args, online_args, eval_args;
  std::string rollout_policy, teacher_batch, distill_from, eval_policy;
  bool emit_signal = false, resume = false;

  auto* rollout = app.add_subcommand("rollout", "collect a rollout batch with the base policy");
  add_common(rollout, rollout_args);
  rollout->add_option("--policy", rollout_policy, "checkpoint to roll out instead of the base policy");

  auto* teacher = app.add_subcommand("train-teacher", "stage 1: multi-step optimisation on one fixed batch");
  add_common(teacher, teacher_args);
  teacher->add_option("--batch", teacher_batch, "batch dump to train on (default: collect one)");

  auto* distill = app.add_subcommand("distill", "stage 2: distil a teacher signal into the old policy");
  add_common(distill, distill_args);
  distill->add_option("--from", distill_from, "train-teacher output directory (default: --out)");
  distill->add_flag("--emit-signal", emit_signal, "write the token signal to signal.tsv");

  auto* pipeline = app.add_subcommand("pipeline", "iterated collect / teacher / distil batches");
  add_common(pipeline, pipeline_args);
  pipeline->add_flag("--resume", resume, "skip batches whose outputs already exist");

  auto* online = app.add_subcommand("online", "on-policy GRPO baseline");
  add_common(online, online_args);

  auto* eval = app.add_subcommand("eval", "AVG@K of a policy");
  add_common(eval, eval_args);
  eval->add_option("--policy", eval_policy, "checkpoint to evaluate (default: base policy)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*rollout) {
      const RunConfig cfg = resolve(rollout_args);
      const fs::path out = prepare_out(rollout_args, cfg);
      const PolicyParams policy = policy_or_base(rollout_policy, cfg);
      const TrajectoryBatch batch = collect_pipeline_batch(policy, cfg, 0);
      save_batch((out / "batch.dump").string(), batch);
      save_checkpoint((out / "old.ckpt").string(), snapshot(policy, 0, "old"));
      std::cout << fmt::format("collected {} trajectories, mean reward {:.4f}{}\n", batch.trajectory_count(),
                               batch.mean_reward(),
                               batch.sampled_with_replacement ? " (prompts sampled with replacement)" : "");
    } else if (*teacher) {
      const RunConfig cfg = resolve(teacher_args);
      const fs::path out = prepare_out(teacher_args, cfg);
      PolicyParams base = make_base_policy(cfg);
      TrajectoryBatch batch;
      if (teacher_batch.empty()) {
        batch = collect_pipeline_batch(base, cfg, 0);
      } else {
        batch = load_batch(teacher_batch);
        const fs::path old = fs::path(teacher_batch).parent_path() / "old.ckpt";
        if (fs::exists(old)) base = load_checkpoint(old.string()).params();
      }
      const Stage1Result r = stage1_train(base, batch, cfg);
      for (const auto& tag : r.store.tags()) save_checkpoint((out / (tag + ".ckpt")).string(), r.store.get(tag));
      save_batch((out / "batch.dump").string(), batch);
      write_metrics_csv((out / "metrics.csv").string(), r.metrics);
    } else if (*distill) {
      const RunConfig cfg = resolve(distill_args);
      const fs::path from = distill_from.empty() ? fs::path(distill_args.out) : fs::path(distill_from);
      const SnapshotStore store = load_store(from);
      require_tag(store, "old", from);
      if (cfg.stage2.ensemble.empty()) {
        require_tag(store, cfg.stage2.signal.numerator, from);
        if (cfg.stage2.signal.strategy != SignalStrategy::s1_evolving) {
          require_tag(store, cfg.stage2.signal.denominator_tag(), from);
        }
      } else {
        for (const auto& e : cfg.stage2.ensemble) {
          require_tag(store, e.signal.numerator, from);
          if (e.signal.strategy != SignalStrategy::s1_evolving) require_tag(store, e.signal.denominator_tag(), from);
        }
      }
      if (!fs::exists(from / "batch.dump")) throw NotFoundError(fmt::format("{} has no batch.dump", from.string()));
      const TrajectoryBatch batch = load_batch((from / "batch.dump").string());
      const fs::path out = prepare_out(distill_args, cfg);
      const Stage2Result r = stage2_distill(store, batch, cfg);
      save_checkpoint((out / "student.ckpt").string(), snapshot(r.student, long(r.metrics.size() - 1), "student"));
      write_metrics_csv((out / "metrics.csv").string(), r.metrics);
      if (emit_signal) write_signal_dump((out / "signal.tsv").string(), r.signals.front());
    } else if (*pipeline) {
      const RunConfig cfg = resolve(pipeline_args);
      const fs::path out = prepare_out(pipeline_args, cfg);
      const PipelineResult r = run_pipeline(cfg, out, resume);
      write_metrics_csv((out / "metrics.csv").string(), r.metrics);
      save_checkpoint((out / "final.ckpt").string(),
                      snapshot(r.final_policy, long(cfg.pipeline.n_batches), "final"));
      for (const auto& rep : r.report) {
        std::cout << fmt::format("batch {} [{}]: base {:.4f} teacher {:.4f} student {:.4f} (KL teacher {:.4g}, student {:.4g})\n",
                                 rep.batch, to_string(rep.strategy), rep.base.mean, rep.teacher.mean, rep.student.mean,
                                 rep.teacher_reverse_kl, rep.student_reverse_kl);
      }
    } else if (*online) {
      const RunConfig cfg = resolve(online_args);
      const fs::path out = prepare_out(online_args, cfg);
      const OnlineResult r = run_online(cfg);
      write_metrics_csv((out / "metrics.csv").string(), r.metrics);
      save_checkpoint((out / "online.ckpt").string(), snapshot(r.policy, r.updates, "online"));
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_args);
      const fs::path out = prepare_out(eval_args, cfg);
      const PolicyParams base = make_base_policy(cfg);
      const PolicyParams policy = eval_policy.empty() ? base : policy_or_base(eval_policy, cfg);
      const AvgAtK score = evaluate_policy(policy, cfg);
      const TrajectoryBatch probe = collect_pipeline_batch(policy, cfg, 0);
      const TokenTable table = build_token_table(probe);
      MetricsRow row;
      row.step = 0;
      row.phase = Phase::eval;
      row.objective = score.mean;
      row.reverse_kl = reverse_kl_estimate(policy, base, cfg.env, std::size_t(cfg.kl_rollouts),
                                           sub_seed(cfg.seed, kEvalKlPurpose)).mean;
      row.kl_penalty = kl_penalty_to_behavior(table, {}, policy).value;
      row.entropy = batch_entropy(table, policy);
      row.avg_at_k = score.mean;
      const PosNegProb pn = pos_neg_prob_track(table, policy);
      row.pos_prob = pn.pos;
      row.neg_prob = pn.neg;
      row.explained_var = batch_explained_variance(table, policy);
      write_metrics_csv((out / "metrics.csv").string(), std::vector<MetricsRow>{row});
      std::cout << fmt::format("AVG@{} = {:.4f} +- {:.4f}\n", cfg.eval.K, score.mean, score.std_error);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("erpd");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(int(argv.size()), argv.data());
}

}  // namespace erpd
