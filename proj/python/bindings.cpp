#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "erpd/cli.hpp"
#include "erpd/config.hpp"
#include "erpd/distill.hpp"
#include "erpd/errors.hpp"
#include "erpd/harness.hpp"
#include "erpd/metrics.hpp"
#include "erpd/policy.hpp"

namespace py = pybind11;
using namespace erpd;

namespace {

py::dict row_to_dict(const MetricsRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["phase"] = std::string(to_string(r.phase));
  d["objective"] = r.objective;
  d["reverse_kl"] = r.reverse_kl;
  d["kl_penalty"] = r.kl_penalty;
  d["entropy"] = r.entropy;
  d["avg_at_k"] = r.avg_at_k;
  d["pos_prob"] = r.pos_prob;
  d["neg_prob"] = r.neg_prob;
  d["ratio_diag"] = r.ratio_diag;
  d["explained_var"] = r.explained_var;
  d["wall_ms"] = r.wall_ms;
  return d;
}

py::list rows_to_list(const std::vector<MetricsRow>& rows) {
  py::list out;
  for (const auto& r : rows) out.append(row_to_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core bindings: configuration, policies, the two training stages, metrics and the CLI.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_file", &load_config, py::arg("path"))
      .def_static(
          "from_text", [](const std::string& text) { return parse_config(text); }, py::arg("text"))
      .def(
          "set", [](RunConfig& c, const std::string& k, const std::string& v) { c.set(k, v); }, py::arg("key"),
          py::arg("value"))
      .def(
          "get", [](const RunConfig& c, const std::string& k) { return c.get(k); }, py::arg("key"))
      .def("keys", &RunConfig::keys)
      .def("validate", &RunConfig::validate)
      .def("dump", [](const RunConfig& c) { return dump_config(c); })
      .def("__copy__", [](const RunConfig& c) { return RunConfig(c); });

  py::class_<PolicyParams>(m, "Policy")
      .def_property_readonly("dims",
                             [](const PolicyParams& p) {
                               return py::make_tuple(p.dims().feat, p.dims().hidden, p.dims().vocab);
                             })
      .def_property(
          "flat", [](const PolicyParams& p) { return Vector(p.flat()); },
          [](PolicyParams& p, const Vector& v) {
            if (v.size() != p.flat().size()) throw InputError("flat parameter vector has the wrong length");
            p.flat() = v;
          })
      .def("logits", &logits, py::arg("state"))
      .def("log_prob", &log_prob, py::arg("state"), py::arg("action"));

  py::class_<AvgAtK>(m, "AvgAtK")
      .def_readonly("mean", &AvgAtK::mean)
      .def_readonly("std_error", &AvgAtK::std_error)
      .def("__repr__", [](const AvgAtK& a) { return "AvgAtK(" + std::to_string(a.mean) + ", se=" + std::to_string(a.std_error) + ")"; });

  py::class_<KlEstimate>(m, "KlEstimate")
      .def_readonly("mean", &KlEstimate::mean)
      .def_readonly("std_error", &KlEstimate::std_error)
      .def_readonly("tokens", &KlEstimate::tokens);

  py::class_<TrajectoryBatch>(m, "Batch")
      .def_property_readonly("trajectory_count", &TrajectoryBatch::trajectory_count)
      .def_property_readonly("token_count", &TrajectoryBatch::token_count)
      .def_property_readonly("mean_reward", &TrajectoryBatch::mean_reward)
      .def("save", [](const TrajectoryBatch& b, const std::string& path) { save_batch(path, b); })
      .def_static("load", &load_batch, py::arg("path"));

  py::class_<Stage1Result>(m, "Stage1Result")
      .def("snapshot", [](const Stage1Result& r, const std::string& tag) { return r.store.get(tag).params(); },
           py::arg("tag"))
      .def("has", [](const Stage1Result& r, const std::string& tag) { return r.store.contains(tag); }, py::arg("tag"))
      .def_property_readonly("metrics", [](const Stage1Result& r) { return rows_to_list(r.metrics); });

  m.def("make_base_policy", &make_base_policy, py::arg("config"));
  m.def("collect_batch", &collect_pipeline_batch, py::arg("policy"), py::arg("config"), py::arg("index") = 0,
        "Rollout batch the pipeline would collect for batch `index`.");
  m.def(
      "stage1_train",
      [](const PolicyParams& base, const TrajectoryBatch& batch, const RunConfig& cfg) {
        py::gil_scoped_release release;
        return stage1_train(base, batch, cfg);
      },
      py::arg("base"), py::arg("batch"), py::arg("config"));
  m.def(
      "stage2_distill",
      [](const Stage1Result& s1, const TrajectoryBatch& batch, const RunConfig& cfg) {
        Stage2Result r;
        {
          py::gil_scoped_release release;
          r = stage2_distill(s1.store, batch, cfg);
        }
        return py::make_tuple(r.student, rows_to_list(r.metrics));
      },
      py::arg("stage1"), py::arg("batch"), py::arg("config"), "Returns (student, metrics rows).");
  m.def(
      "run_pipeline",
      [](const RunConfig& cfg, std::optional<std::filesystem::path> out_dir, bool resume) {
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(cfg, out_dir, resume);
        }
        py::list report;
        for (const auto& b : r.report) {
          py::dict d;
          d["batch"] = b.batch;
          d["strategy"] = std::string(to_string(b.strategy));
          d["base"] = b.base;
          d["teacher"] = b.teacher;
          d["student"] = b.student;
          d["teacher_reverse_kl"] = b.teacher_reverse_kl;
          d["student_reverse_kl"] = b.student_reverse_kl;
          report.append(d);
        }
        return py::make_tuple(r.final_policy, report, rows_to_list(r.metrics));
      },
      py::arg("config"), py::arg("out_dir") = std::nullopt, py::arg("resume") = false,
      "Returns (final policy, per-batch report, metrics rows).");
  m.def(
      "run_online",
      [](const RunConfig& cfg) {
        OnlineResult r;
        {
          py::gil_scoped_release release;
          r = run_online(cfg);
        }
        return py::make_tuple(r.policy, rows_to_list(r.metrics));
      },
      py::arg("config"));
  m.def("evaluate", &evaluate_policy, py::arg("policy"), py::arg("config"));
  m.def(
      "reverse_kl",
      [](const PolicyParams& p, const PolicyParams& ref, const RunConfig& cfg, std::size_t n, std::uint64_t seed) {
        return reverse_kl_estimate(p, ref, cfg.env, n, seed);
      },
      py::arg("policy"), py::arg("ref"), py::arg("config"), py::arg("n_rollouts"), py::arg("seed") = 0);
  m.def(
      "whiten", [](const std::vector<double>& v) { return whiten(v); }, py::arg("values"));
  m.def(
      "save_checkpoint",
      [](const std::string& path, const PolicyParams& p, long step, const std::string& tag) {
        save_checkpoint(path, snapshot(p, step, tag));
      },
      py::arg("path"), py::arg("policy"), py::arg("step") = 0, py::arg("tag") = "policy");
  m.def(
      "load_checkpoint", [](const std::string& path) { return load_checkpoint(path).params(); }, py::arg("path"));
  m.def(
      "read_metrics_csv", [](const std::string& path) { return rows_to_list(read_metrics_csv(path)); },
      py::arg("path"));
  m.def(
      "cli", [](const std::vector<std::string>& args) { return cli_main(args); }, py::arg("args"),
      "Runs a CLI subcommand in-process and returns its exit code.");
}
