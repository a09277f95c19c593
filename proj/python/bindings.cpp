#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "memshare/bounds.h"
#include "memshare/cli.h"
#include "memshare/kvgen.h"
#include "memshare/schedsim.h"
#include "memshare/simfilter.h"
#include "memshare/tensor.h"

namespace py = pybind11;
using namespace memshare;

PYBIND11_MODULE(_memshare, m) {
  m.doc() = "memshare core bindings";
  m.attr("__version__") = MEMSHARE_VERSION;

  m.def("softmax", [](const std::vector<double>& s) { return softmax(s); }, py::arg("scores"));

  py::class_<StepRecord>(m, "StepRecord")
      .def_readonly("seq_id", &StepRecord::seq_id)
      .def_readonly("step_index", &StepRecord::step_index)
      .def_readonly("text", &StepRecord::text)
      .def_readonly("tokens", &StepRecord::tokens)
      .def_readonly("token_offset", &StepRecord::token_offset);

  py::class_<Trace>(m, "Trace")
      .def_readonly("seq_id", &Trace::seq_id)
      .def_readonly("steps", &Trace::steps)
      .def_readonly("redundancy_labels", &Trace::redundancy_labels)
      .def("total_tokens", &Trace::total_tokens);

  m.def(
      "generate_trace",
      [](std::uint64_t seed, std::size_t num_steps, double redundancy, double mutation,
         std::size_t step_quantum) {
        TraceConfig c;
        c.seed = seed;
        c.num_steps = num_steps;
        c.redundancy_prob = redundancy;
        c.mutation_rate = mutation;
        c.step_quantum = step_quantum;
        return generate_trace(c);
      },
      py::arg("seed"), py::arg("num_steps") = 32, py::arg("redundancy") = 0.3,
      py::arg("mutation") = 0.0, py::arg("step_quantum") = 16);

  m.def("similarity_ratio",
        py::overload_cast<const Trace&, double>(&similarity_ratio), py::arg("trace"),
        py::arg("threshold"));

  m.def(
      "throughput_gain",
      [](std::uint64_t seed, double redundancy, double budget_fraction) {
        WorkloadConfig w;
        w.seed = seed;
        w.trace.num_steps = 24;
        w.trace.redundancy_prob = redundancy;
        w.trace.step_quantum = 16;
        const auto reqs = make_requests(w);
        SimConfig c;
        c.thresholds.block_distance_threshold = calibrate_workload_threshold(w, c.dims.block_size);
        std::size_t biggest = 0;
        for (const auto& r : reqs) {
          biggest = std::max(biggest, (r.length() + c.dims.block_size - 1) / c.dims.block_size);
        }
        const auto unshared = unshared_blocks_for(reqs, c.dims.block_size);
        c.block_budget = std::max(
            biggest, static_cast<std::size_t>(budget_fraction * static_cast<double>(unshared)));
        return compare_runs(c, reqs).throughput_gain;
      },
      py::arg("seed"), py::arg("redundancy") = 0.3, py::arg("budget_fraction") = 0.3);

  m.def(
      "verify_bounds",
      [](std::uint64_t seed, std::size_t trials) {
        SweepConfig c;
        c.seed = seed;
        c.trials_per_cell = trials;
        const SweepResult r = sweep_report(c);
        return py::make_tuple(r.total_trials, r.violations.size());
      },
      py::arg("seed") = 0, py::arg("trials") = 5,
      "Returns (trials, violations).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Returns (exit_code, stdout, stderr).");
}
