#include "memshare/cli.h"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "memshare/bounds.h"
#include "memshare/report.h"
#include "memshare/schedsim.h"
#include "memshare/simfilter.h"
#include "memshare/trace_io.h"

namespace memshare {

namespace fs = std::filesystem;

namespace {

// Config files: JSON (detected by a leading '{') or TOML. Keys may use
// snake_case; they are matched against the kebab-case flag names.
// Top-level keys are scoped to the subcommand being run.
class MemshareConfig : public CLI::ConfigTOML {
 public:
  explicit MemshareConfig(std::string section) : section_(std::move(section)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::stringstream buf;
    buf << input.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> items;
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw CLI::ParseError(std::string("config: ") + e.what(), CLI::ExitCodes::ConversionError);
      }
      flatten(j, {}, items);
    } else {
      std::istringstream in(text);
      items = CLI::ConfigTOML::from_config(in);
    }
    for (auto& item : items) {
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (item.parents.empty() && !section_.empty()) item.parents.push_back(section_);
    }
    return items;
  }

 private:
  std::string section_;

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void flatten(const nlohmann::json& obj, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& e : value) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

struct CommonOpts {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

struct ShapeOpts {
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t embed_dim = 32;

  KVShape shape() const { return {layers, heads, head_dim}; }
  ordered_json json() const {
    return {{"layers", layers}, {"heads", heads}, {"head_dim", head_dim},
            {"embed_dim", embed_dim}};
  }
};

struct TraceOpts {
  std::size_t steps = 32;
  std::size_t min_step_len = 16;
  std::size_t max_step_len = 64;
  std::size_t vocab = 512;
  double redundancy = 0.3;
  double mutation = 0.0;
  double noise = 0.0;
  std::size_t step_quantum = 0;  // 0 = block size

  TraceConfig config(std::size_t block_size) const {
    TraceConfig c;
    c.num_steps = steps;
    c.min_step_len = min_step_len;
    c.max_step_len = max_step_len;
    c.vocab_size = vocab;
    c.redundancy_prob = redundancy;
    c.mutation_rate = mutation;
    c.step_quantum = step_quantum ? step_quantum : block_size;
    return c;
  }
  ordered_json json(std::size_t block_size) const {
    return {{"steps", steps},           {"min_step_len", min_step_len},
            {"max_step_len", max_step_len}, {"vocab", vocab},
            {"redundancy", redundancy}, {"mutation", mutation},
            {"noise", noise},           {"step_quantum", step_quantum ? step_quantum : block_size}};
  }
};

void add_common(CLI::App* sub, CommonOpts& c, bool with_out = true) {
  sub->add_option("--seed", c.seed, "Base seed")->envname("MEMSHARE_SEED")->capture_default_str();
  if (with_out) sub->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
}

void add_shape(CLI::App* sub, ShapeOpts& s) {
  sub->add_option("--layers", s.layers)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--heads", s.heads)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--head-dim", s.head_dim)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--embed-dim", s.embed_dim)->check(CLI::PositiveNumber)->capture_default_str();
}

void add_trace(CLI::App* sub, TraceOpts& t) {
  sub->add_option("--steps", t.steps, "Reasoning steps per trace")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--min-step-len", t.min_step_len)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--max-step-len", t.max_step_len)->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--vocab", t.vocab)->capture_default_str();
  sub->add_option("--redundancy", t.redundancy, "Copy probability per step")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--mutation", t.mutation, "Fraction of copied tokens resampled")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--noise", t.noise, "KV noise standard deviation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--step-quantum", t.step_quantum, "Step length multiple (0 = block size)")
      ->capture_default_str();
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) {
    throw std::ios_base::failure("cannot create output directory " + p.string());
  }
  return p;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw std::ios_base::failure("cannot write " + path.string());
  return f;
}

void finish(std::ofstream& f, const fs::path& path) {
  f.flush();
  if (!f) throw std::ios_base::failure("write failed: " + path.string());
}

template <class Fn>
void write_file(const fs::path& path, Fn&& body) {
  auto f = open_out(path);
  body(f);
  finish(f, path);
}

// --- generate -------------------------------------------------------------

struct GenerateOpts {
  CommonOpts common;
  ShapeOpts shape;
  TraceOpts trace;
  std::size_t runs = 5;
  std::size_t block_size = 16;
};

int cmd_generate(const GenerateOpts& o, std::ostream& out) {
  const fs::path dir = prepare_dir(o.common.out_dir);
  ReportMeta meta{"generate", o.common.seed, {}};
  meta.config = {{"runs", o.runs}, {"block_size", o.block_size}};
  meta.config["trace"] = o.trace.json(o.block_size);
  meta.config["shape"] = o.shape.json();

  const ProjectionSet proj(o.common.seed, o.shape.shape(), o.shape.embed_dim);
  std::vector<Trace> traces;
  ordered_json summary = ordered_json::array();
  const fs::path trace_path = dir / "trace.jsonl";
  auto tf = open_out(trace_path);
  for (std::size_t r = 0; r < o.runs; ++r) {
    TraceConfig tc = o.trace.config(o.block_size);
    tc.seed = o.common.seed + r;
    const Trace t = generate_trace(tc);
    const KVStates kv = kv_for_trace(t, proj, o.trace.noise, tc.seed);
    write_trace_jsonl(tf, t);
    const fs::path kv_path = dir / ("kv_" + t.seq_id + ".mskv");
    auto kf = open_out(kv_path, true);
    write_mskv(kf, kv);
    finish(kf, kv_path);

    std::size_t planted = 0;
    for (const auto& l : t.redundancy_labels) planted += l.has_value();
    out << t.seq_id << ": steps=" << t.steps.size() << " tokens=" << t.total_tokens()
        << " planted_copies=" << planted << '\n';
    summary.push_back({{"seq_id", t.seq_id},
                       {"seed", tc.seed},
                       {"steps", t.steps.size()},
                       {"tokens", t.total_tokens()},
                       {"planted_copies", planted},
                       {"kv_file", kv_path.filename().string()}});
  }
  finish(tf, trace_path);

  ordered_json manifest = meta_json(meta);
  manifest["traces"] = summary;
  write_file(dir / "manifest.json", [&](std::ostream& f) { f << manifest.dump(2) << '\n'; });
  return kExitOk;
}

// --- analyze --------------------------------------------------------------

struct AnalyzeOpts {
  CommonOpts common;
  std::string trace_file;
  std::vector<std::string> kv_files;
  std::vector<double> thresholds{0.8, 0.9};
  std::size_t block_size = 16;
};

int cmd_analyze(const AnalyzeOpts& o, std::ostream& out) {
  const std::vector<Trace> traces = read_trace_jsonl_file(o.trace_file);
  if (traces.empty()) throw FormatError("trace file has no steps");
  for (double t : o.thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("thresholds must be in [0, 1]");
  }
  const fs::path dir = prepare_dir(o.common.out_dir);
  ReportMeta meta{"analyze", o.common.seed, {}};
  meta.config = {{"trace", fs::path(o.trace_file).filename().string()},
                 {"thresholds", o.thresholds},
                 {"block_size", o.block_size}};

  write_file(dir / "similarity.csv", [&](std::ostream& f) {
    write_meta_header(f, meta);
    write_similarity_csv(f, traces, o.thresholds);
  });
  write_file(dir / "ratios.csv", [&](std::ostream& f) {
    write_meta_header(f, meta);
    write_ratios_csv(f, traces, o.thresholds);
  });

  for (const Trace& t : traces) {
    const auto sims = step_similarities(t);
    out << t.seq_id;
    for (double th : o.thresholds) {
      out << " ratio@" << format_threshold(th) << '=' << similarity_ratio(sims, th);
    }
    out << '\n';
  }

  for (const std::string& kv_file : o.kv_files) {
    const KVStates kv = read_mskv_file(kv_file);
    const DistanceMatrix m = all_pairs_block_distance(kv, o.block_size);
    const std::string stem = fs::path(kv_file).stem().string();
    ReportMeta dmeta = meta;
    dmeta.config["kv"] = fs::path(kv_file).filename().string();
    write_file(dir / ("distances_" + stem + ".csv"), [&](std::ostream& f) {
      write_meta_header(f, dmeta);
      write_distance_csv(f, m);
    });
    out << stem << ": " << m.size() << " full blocks\n";
  }
  return kExitOk;
}

// --- simulate -------------------------------------------------------------

struct SimulateOpts {
  CommonOpts common;
  ShapeOpts shape;
  TraceOpts trace;
  std::size_t seeds = 5;
  std::size_t requests = 8;
  std::size_t block_size = 16;
  std::size_t block_budget = 0;  // 0 = unbounded
  double step_threshold = 0.8;
  double block_threshold = -1.0;  // < 0 = calibrate
  double calibration_quantile = 0.10;
  std::size_t top_k = 8;
  std::size_t evaluator_period = 0;
};

int cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  const fs::path dir = prepare_dir(o.common.out_dir);
  ReportMeta meta{"simulate", o.common.seed, {}};
  meta.config = {{"seeds", o.seeds},
                 {"requests", o.requests},
                 {"block_size", o.block_size},
                 {"block_budget", o.block_budget},
                 {"step_threshold", o.step_threshold},
                 {"block_threshold", o.block_threshold},
                 {"calibration_quantile", o.calibration_quantile},
                 {"top_k", o.top_k},
                 {"evaluator_period", o.evaluator_period}};
  meta.config["trace"] = o.trace.json(o.block_size);
  meta.config["shape"] = o.shape.json();

  ordered_json runs = ordered_json::array();
  std::vector<ordered_json> summary_rows;
  double gain_sum = 0.0;
  std::ostringstream summary;
  summary << "seed,block_budget,block_threshold,baseline_throughput,shared_throughput,"
             "throughput_gain\n";
  for (std::size_t s = 0; s < o.seeds; ++s) {
    WorkloadConfig wc;
    wc.seed = o.common.seed + s;
    wc.num_requests = o.requests;
    wc.trace = o.trace.config(o.block_size);
    wc.shape = o.shape.shape();
    wc.embed_dim = o.shape.embed_dim;
    wc.noise_scale = o.trace.noise;
    const auto reqs = make_requests(wc);

    SimConfig sc;
    sc.dims.kv = wc.shape;
    sc.dims.block_size = o.block_size;
    sc.block_budget = o.block_budget ? o.block_budget : unshared_blocks_for(reqs, o.block_size);
    sc.thresholds.step_threshold = o.step_threshold;
    sc.thresholds.top_k = o.top_k;
    sc.thresholds.block_distance_threshold =
        o.block_threshold >= 0.0
            ? o.block_threshold
            : calibrate_workload_threshold(wc, o.block_size, o.calibration_quantile);
    sc.evaluator_period = o.evaluator_period;

    const RunComparison cmp = compare_runs(sc, reqs);
    gain_sum += cmp.throughput_gain;

    ordered_json run;
    run["seed"] = wc.seed;
    run["block_budget"] = sc.block_budget;
    run["block_threshold"] = sc.thresholds.block_distance_threshold;
    run["baseline"] = metrics_json(cmp.baseline);
    run["shared"] = metrics_json(cmp.shared);
    run["throughput_gain"] = cmp.throughput_gain;
    runs.push_back(run);

    const std::string tag = std::to_string(wc.seed);
    ReportMeta ometa = meta;
    ometa.seed = wc.seed;
    write_file(dir / ("occupancy_" + tag + "_baseline.csv"), [&](std::ostream& f) {
      write_meta_header(f, ometa);
      write_occupancy_csv(f, cmp.baseline);
    });
    write_file(dir / ("occupancy_" + tag + "_shared.csv"), [&](std::ostream& f) {
      write_meta_header(f, ometa);
      write_occupancy_csv(f, cmp.shared);
    });

    char line[256];
    std::snprintf(line, sizeof(line), "%llu,%zu,%.8f,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(wc.seed), sc.block_budget,
                  sc.thresholds.block_distance_threshold, cmp.baseline.throughput,
                  cmp.shared.throughput, cmp.throughput_gain);
    summary << line;
    out << "seed " << wc.seed << ": baseline " << cmp.baseline.throughput << " tok/tick, shared "
        << cmp.shared.throughput << " tok/tick, gain " << cmp.throughput_gain * 100.0 << "%\n";
  }
  const double mean_gain = o.seeds ? gain_sum / static_cast<double>(o.seeds) : 0.0;
  char mean_line[64];
  std::snprintf(mean_line, sizeof(mean_line), "mean,,,,,%.6f\n", mean_gain);
  summary << mean_line;

  ordered_json doc = meta_json(meta);
  doc["runs"] = runs;
  doc["mean_throughput_gain"] = mean_gain;
  write_file(dir / "metrics.json", [&](std::ostream& f) { f << doc.dump(2) << '\n'; });
  write_file(dir / "gain_summary.csv", [&](std::ostream& f) {
    write_meta_header(f, meta);
    f << summary.str();
  });
  out << "mean gain over " << o.seeds << " seeds: " << mean_gain * 100.0 << "%\n";
  return kExitOk;
}

// --- verify-bounds --------------------------------------------------------

struct VerifyOpts {
  CommonOpts common;
  SweepConfig sweep;
  std::string csv = "sweep.csv";
};

int cmd_verify(VerifyOpts o, std::ostream& out, std::ostream& err) {
  o.sweep.seed = o.common.seed;
  const fs::path dir = prepare_dir(o.common.out_dir);
  ReportMeta meta{"verify-bounds", o.common.seed, {}};
  meta.config = {{"trials", o.sweep.trials_per_cell},
                 {"epsilon_grid", o.sweep.epsilon_grid},
                 {"delta_grid", o.sweep.delta_grid},
                 {"head_dims", o.sweep.head_dims},
                 {"lengths", o.sweep.lengths},
                 {"slack", o.sweep.options.slack}};
  if (o.sweep.options.bound_scale != 1.0) meta.config["bound_scale"] = o.sweep.options.bound_scale;

  const SweepResult r = sweep_report(o.sweep);
  write_file(dir / o.csv, [&](std::ostream& f) {
    write_meta_header(f, meta);
    write_sweep_csv(f, r);
  });
  out << r.total_trials << " trials over " << r.rows.size() << " cells, " << r.violations.size()
      << " violations\n";
  if (r.violations.empty()) return kExitOk;
  const std::size_t shown = std::min<std::size_t>(r.violations.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    const Violation& v = r.violations[i];
    err << "violation: check=" << v.check << " epsilon=" << v.epsilon << " delta=" << v.delta
        << " t=" << v.t << " d_h=" << v.head_dim << " trial=" << v.trial << " j=" << v.index
        << " observed=" << v.observed << " bound=" << v.bound << '\n';
  }
  if (shown < r.violations.size()) {
    err << "... " << r.violations.size() - shown << " more\n";
  }
  return kExitVerificationFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"KV block sharing toolkit: trace generation, redundancy analysis, "
               "paged-cache simulation and bound verification",
               "memshare"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON or TOML file with flag values (flags override it)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::string section;
  for (const std::string& arg : args) {
    if (arg == "generate" || arg == "analyze" || arg == "simulate" || arg == "verify-bounds") {
      section = arg;
      break;
    }
  }
  app.config_formatter(std::make_shared<MemshareConfig>(section));

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Write synthetic traces (JSONL) and KV dumps (MSKV1)");
  add_common(g, gen.common);
  add_shape(g, gen.shape);
  add_trace(g, gen.trace);
  g->add_option("--runs", gen.runs, "Traces to generate (seeds seed..seed+runs-1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  g->add_option("--block-size", gen.block_size)->check(CLI::PositiveNumber)->capture_default_str();

  AnalyzeOpts an;
  auto* a = app.add_subcommand("analyze", "Step similarity ratios and block distance matrices");
  add_common(a, an.common);
  a->add_option("--trace", an.trace_file, "Trace JSONL")->required();
  a->add_option("--kv", an.kv_files, "MSKV1 dumps for distance matrices");
  a->add_option("--thresholds", an.thresholds, "Cosine thresholds")
      ->delimiter(',')
      ->capture_default_str();
  a->add_option("--block-size", an.block_size)->check(CLI::PositiveNumber)->capture_default_str();

  SimulateOpts sim;
  auto* s = app.add_subcommand("simulate", "Paired baseline/shared scheduling runs");
  add_common(s, sim.common);
  add_shape(s, sim.shape);
  sim.trace.steps = 24;
  add_trace(s, sim.trace);
  s->add_option("--seeds", sim.seeds, "Independent workloads (seed..seed+n-1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s->add_option("--requests", sim.requests)->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--block-size", sim.block_size)->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--block-budget", sim.block_budget, "Physical blocks (0 = unbounded)")
      ->capture_default_str();
  s->add_option("--step-threshold", sim.step_threshold)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s->add_option("--block-threshold", sim.block_threshold, "Distance ceiling (< 0 = calibrate)")
      ->capture_default_str();
  s->add_option("--calibration-quantile", sim.calibration_quantile)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s->add_option("--top-k", sim.top_k)->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--evaluator-period", sim.evaluator_period)->capture_default_str();

  VerifyOpts ver;
  auto* v = app.add_subcommand("verify-bounds", "Randomized sweep of the attention bounds");
  add_common(v, ver.common);
  v->add_option("--trials", ver.sweep.trials_per_cell, "Trials per grid cell")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  v->add_option("--epsilon-grid", ver.sweep.epsilon_grid)->delimiter(',')->capture_default_str();
  v->add_option("--delta-grid", ver.sweep.delta_grid)->delimiter(',')->capture_default_str();
  v->add_option("--head-dims", ver.sweep.head_dims)->delimiter(',')->capture_default_str();
  v->add_option("--lengths", ver.sweep.lengths)->delimiter(',')->capture_default_str();
  v->add_option("--csv", ver.csv, "Sweep table file name inside --out")->capture_default_str();
  v->add_option("--bound-scale", ver.sweep.options.bound_scale)->group("");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = e.get_exit_code();
    if (code == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (a->parsed()) return cmd_analyze(an, out);
    if (s->parsed()) return cmd_simulate(sim, out);
    if (v->parsed()) return cmd_verify(ver, out, err);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace memshare
