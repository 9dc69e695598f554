#include "syncsde/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "syncsde/config.hpp"
#include "syncsde/coupling.hpp"
#include "syncsde/editing.hpp"
#include "syncsde/parallel.hpp"
#include "syncsde/random.hpp"
#include "syncsde/simd.hpp"
#include "syncsde/svg.hpp"
#include "syncsde/verify.hpp"

namespace syncsde {

namespace {

using Json = nlohmann::ordered_json;

// Raised for anything wrong with the resolved configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files are staged here and written in one go after all computation succeeded.
class Outputs {
 public:
  std::ostringstream& file(const std::string& name) { return files_[name]; }

  void write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : files_) {
      std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary | std::ios::trunc);
      out << content.str();
      if (!out) throw std::runtime_error(fmt::format("failed to write {}/{}", dir, name));
    }
  }

 private:
  std::map<std::string, std::ostringstream> files_;
};

std::string num(double v) { return fmt::format("{:.17g}", v); }

// JSON numbers must be finite; non-finite values become null.
Json jnum(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json jvec(std::span<const double> v) {
  Json out = Json::array();
  for (double x : v) out.push_back(jnum(x));
  return out;
}

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

Json checks_json(const std::vector<Check>& checks) {
  Json out = Json::array();
  for (const auto& c : checks) out.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return out;
}

bool all_pass(const std::vector<Check>& checks) {
  return std::ranges::all_of(checks, [](const Check& c) { return c.pass; });
}

void report_checks(std::ostream& log, const std::vector<Check>& checks) {
  for (const auto& c : checks) {
    log << fmt::format("{} {}: {}\n", c.pass ? "PASS" : "FAIL", c.name, c.detail);
  }
}

PromptLabel resolve_label(const ScoreOracle& oracle, const std::string& name, std::string_view key) {
  if (name.empty()) {
    if (oracle.label_count() == 1) return PromptLabel{0};
    throw UsageError(fmt::format("{}: required when more than one label is defined", key));
  }
  try {
    return oracle.label(name);
  } catch (const std::invalid_argument&) {
    throw UsageError(fmt::format("{}: unknown label '{}'", key, name));
  }
}

Json schedule_json(const ScheduleSpec& spec, const NoiseSchedule& sched) {
  Json j{{"kind", spec.kind}};
  if (spec.kind == "constant_ou") {
    j["alpha"] = spec.alpha;
    j["g"] = spec.g;
  }
  j["t_max"] = sched.t_max();
  return j;
}

template <class F>
auto validated(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- reversal-check

int cmd_reversal_check(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const ReversalSpec& spec = cfg.reversal;
  const ScoreOracle oracle(cfg.labels);
  const PromptLabel label = resolve_label(oracle, spec.label, "reversal.label");
  if (spec.steps.empty()) throw UsageError("reversal.steps: must not be empty");
  for (std::size_t i = 0; i < spec.steps.size(); ++i) {
    if (spec.steps[i] < 2) throw UsageError("reversal.steps: entries must be at least 2");
    if (i > 0 && spec.steps[i] <= spec.steps[i - 1]) {
      throw UsageError("reversal.steps: must be strictly increasing");
    }
  }
  if (spec.seeds < 1) throw UsageError("reversal.seeds: must be at least 1");
  const std::size_t max_n = spec.steps.back();
  const NoiseSchedule sched = validated([&] { return cfg.schedule.build(max_n); });
  if (spec.first_step >= spec.steps.front()) {
    throw UsageError("reversal.first_step: must be below the smallest step count");
  }
  if (sched.is_rectified_flow() && spec.first_step == 0) {
    throw UsageError("reversal.first_step: rectified flow needs first_step >= 1");
  }
  ReversalSetup setup{&oracle, sched, label, {spec.w_src, spec.first_step}};
  const std::uint64_t base = cfg.seeds.base;
  const ConvergenceTable table =
      convergence_study(setup, spec.steps, spec.seeds, base, opts.jobs);

  std::vector<Check> checks;
  if (table.slope) {
    checks.push_back({"monotone", table.monotone, "median retrace error decreases with N"});
    checks.push_back({"slope", *table.slope >= spec.min_slope,
                      fmt::format("fitted order {:.4f} (need >= {})", *table.slope, spec.min_slope)});
  }

  Outputs out;
  auto& csv = out.file("convergence.csv");
  csv << "steps,median_error\n";
  Json rows = Json::array();
  svg::Series measured{"median error", {}, {}, true, true};
  for (const auto& r : table.rows) {
    csv << r.steps << ',' << num(r.median_error) << '\n';
    rows.push_back({{"steps", r.steps}, {"median_error", jnum(r.median_error)}});
    measured.x.push_back(static_cast<double>(r.steps));
    measured.y.push_back(r.median_error);
  }
  std::vector<svg::Series> series{measured};
  if (!table.rows.empty()) {
    // First-order reference through the first point.
    svg::Series ref{"order 1", {}, {}, false, true};
    const auto& r0 = table.rows.front();
    for (const auto& r : table.rows) {
      ref.x.push_back(static_cast<double>(r.steps));
      ref.y.push_back(r0.median_error * static_cast<double>(r0.steps) / static_cast<double>(r.steps));
    }
    series.push_back(ref);
  }
  out.file("convergence.svg") << svg::render(
      {"Pathwise retrace error", "steps N", "median sup error", true, true}, series);

  const bool pass = all_pass(checks);
  Json summary{{"command", "reversal-check"},
               {"schedule", schedule_json(cfg.schedule, sched)},
               {"label", oracle.label_name(label)},
               {"seeds", spec.seeds},
               {"base_seed", base},
               {"w_src", spec.w_src},
               {"first_step", spec.first_step},
               {"rows", rows},
               {"slope", table.slope ? jnum(*table.slope) : Json(nullptr)},
               {"monotone", table.monotone},
               {"min_slope", spec.min_slope},
               {"checks", checks_json(checks)},
               {"pass", pass}};
  out.file("summary.json") << summary.dump(2) << '\n';
  out.write(opts.out_dir);
  report_checks(log, checks);
  return pass ? kExitPass : kExitFail;
}

// ---------------------------------------------------------------------- edit

struct MethodRun {
  EditMethod method;
  std::vector<double> edited;       // replicates x d
  std::vector<double> gap;          // replicates x N, empty for independent
  std::vector<EditResult> kept;     // first `trajectories` replicates
};

int cmd_edit(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const EditSpec& spec = cfg.edit;
  const ScoreOracle oracle(cfg.labels);
  const PromptLabel src = resolve_label(oracle, spec.source, "edit.source");
  const PromptLabel tar = resolve_label(oracle, spec.target, "edit.target");
  const TimeGrid grid = validated([&] { return cfg.grid.build(); });
  const NoiseSchedule sched = validated([&] { return cfg.schedule.build(grid.steps()); });
  EditConfig ec{grid, spec.start_step, spec.w_src, spec.w_tar, 0};
  validated([&] {
    ec.validate(sched);
    return 0;
  });
  const std::size_t d = oracle.dim();
  if (!spec.y0.empty() && spec.y0.size() != d) {
    throw UsageError(fmt::format("edit.y0: has {} entries, labels have dimension {}",
                                 spec.y0.size(), d));
  }
  const std::size_t n = cfg.seeds.replicates;
  const std::size_t keep = std::min(spec.trajectories, n);
  const std::size_t steps = grid.steps();

  std::vector<EditMethod> methods;
  if (spec.method == EditMethod::Compare) {
    methods = {EditMethod::Sync, EditMethod::Resampling, EditMethod::Independent};
  } else {
    methods = {spec.method};
  }

  // Monge image: identity for identical prompts, translation for equal-spread Gaussians.
  std::optional<std::vector<double>> monge_shift;
  if (src == tar) {
    monge_shift = std::vector<double>(d, 0.0);
  } else if (oracle.is_gaussian(src) && oracle.is_gaussian(tar)) {
    const auto& a = oracle.distribution(src).components.front();
    const auto& b = oracle.distribution(tar).components.front();
    if (a.std == b.std) {
      monge_shift = std::vector<double>(d);
      for (std::size_t j = 0; j < d; ++j) (*monge_shift)[j] = b.mean[j] - a.mean[j];
    }
  }

  const std::uint64_t base = cfg.seeds.base;
  std::vector<double> y0s(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = std::span<double>(y0s).subspan(i * d, d);
    if (!spec.y0.empty()) {
      std::ranges::copy(spec.y0, row.begin());
    } else {
      Rng rng = make_rng(stream_seed(base, i), streams::kSource);
      oracle.sample_marginal(src, 0.0, sched, rng, row);
    }
  }

  std::vector<MethodRun> runs;
  for (EditMethod m : methods) {
    MethodRun run{m, std::vector<double>(n * d), {}, std::vector<EditResult>()};
    const bool coupled = m != EditMethod::Independent;
    if (coupled) run.gap.assign(n * steps, 0.0);
    std::vector<std::optional<EditResult>> kept(keep);
    parallel_for(n, opts.jobs, [&](std::size_t i) {
      EditConfig local = ec;
      local.seed = stream_seed(base, i);
      const auto y0 = std::span<const double>(y0s).subspan(i * d, d);
      auto edited = std::span<double>(run.edited).subspan(i * d, d);
      if (!coupled) {
        std::ranges::copy(independent_edit(y0, tar, oracle, sched, local), edited.begin());
        return;
      }
      EditResult res = m == EditMethod::Sync ? sync_edit(y0, src, tar, oracle, sched, local)
                                             : resampling_ode_edit(y0, src, tar, oracle, sched, local);
      std::ranges::copy(res.edited, edited.begin());
      std::ranges::copy(res.diagnostics.gap, run.gap.begin() + static_cast<std::ptrdiff_t>(i * steps));
      if (i < keep) kept[i] = std::move(res);
    });
    for (auto& k : kept) {
      if (k) run.kept.push_back(std::move(*k));
    }
    runs.push_back(std::move(run));
  }

  Outputs out;
  std::vector<Check> checks;
  Json methods_json = Json::object();
  std::map<EditMethod, std::vector<double>> sq_dev;

  auto& edits_csv = out.file("edits.csv");
  edits_csv << "replicate,method";
  for (std::size_t j = 0; j < d; ++j) edits_csv << ",y0_" << j;
  for (std::size_t j = 0; j < d; ++j) edits_csv << ",edited_" << j;
  edits_csv << ",monge_sq_dev\n";

  for (const auto& run : runs) {
    const std::string_view mname = method_name(run.method);
    std::vector<double> shift(n * d);
    std::vector<double> dev(n, std::nan(""));
    double max_move = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double s = run.edited[i * d + j] - y0s[i * d + j];
        shift[i * d + j] = s;
        max_move = std::max(max_move, std::abs(s));
        if (monge_shift) sq += (s - (*monge_shift)[j]) * (s - (*monge_shift)[j]);
      }
      if (monge_shift) dev[i] = sq;
    }
    for (std::size_t i = 0; i < n; ++i) {
      edits_csv << i << ',' << mname;
      for (std::size_t j = 0; j < d; ++j) edits_csv << ',' << num(y0s[i * d + j]);
      for (std::size_t j = 0; j < d; ++j) edits_csv << ',' << num(run.edited[i * d + j]);
      edits_csv << ',' << (monge_shift ? num(dev[i]) : std::string()) << '\n';
    }

    Json mean_shift = Json::array();
    Json shift_se = Json::array();
    std::vector<double> col(n);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < n; ++i) col[i] = shift[i * d + j];
      const McEstimate est = n > 1 ? mean_and_se(col) : McEstimate{col[0], 0.0};
      mean_shift.push_back(jnum(est.mean));
      shift_se.push_back(jnum(est.se));
    }
    Json mj{{"mean_shift", mean_shift}, {"shift_se", shift_se}, {"max_abs_move", jnum(max_move)}};
    if (monge_shift) {
      const McEstimate est = n > 1 ? mean_and_se(dev) : McEstimate{dev[0], 0.0};
      mj["monge_msd"] = jnum(est.mean);
      mj["monge_msd_se"] = jnum(est.se);
      sq_dev[run.method] = dev;
    }
    methods_json[std::string(mname)] = mj;

    if (src == tar) {
      if (run.method == EditMethod::Sync) {
        const double tol = spec.retrace_tolerance.value_or(grid.max_dt());
        checks.push_back({"sync_identical_prompt", max_move <= tol,
                          fmt::format("max |edited - y0| = {:.3e} (tolerance {:.3e})", max_move, tol)});
      } else if (run.method == EditMethod::Resampling) {
        checks.push_back({"resampling_identical_prompt", max_move == 0.0,
                          fmt::format("max |edited - y0| = {:.3e} (must be exactly 0)", max_move)});
      }
    }

    if (!run.gap.empty()) {
      auto& diag = out.file(fmt::format("diagnostics_{}.csv", mname));
      diag << "step,t_rev,mean_gap\n";
      for (std::size_t k = 0; k < steps; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += run.gap[i * steps + k];
        diag << k << ',' << num(grid.node(k)) << ',' << num(acc / static_cast<double>(n)) << '\n';
      }
    }
    for (std::size_t i = 0; i < run.kept.size(); ++i) {
      const auto& res = run.kept[i];
      write_csv(out.file(fmt::format("trajectory_{}_{}_source.csv", mname, i)), res.source_reverse);
      write_csv(out.file(fmt::format("trajectory_{}_{}_target.csv", mname, i)), res.target_reverse);
      if (res.backward_path) {
        write_csv(out.file(fmt::format("backward_{}_{}.csv", mname, i)), *res.backward_path);
      }
    }
  }

  Json comparison = nullptr;
  if (spec.method == EditMethod::Compare && monge_shift && src != tar && n >= 2) {
    const auto& indep = sq_dev[EditMethod::Independent];
    comparison = Json::object();
    for (EditMethod m : {EditMethod::Sync, EditMethod::Resampling}) {
      const auto& mine = sq_dev[m];
      std::vector<double> diff(n);
      for (std::size_t i = 0; i < n; ++i) diff[i] = indep[i] - mine[i];
      const TTest t = paired_t_test_greater(diff);
      const std::string name = fmt::format("{}_below_independent", method_name(m));
      checks.push_back({name, t.p < 0.01,
                        fmt::format("paired gain {:.4e} +- {:.2e}, p = {:.3g}", t.mean, t.se, t.p)});
      comparison[name] = {{"mean_gain", jnum(t.mean)}, {"se", jnum(t.se)}, {"p", jnum(t.p)}};
    }
    const double ms = mean_and_se(sq_dev[EditMethod::Sync]).mean;
    const double mr = mean_and_se(sq_dev[EditMethod::Resampling]).mean;
    comparison["sync_le_resampling"] = ms <= mr;
    log << fmt::format("info: monge msd sync {:.4e}, resampling {:.4e}, independent {:.4e}\n", ms,
                       mr, mean_and_se(indep).mean);
  }

  // Per-step coupling gap plot.
  std::vector<svg::Series> series;
  for (const auto& run : runs) {
    if (run.gap.empty()) continue;
    svg::Series s{std::string(method_name(run.method)), {}, {}, false, true};
    for (std::size_t k = ec.start_step; k < steps; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += run.gap[i * steps + k];
      s.x.push_back(grid.node(k));
      s.y.push_back(acc / static_cast<double>(n));
    }
    series.push_back(std::move(s));
  }
  if (!series.empty()) {
    out.file("diagnostics.svg") << svg::render(
        {"Mean |Zbar - Ybar| per reverse step", "reverse time", "mean gap", false, false}, series);
  }

  const bool pass = all_pass(checks);
  Json summary{{"command", "edit"},
               {"schedule", schedule_json(cfg.schedule, sched)},
               {"source", oracle.label_name(src)},
               {"target", oracle.label_name(tar)},
               {"method", method_name(spec.method)},
               {"steps", steps},
               {"start_step", ec.start_step},
               {"w_src", ec.w_src},
               {"w_tar", ec.w_tar},
               {"replicates", n},
               {"base_seed", base},
               {"monge_shift", monge_shift ? jvec(*monge_shift) : Json(nullptr)},
               {"methods", methods_json},
               {"comparison", comparison},
               {"checks", checks_json(checks)},
               {"pass", pass}};
  out.file("summary.json") << summary.dump(2) << '\n';
  out.write(opts.out_dir);
  report_checks(log, checks);
  return pass ? kExitPass : kExitFail;
}

// ------------------------------------------------------------- coupling-bench

int cmd_coupling_bench(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const CouplingSpec& spec = cfg.coupling;
  const ScoreOracle oracle(cfg.labels);
  const PromptLabel src = resolve_label(oracle, cfg.edit.source, "edit.source");
  const PromptLabel tar = resolve_label(oracle, cfg.edit.target, "edit.target");
  const TimeGrid grid = validated([&] { return cfg.grid.build(); });
  const NoiseSchedule sched = validated([&] { return cfg.schedule.build(grid.steps()); });
  const std::size_t d = oracle.dim();
  for (const auto& r : spec.rules) {
    validated([&] {
      validate_rule(r, d);
      return 0;
    });
  }
  if (spec.seeds < 2) throw UsageError("coupling.seeds: must be at least 2");
  if (spec.trace_dims.empty()) throw UsageError("coupling.trace_dims: must not be empty");
  if (spec.trace_draws < 2) throw UsageError("coupling.trace_draws: must be at least 2");
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw UsageError("coupling.alpha: must lie in (0, 1)");

  GreedyConfig gc;
  gc.c_src = src;
  gc.c_tar = tar;
  gc.edit = EditConfig{grid, cfg.edit.start_step, cfg.edit.w_src, cfg.edit.w_tar, cfg.seeds.base};
  gc.step = spec.step;
  gc.seeds = spec.seeds;
  gc.end_to_end = spec.end_to_end;
  gc.alpha = spec.alpha;
  gc.jobs = opts.jobs;
  validated([&] {
    gc.edit.validate(sched);
    if (gc.step >= grid.steps()) throw std::invalid_argument("coupling.step: must be below N");
    if (sched.is_rectified_flow() && gc.step == 0) {
      throw std::invalid_argument("coupling.step: rectified flow needs step >= 1");
    }
    return 0;
  });

  const GreedyReport report = greedy_optimality_experiment(oracle, sched, gc, spec.rules);

  // Trace identity sweep over random orthonormal matrices.
  struct TraceRow {
    std::size_t dim;
    double formula;
    McEstimate mc;
  };
  std::vector<TraceRow> trace(spec.trace_matrices);
  const std::uint64_t base = cfg.seeds.base;
  parallel_for(spec.trace_matrices, opts.jobs, [&](std::size_t m) {
    const std::size_t dim = spec.trace_dims[m % spec.trace_dims.size()];
    const Eigen::MatrixXd q = random_orthonormal(dim, stream_seed(base ^ 0x7472616365ULL, m));
    trace[m] = {dim, expected_increment_cost(q, spec.trace_dt),
                mc_increment_cost(q, spec.trace_dt, spec.trace_draws, stream_seed(base, m))};
  });

  std::vector<Check> checks;
  checks.push_back({"synchronous_argmin", report.synchronous_minimal,
                    fmt::format("argmin rule: {}", report.rules[report.argmin].name)});
  checks.push_back({"paired_significance", report.all_significant,
                    fmt::format("every non-synchronous gap has one-sided p < {}", spec.alpha)});
  std::size_t trace_ok = 0;
  for (const auto& t : trace) {
    if (std::abs(t.mc.mean - t.formula) <= 3.0 * t.mc.se) ++trace_ok;
  }
  checks.push_back({"trace_identity", trace_ok == trace.size(),
                    fmt::format("{}/{} matrices within 3 SE", trace_ok, trace.size())});
  double worst_reflection = 0.0;
  {
    Rng rng = make_rng(base, streams::kInitial);
    std::normal_distribution<double> normal;
    for (std::size_t dim : spec.trace_dims) {
      std::vector<double> y(dim), z(dim);
      for (auto& v : y) v = normal(rng);
      for (auto& v : z) v = normal(rng);
      const double cost = expected_increment_cost(reflection_matrix(y, z), spec.trace_dt);
      worst_reflection = std::max(worst_reflection, std::abs(cost - 4.0 * spec.trace_dt));
    }
  }
  checks.push_back({"reflection_cost", worst_reflection <= 1e-12,
                    fmt::format("max |cost - 4 dt| = {:.3e}", worst_reflection)});

  Outputs out;
  auto& gcsv = out.file("greedy.csv");
  gcsv << "rule,one_step,one_step_se,gap,gap_se,t,p,predicted_gap,end_to_end,end_to_end_se\n";
  Json rules = Json::array();
  svg::Series one_step{"one-step deviation", {}, {}, true, false};
  svg::Series predicted{"sync + g^2 2tr(I-Q)dt", {}, {}, true, false};
  for (std::size_t r = 0; r < report.rules.size(); ++r) {
    const auto& rr = report.rules[r];
    gcsv << rr.name << ',' << num(rr.one_step.mean) << ',' << num(rr.one_step.se) << ','
         << num(rr.gap.mean) << ',' << num(rr.gap.se) << ',' << num(rr.t_stat) << ','
         << num(rr.p_value) << ',' << num(rr.predicted_gap) << ',' << num(rr.end_to_end.mean)
         << ',' << num(rr.end_to_end.se) << '\n';
    Json rj{{"rule", rr.name},
            {"one_step", jnum(rr.one_step.mean)},
            {"one_step_se", jnum(rr.one_step.se)},
            {"gap", jnum(rr.gap.mean)},
            {"gap_se", jnum(rr.gap.se)},
            {"p", jnum(rr.p_value)},
            {"predicted_gap", jnum(rr.predicted_gap)}};
    if (spec.end_to_end) {
      rj["end_to_end"] = jnum(rr.end_to_end.mean);
      rj["end_to_end_se"] = jnum(rr.end_to_end.se);
    }
    rules.push_back(rj);
    one_step.x.push_back(static_cast<double>(r));
    one_step.y.push_back(rr.one_step.mean);
    predicted.x.push_back(static_cast<double>(r));
    predicted.y.push_back(report.rules[0].one_step.mean + rr.predicted_gap);
  }
  out.file("greedy.svg") << svg::render(
      {"One-step squared deviation by coupling rule", "rule index (0 = synchronous)",
       "E|Zbar' - Ybar'|^2", false, false},
      {one_step, predicted});

  auto& tcsv = out.file("trace.csv");
  tcsv << "matrix,dim,formula,mc_mean,mc_se\n";
  Json trace_json = Json::array();
  for (std::size_t m = 0; m < trace.size(); ++m) {
    const auto& t = trace[m];
    tcsv << m << ',' << t.dim << ',' << num(t.formula) << ',' << num(t.mc.mean) << ','
         << num(t.mc.se) << '\n';
    trace_json.push_back({{"dim", t.dim},
                          {"formula", jnum(t.formula)},
                          {"mc_mean", jnum(t.mc.mean)},
                          {"mc_se", jnum(t.mc.se)}});
  }

  const bool pass = all_pass(checks);
  Json summary{{"command", "coupling-bench"},
               {"schedule", schedule_json(cfg.schedule, sched)},
               {"source", oracle.label_name(src)},
               {"target", oracle.label_name(tar)},
               {"dim", d},
               {"steps", grid.steps()},
               {"step", spec.step},
               {"dt", report.dt},
               {"g", report.g},
               {"seeds", spec.seeds},
               {"base_seed", base},
               {"rules", rules},
               {"argmin", report.rules[report.argmin].name},
               {"trace_dt", spec.trace_dt},
               {"trace_draws", spec.trace_draws},
               {"trace", trace_json},
               {"checks", checks_json(checks)},
               {"pass", pass}};
  out.file("summary.json") << summary.dump(2) << '\n';
  out.write(opts.out_dir);
  report_checks(log, checks);
  return pass ? kExitPass : kExitFail;
}

// ------------------------------------------------------------- marginal-check

constexpr std::size_t kSamplerChunk = 1000;

std::vector<double> draw_samples(const ScoreOracle& oracle, PromptLabel c,
                                 const NoiseSchedule& sched, const TimeGrid& grid,
                                 std::size_t total, std::uint64_t seed, const SamplerOptions& so,
                                 std::size_t jobs) {
  const std::size_t d = oracle.dim();
  const std::size_t chunks = (total + kSamplerChunk - 1) / kSamplerChunk;
  std::vector<double> out(total * d);
  parallel_for(chunks, jobs, [&](std::size_t ci) {
    const std::size_t lo = ci * kSamplerChunk;
    const std::size_t cnt = std::min(kSamplerChunk, total - lo);
    const auto part = sample_reverse(oracle, c, sched, grid, cnt, stream_seed(seed, ci), so);
    std::ranges::copy(part, out.begin() + static_cast<std::ptrdiff_t>(lo * d));
  });
  return out;
}

double coordinate_density(const LabelDistribution& dist, std::size_t j, double x) {
  double p = 0.0;
  for (const auto& c : dist.components) {
    const double z = (x - c.mean[j]) / c.std;
    p += c.weight * std::exp(-0.5 * z * z) / (c.std * std::sqrt(2.0 * std::numbers::pi));
  }
  return p;
}

int cmd_marginal_check(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log) {
  const MarginalSpec& spec = cfg.marginal;
  const ScoreOracle oracle(cfg.labels);
  const PromptLabel c = resolve_label(oracle, spec.label, "marginal.label");
  if (spec.steps < 2) throw UsageError("marginal.steps: must be at least 2");
  if (spec.start_step >= spec.steps) throw UsageError("marginal.start_step: must be below steps");
  if (spec.samples < kMinMarginalSamples) {
    throw UsageError(fmt::format("marginal.samples: {} is below the floor of {}", spec.samples,
                                 kMinMarginalSamples));
  }
  if (!(spec.ks_alpha > 0.0 && spec.ks_alpha < 1.0)) {
    throw UsageError("marginal.ks_alpha: must lie in (0, 1)");
  }
  const TimeGrid grid = TimeGrid::uniform(spec.steps);
  const NoiseSchedule sched = validated([&] { return cfg.schedule.build(spec.steps); });
  if (sched.is_rectified_flow() && spec.start_step == 0) {
    throw UsageError("marginal.start_step: rectified flow needs start_step >= 1");
  }
  for (SamplerForm f : spec.forms) {
    if (f == SamplerForm::Velocity && (!sched.is_rectified_flow() || !oracle.is_gaussian(c))) {
      throw UsageError("marginal.forms: velocity form needs a rectified schedule and a Gaussian label");
    }
  }

  const std::size_t d = oracle.dim();
  const std::uint64_t base = cfg.seeds.base;
  const auto mean = oracle.marginal_mean(c, 0.0, sched);
  const auto var = oracle.marginal_variance(c, 0.0, sched);

  Outputs out;
  std::vector<Check> checks;
  Json forms = Json::object();
  std::vector<std::vector<double>> all;
  for (std::size_t fi = 0; fi < spec.forms.size(); ++fi) {
    const SamplerForm f = spec.forms[fi];
    const SamplerOptions so{spec.start_step, 1.0,
                            f == SamplerForm::Score ? DriftForm::Score : DriftForm::Velocity};
    // Forms draw from separate streams so the KS comparison is between independent samples.
    auto samples = draw_samples(oracle, c, sched, grid, spec.samples,
                                stream_seed(base, static_cast<std::uint64_t>(f)), so, opts.jobs);
    const MarginalReport rep = marginal_check(samples, mean, var, oracle.is_gaussian(c));
    Json coords = Json::array();
    double worst = 0.0;
    for (const auto& cc : rep.coords) {
      Json cj{{"mean", jnum(cc.mean)},
              {"variance", jnum(cc.variance)},
              {"z_mean", jnum(cc.z_mean)},
              {"z_variance", jnum(cc.z_variance)}};
      if (cc.ks) {
        cj["ks_statistic"] = jnum(cc.ks->statistic);
        cj["ks_p"] = jnum(cc.ks->p_value);
      }
      coords.push_back(cj);
      worst = std::max({worst, std::abs(cc.z_mean), std::abs(cc.z_variance)});
    }
    const std::string name(form_name(f));
    forms[name] = {{"coords", coords}, {"pass", rep.pass}};
    checks.push_back({fmt::format("{}_moments", name), rep.pass,
                      fmt::format("max |z| = {:.3f} over {} samples", worst, rep.samples)});

    auto& csv = out.file(fmt::format("samples_{}.csv", name));
    csv << "index";
    for (std::size_t j = 0; j < d; ++j) csv << ",x" << j;
    csv << '\n';
    for (std::size_t i = 0; i < spec.samples; ++i) {
      csv << i;
      for (std::size_t j = 0; j < d; ++j) csv << ',' << num(samples[i * d + j]);
      csv << '\n';
    }
    all.push_back(std::move(samples));
  }

  Json agreement = nullptr;
  const auto score_it = std::ranges::find(spec.forms, SamplerForm::Score);
  const auto vel_it = std::ranges::find(spec.forms, SamplerForm::Velocity);
  if (score_it != spec.forms.end() && vel_it != spec.forms.end()) {
    const auto& a = all[static_cast<std::size_t>(score_it - spec.forms.begin())];
    const auto& b = all[static_cast<std::size_t>(vel_it - spec.forms.begin())];
    agreement = Json::array();
    double min_p = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> ca(spec.samples), cb(spec.samples);
      for (std::size_t i = 0; i < spec.samples; ++i) {
        ca[i] = a[i * d + j];
        cb[i] = b[i * d + j];
      }
      const KsResult ks = ks_two_sample(ca, cb);
      agreement.push_back({{"statistic", jnum(ks.statistic)}, {"p", jnum(ks.p_value)}});
      min_p = std::min(min_p, ks.p_value);
    }
    checks.push_back({"score_velocity_ks", min_p > spec.ks_alpha,
                      fmt::format("min two-sample KS p = {:.4f} (need > {})", min_p, spec.ks_alpha)});

    // Pointwise drift agreement along the score-form samples' grid.
    const VelocityFn vel = reverse_velocity(oracle);
    double worst = 0.0;
    for (std::size_t k = std::max<std::size_t>(spec.start_step, 1); k < spec.steps; ++k) {
      const double t_rev = grid.node(k);
      const auto x = std::span<const double>(a).subspan((k % spec.samples) * d, d);
      const auto v = rf_sde_drift(vel, x, c, t_rev, sched);
      const auto s = reverse_drift(oracle, x, c, t_rev, sched);
      for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(v[j] - s[j]));
    }
    checks.push_back({"drift_equality", worst <= 1e-8,
                      fmt::format("max |velocity drift - score drift| = {:.3e}", worst)});
  }

  // Histogram of coordinate 0 against the exact density.
  {
    const auto& dist = oracle.distribution(c);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& comp : dist.components) {
      lo = std::min(lo, comp.mean[0] - 4.0 * comp.std);
      hi = std::max(hi, comp.mean[0] + 4.0 * comp.std);
    }
    constexpr std::size_t kBins = 40;
    const double width = (hi - lo) / kBins;
    std::vector<svg::Series> series;
    for (std::size_t fi = 0; fi < all.size(); ++fi) {
      std::vector<double> counts(kBins, 0.0);
      for (std::size_t i = 0; i < spec.samples; ++i) {
        const double x = all[fi][i * d];
        if (x < lo || x >= hi) continue;
        counts[static_cast<std::size_t>((x - lo) / width)] += 1.0;
      }
      svg::Series s{std::string(form_name(spec.forms[fi])), {}, {}, false, true};
      for (std::size_t b = 0; b < kBins; ++b) {
        s.x.push_back(lo + (static_cast<double>(b) + 0.5) * width);
        s.y.push_back(counts[b] / (static_cast<double>(spec.samples) * width));
      }
      series.push_back(std::move(s));
    }
    svg::Series exact{"exact", {}, {}, false, true};
    for (std::size_t b = 0; b <= 4 * kBins; ++b) {
      const double x = lo + (hi - lo) * static_cast<double>(b) / (4.0 * kBins);
      exact.x.push_back(x);
      exact.y.push_back(coordinate_density(dist, 0, x));
    }
    series.push_back(std::move(exact));
    out.file("marginal.svg") << svg::render(
        {"Reverse-sampler endpoint, coordinate 0", "x0", "density", false, false}, series);
  }

  const bool pass = all_pass(checks);
  Json summary{{"command", "marginal-check"},
               {"schedule", schedule_json(cfg.schedule, sched)},
               {"label", oracle.label_name(c)},
               {"steps", spec.steps},
               {"start_step", spec.start_step},
               {"samples", spec.samples},
               {"base_seed", base},
               {"target_mean", jvec(mean)},
               {"target_variance", jvec(var)},
               {"forms", forms},
               {"score_velocity_ks", agreement},
               {"checks", checks_json(checks)},
               {"pass", pass}};
  out.file("summary.json") << summary.dump(2) << '\n';
  out.write(opts.out_dir);
  report_checks(log, checks);
  return pass ? kExitPass : kExitFail;
}

}  // namespace

int run_command(std::string_view name, const CommandOptions& opts, std::ostream& log,
                std::ostream& err) {
  using Handler = int (*)(const RunConfig&, const CommandOptions&, std::ostream&);
  Handler handler = nullptr;
  if (name == "reversal-check") handler = cmd_reversal_check;
  if (name == "edit") handler = cmd_edit;
  if (name == "coupling-bench") handler = cmd_coupling_bench;
  if (name == "marginal-check") handler = cmd_marginal_check;
  if (!handler) {
    err << fmt::format("error: unknown command '{}'\n", name);
    return kExitUsage;
  }
  if (opts.jobs == 0) {
    err << "error: --jobs must be at least 1\n";
    return kExitUsage;
  }
  try {
    RunConfig cfg = opts.config_path ? load_config(*opts.config_path)
                                     : parse_config(default_config_text(name), "<preset>");
    if (opts.seed) cfg.seeds.base = *opts.seed;
    return handler(cfg, opts, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    // Domain errors surfacing mid-run still mean the inputs were unusable.
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace syncsde
