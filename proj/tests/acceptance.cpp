// Acceptance run: one PASS/FAIL line per criterion, each with its runtime
// budget folded into the verdict. Exit status is nonzero if any line fails.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "syncsde/commands.hpp"
#include "syncsde/coupling.hpp"
#include "syncsde/editing.hpp"
#include "syncsde/verify.hpp"
#include "test_configs.hpp"

using namespace syncsde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

// Median sup-norm retrace error study shared by criteria 1 and 5.
bool order_ok(const ConvergenceTable& t) { return t.monotone && t.slope && *t.slope >= 0.8; }

std::string table_text(const ConvergenceTable& t) {
  std::string s;
  for (const auto& r : t.rows) s += fmt::format("N={}:{:.3e} ", r.steps, r.median_error);
  return s + fmt::format("slope={:.3f}", t.slope.value_or(NAN));
}

Outcome pathwise_reversal() {
  const auto o = ScoreOracle::gaussian_family({{"data", {0.0}, 1.0}});
  const ReversalSetup setup{&o, NoiseSchedule::constant_ou(1.0, 1.0), o.label("data"), {}};
  const std::vector<std::size_t> steps{16, 32, 64, 128};
  const auto t = convergence_study(setup, steps, 100, 0);
  return {order_ok(t), table_text(t)};
}

Outcome backward_increment_law() {
  const auto o = ScoreOracle::gaussian_family({{"data", {0.0}, 1.0}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const std::size_t n = 64, seeds = 10000;
  const auto grid = TimeGrid::uniform(n);
  std::vector<double> inc(n * seeds);
  for (std::size_t i = 0; i < seeds; ++i) {
    Rng src = make_rng(i, streams::kSource);
    std::vector<double> y0(1);
    o.sample_marginal(o.label("data"), 0.0, sched, src, y0);
    Rng rng = make_rng(i, streams::kForward);
    const auto path = sample_brownian(grid, 1, rng);
    const auto rev = reverse_trajectory(forward_closed_form(y0, sched, grid, path));
    const auto bar = backward_increments(path, rev, o, o.label("data"), sched);
    for (std::size_t k = 0; k < n; ++k) inc[k * seeds + i] = bar.increment(k)[0];
  }
  double worst_z = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::span<const double> col(inc.data() + k * seeds, seeds);
    // Second moment about the known mean 0, with its own standard error.
    std::vector<double> sq(seeds);
    for (std::size_t i = 0; i < seeds; ++i) sq[i] = col[i] * col[i];
    const auto est = mean_and_se(sq);
    worst_z = std::max(worst_z, std::abs(est.mean - grid.dt(k)) / est.se);
  }
  return {worst_z <= 5.0, fmt::format("max |z| over {} steps = {:.2f} (gate 5)", n, worst_z)};
}

Outcome trace_identity() {
  const std::vector<std::size_t> dims{1, 2, 4, 8};
  const double dt = 1.0 / 64.0;
  std::size_t ok = 0;
  double worst = 0.0;
  for (std::size_t m = 0; m < 50; ++m) {
    const std::size_t d = dims[m % dims.size()];
    const auto q = random_orthonormal(d, stream_seed(0x7472616365ULL, m));
    const auto mc = mc_increment_cost(q, dt, 1000000, stream_seed(0, m));
    const double diff = std::abs(mc.mean - expected_increment_cost(q, dt));
    if (diff <= 3.0 * mc.se) ++ok;
    if (mc.se > 0) worst = std::max(worst, diff / mc.se);
  }
  double refl = 0.0;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (std::size_t d : dims) {
    std::vector<double> y(d), z(d);
    for (auto& v : y) v = normal(rng);
    for (auto& v : z) v = normal(rng);
    refl = std::max(refl, std::abs(expected_increment_cost(reflection_matrix(y, z), dt) - 4.0 * dt));
  }
  return {ok == 50 && refl <= 1e-15,
          fmt::format("{}/50 within 3 SE (worst {:.2f} SE); reflection |cost - 4dt| = {:.1e}", ok,
                      worst, refl)};
}

Outcome greedy_optimality() {
  const auto o = ScoreOracle::gaussian_family({{"src", {-1.0, 0.0}, 0.5}, {"tar", {1.0, 0.5}, 0.5}});
  GreedyConfig cfg;
  cfg.c_src = o.label("src");
  cfg.c_tar = o.label("tar");
  cfg.edit = EditConfig{.grid = TimeGrid::uniform(64), .start_step = 0, .seed = 0};
  cfg.step = 32;
  cfg.seeds = 1000;
  cfg.end_to_end = false;
  cfg.alpha = 0.01;
  std::vector<CouplingRule> rules{Synchronous{}, Reflection{}};
  for (std::uint64_t s = 1; s <= 10; ++s) rules.push_back(RandomOrthonormal{s});
  const auto rep = greedy_optimality_experiment(o, NoiseSchedule::constant_ou(1.0, 1.0), cfg, rules);
  double max_p = 0.0;
  for (std::size_t r = 1; r < rep.rules.size(); ++r) max_p = std::max(max_p, rep.rules[r].p_value);
  return {rep.synchronous_minimal && rep.all_significant,
          fmt::format("argmin={}, max paired p={:.2e} over {} rules", rep.rules[rep.argmin].name,
                      max_p, rep.rules.size() - 1)};
}

Outcome identical_prompt() {
  const auto o = ScoreOracle::gaussian_family({{"data", {0.0}, 1.0}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const auto c = o.label("data");
  ConvergenceTable t;
  std::size_t exact = 0, total = 0;
  for (std::size_t n : {16u, 32u, 64u, 128u}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng src = make_rng(seed, streams::kSource);
      std::vector<double> y0(1);
      o.sample_marginal(c, 0.0, sched, src, y0);
      const EditConfig cfg{.grid = TimeGrid::uniform(n), .start_step = 0, .seed = seed};
      const auto r = sync_edit(y0, c, c, o, sched, cfg);
      double sup = 0.0;
      for (std::size_t k = 0; k <= n; ++k) {
        sup = std::max(sup, std::abs(r.target_reverse.state(k)[0] - r.source_reverse.state(k)[0]));
      }
      errs.push_back(sup);
      ++total;
      if (resampling_ode_edit(y0, c, c, o, sched, cfg).edited == y0) ++exact;
    }
    t.rows.push_back({n, median(errs)});
  }
  double sx = 0, sy = 0, sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (i > 0 && !(t.rows[i].median_error < t.rows[i - 1].median_error)) t.monotone = false;
    const double x = std::log(static_cast<double>(t.rows[i].steps));
    const double y = std::log(t.rows[i].median_error);
    sx += x;
    sy += y;
    sxy += x * y;
    sxx += x * x;
  }
  const double k = static_cast<double>(t.rows.size());
  t.slope = -(sxy - sx * sy / k) / (sxx - sx * sx / k);
  return {order_ok(t) && exact == total,
          fmt::format("sync {}; resampling exact {}/{}", table_text(t), exact, total)};
}

Outcome editing_as_transport() {
  const auto o = ScoreOracle::gaussian_family({{"src", {-2.0}, 0.5}, {"tar", {2.0}, 0.5}});
  const auto sched = NoiseSchedule::rectified_flow_for_steps(128);
  const auto src = o.label("src"), tar = o.label("tar");
  const std::size_t seeds = 1000;
  std::vector<double> shift_sync, shift_res, excess;
  for (std::uint64_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = stream_seed(0, i);
    Rng data = make_rng(seed, streams::kSource);
    std::vector<double> y0(1);
    o.sample_marginal(src, 0.0, sched, data, y0);
    const EditConfig cfg{.grid = TimeGrid::uniform(128), .start_step = 1, .seed = seed};
    const double s = sync_edit(y0, src, tar, o, sched, cfg).edited[0];
    const double r = resampling_ode_edit(y0, src, tar, o, sched, cfg).edited[0];
    const double ind = independent_edit(y0, tar, o, sched, cfg)[0];
    const double monge = y0[0] + 4.0;
    shift_sync.push_back(s - y0[0]);
    shift_res.push_back(r - y0[0]);
    excess.push_back(std::pow(ind - monge, 2) - std::pow(s - monge, 2));
  }
  const auto es = mean_and_se(shift_sync);
  const auto er = mean_and_se(shift_res);
  const auto t = paired_t_test_greater(excess);
  const bool sync_ok = std::abs(es.mean - 4.0) <= 3.0 * es.se;
  const bool res_ok = std::abs(er.mean - 4.0) <= 3.0 * er.se;
  const bool order = t.p < 0.01;
  return {sync_ok && res_ok && order,
          fmt::format("sync shift {:.6f} +- {:.1e} [{}]; resampling shift {:.9f} +- {:.1e} [{}]; "
                      "independent - sync MSD {:.4f}, p={:.1e} [{}]",
                      es.mean, es.se, sync_ok ? "ok" : "out", er.mean, er.se,
                      res_ok ? "ok" : "out", t.mean, t.p, order ? "ok" : "out")};
}

// Target law N(1, 0.25).
Outcome check_samples(const std::vector<double>& xs, std::string& detail) {
  const auto rep = marginal_check(xs, std::vector<double>{1.0}, std::vector<double>{0.25}, true);
  detail += fmt::format("z_mean={:.2f} z_var={:.2f}; ", rep.coords[0].z_mean,
                        rep.coords[0].z_variance);
  return {rep.pass, ""};
}

Outcome marginal_soundness() {
  const auto o = ScoreOracle::gaussian_family({{"target", {1.0}, 0.5}});
  const auto c = o.label("target");
  const auto grid = TimeGrid::uniform(256);
  std::string detail;
  bool pass = true;

  detail += "constant_ou: ";
  const auto ou = sample_reverse(o, c, NoiseSchedule::constant_ou(1.0, 1.0), grid, 10000, 0,
                                 {.start_step = 0});
  pass = check_samples(ou, detail).pass && pass;

  detail += "rectified: ";
  const auto rf = sample_reverse(o, c, NoiseSchedule::rectified_flow_for_steps(256), grid, 10000, 1,
                                 {.start_step = 1});
  pass = check_samples(rf, detail).pass && pass;
  return {pass, detail};
}

Outcome rectified_equivalence() {
  const auto o = ScoreOracle::gaussian_family({{"a", {1.0, -0.5}, 0.5}, {"b", {-2.0, 0.0}, 1.3}});
  const auto sched = NoiseSchedule::rectified_flow_for_steps(256);
  const auto vel = reverse_velocity(o);
  double worst = 0.0;
  for (std::size_t i = 1; i <= 256; ++i) {
    const double t_rev = static_cast<double>(i) / 256.0;
    for (double x0 : {-4.0, -1.0, 0.0, 0.5, 3.0}) {
      const std::vector<double> x{x0, 1.0 - x0};
      for (const char* name : {"a", "b"}) {
        const auto a = rf_sde_drift(vel, x, o.label(name), t_rev, sched);
        const auto b = reverse_drift(o, x, o.label(name), t_rev, sched, 1.0);
        for (std::size_t j = 0; j < 2; ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
      }
    }
  }

  const auto one = ScoreOracle::gaussian_family({{"target", {1.0}, 0.5}});
  const auto grid = TimeGrid::uniform(256);
  const auto score_form = sample_reverse(one, one.label("target"), sched, grid, 10000, 10,
                                         {.start_step = 1, .form = DriftForm::Score});
  const auto vel_form = sample_reverse(one, one.label("target"), sched, grid, 10000, 11,
                                       {.start_step = 1, .form = DriftForm::Velocity});
  const auto ks = ks_two_sample(score_form, vel_form);
  return {worst <= 1e-8 && ks.p_value > 0.01,
          fmt::format("max drift gap {:.2e} (gate 1e-8); KS D={:.4f} p={:.3f} (gate 0.01)", worst,
                      ks.statistic, ks.p_value)};
}

Outcome closed_form_kernels() {
  const auto s = NoiseSchedule::rectified_flow(0.99);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double t = u(rng);
    const double m = decay_m(s, t), v = perturbation_variance(s, t);
    worst = std::max(worst, std::abs(m - (1.0 - t)) / (1.0 - t));
    worst = std::max(worst, std::abs(decay_m_quadrature(s, t) - m) / m);
    if (t > 0) {
      worst = std::max(worst, std::abs(v - t * t) / (t * t));
      worst = std::max(worst, std::abs(perturbation_variance_quadrature(s, t) - v) / v);
    }
  }
  return {worst <= 1e-6, fmt::format("max relative gap {:.2e} (gate 1e-6)", worst)};
}

std::map<std::string, std::string> slurp(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    m[e.path().filename().string()] = ss.str();
  }
  return m;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "syncsde_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::string_view>> cases{
      {"reversal-check", test_configs::kSmallReversal},
      {"edit", test_configs::kSmallEdit},
      {"coupling-bench", test_configs::kSmallCoupling},
      {"marginal-check", test_configs::kSmallMarginal}};
  std::string detail;
  bool pass = true;
  for (const auto& [cmd, text] : cases) {
    const fs::path cfg = root / (cmd + ".toml");
    std::ofstream(cfg) << text;
    std::map<std::string, std::string> outputs[2];
    int codes[2];
    for (int run = 0; run < 2; ++run) {
      CommandOptions opts;
      opts.config_path = cfg.string();
      opts.out_dir = (root / fmt::format("{}_{}", cmd, run)).string();
      opts.jobs = run == 0 ? 1 : 2;
      std::ostringstream log, err;
      codes[run] = run_command(cmd, opts, log, err);
      if (fs::exists(opts.out_dir)) outputs[run] = slurp(opts.out_dir);
    }
    const bool same = codes[0] == codes[1] && !outputs[0].empty() && outputs[0] == outputs[1];
    pass = pass && same;
    detail += fmt::format("{}: {} files {}; ", cmd, outputs[0].size(), same ? "identical" : "DIFFER");
  }
  fs::remove_all(root);
  return {pass, detail};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "pathwise time reversal", 10, pathwise_reversal},
      {2, "backward-increment law", 30, backward_increment_law},
      {3, "trace identity", 60, trace_identity},
      {4, "greedy optimality", 60, greedy_optimality},
      {5, "identical-prompt degeneracy", 5, identical_prompt},
      {6, "editing as transport", 60, editing_as_transport},
      {7, "marginal soundness", 60, marginal_soundness},
      {8, "rectified-flow equivalence", 60, rectified_equivalence},
      {9, "closed-form kernels", 1, closed_form_kernels},
      {10, "determinism", 10, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    fmt::print("criterion {:>2}: {} {} | {} | {:.2f} s (budget {} s{})\n", c.id,
               pass ? "PASS" : "FAIL", c.name, o.detail, secs, c.budget_s,
               in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
