#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "syncsde/editing.hpp"
#include "syncsde/verify.hpp"

using namespace syncsde;

namespace {

ScoreOracle matched_pair(double sd) {
  return ScoreOracle::gaussian_family({{"src", {-2.0}, sd}, {"tar", {2.0}, sd}});
}

// Difference process for two equal-std Gaussian labels under constant_ou(a, g):
// b_Z(Z) - b_Y(Y) depends on D = Z - Y only, so Euler on D is a scalar recursion.
double monge_recursion(double a, double g, double sd, double dmu, std::size_t n, std::size_t s) {
  double d = 0.0;
  const double dt = 1.0 / static_cast<double>(n);
  for (std::size_t k = s; k < n; ++k) {
    const double tau = 1.0 - static_cast<double>(k) * dt;
    const double m = std::exp(-a * tau);
    const double v = m * m * sd * sd + g * g * (1.0 - std::exp(-2.0 * a * tau)) / (2.0 * a);
    d += (a * d - g * g * (d - m * dmu) / v) * dt;
  }
  return d;
}

TEST(ReverseDrift, BrownianScheduleIsScoreOnly) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  // At reverse time 1 the forward time is 0, where the data is N(0, 1).
  const auto b = reverse_drift(o, std::vector<double>{2.0}, o.label("n"), 1.0,
                               NoiseSchedule::constant_ou(0.0, 1.0));
  EXPECT_DOUBLE_EQ(b[0], -2.0);
}

TEST(ReverseDrift, RectifiedFlowGuardAtReverseZero) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  EXPECT_THROW(reverse_drift(o, std::vector<double>{0.0}, o.label("n"), 0.0,
                             NoiseSchedule::rectified_flow(0.99)),
               std::domain_error);
}

TEST(ReverseDrift, EqualsMinusForwardDriftPlusScoreTerm) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.3}, 0.8}});
  const auto sched = NoiseSchedule::constant_ou(1.5, 0.7);
  for (double t_rev : {0.1, 0.5, 0.9}) {
    const double tau = 1.0 - t_rev;
    const double x = 1.1;
    const double f = -1.5 * x;
    const double expect = -f + 0.49 * score(o, std::vector<double>{x}, o.label("n"), tau, sched)[0];
    EXPECT_NEAR(reverse_drift(o, std::vector<double>{x}, o.label("n"), t_rev, sched)[0], expect,
                1e-14);
  }
}

TEST(ReverseIntegrate, ZeroDynamicsIsConstant) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  const auto grid = TimeGrid::uniform(8);
  BrownianPath zero(grid, 1);
  const auto traj = reverse_integrate(std::vector<double>{0.7}, zero, o, o.label("n"),
                                      NoiseSchedule::constant_ou(0.0, 0.0), 0);
  for (std::size_t k = 0; k <= 8; ++k) EXPECT_EQ(traj.state(k)[0], 0.7);
}

TEST(ReverseIntegrate, RejectsStartAtEnd) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  const auto grid = TimeGrid::uniform(4);
  BrownianPath zero(grid, 1);
  EXPECT_THROW(reverse_integrate(std::vector<double>{0.0}, zero, o, o.label("n"),
                                 NoiseSchedule::constant_ou(1.0, 1.0), 4),
               std::invalid_argument);
}

TEST(EditConfig, Validation) {
  const auto ou = NoiseSchedule::constant_ou(1.0, 1.0);
  EditConfig cfg;
  EXPECT_NO_THROW(cfg.validate(ou));
  cfg.grid = TimeGrid::uniform(1);
  cfg.start_step = 0;
  EXPECT_THROW(cfg.validate(ou), std::invalid_argument);
  cfg.grid = TimeGrid::uniform(8);
  cfg.start_step = 8;
  EXPECT_THROW(cfg.validate(ou), std::invalid_argument);
  cfg.start_step = 0;
  EXPECT_THROW(cfg.validate(NoiseSchedule::rectified_flow_for_steps(8)), std::invalid_argument);
  cfg.grid = TimeGrid::from_nodes({0.0, 0.2, 0.5, 1.0});
  EXPECT_THROW(cfg.validate(ou), std::invalid_argument);
}

TEST(SyncEdit, IdenticalPromptRetracesWithinStep) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  std::vector<double> coarse, fine;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (std::size_t n : {16u, 64u}) {
      EditConfig cfg{.grid = TimeGrid::uniform(n), .start_step = 0, .seed = seed};
      const std::vector<double> y0{0.5};
      const auto r = sync_edit(y0, o.label("n"), o.label("n"), o, sched, cfg);
      (n == 16 ? coarse : fine).push_back(std::abs(r.edited[0] - y0[0]));
    }
  }
  EXPECT_LE(median(fine), 1.0 / 64.0);
  EXPECT_LT(median(fine), median(coarse));
}

TEST(SyncEdit, SourceReverseIsReversedForwardPath) {
  const auto o = matched_pair(0.5);
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  EditConfig cfg{.grid = TimeGrid::uniform(10), .start_step = 2, .seed = 3};
  const std::vector<double> y0{-1.5};
  const auto r = sync_edit(y0, o.label("src"), o.label("tar"), o, sched, cfg);
  EXPECT_EQ(r.source_reverse.state(10)[0], y0[0]);
  EXPECT_EQ(r.target_reverse.state(2)[0], r.source_reverse.state(2)[0]);
  ASSERT_TRUE(r.backward_path.has_value());
  EXPECT_EQ(r.diagnostics.gap.size(), 10u);
  EXPECT_EQ(r.diagnostics.gap[2], 0.0);
  EXPECT_EQ(r.diagnostics.drift_norm[0], 0.0);
  EXPECT_GT(r.diagnostics.drift_norm[2], 0.0);
}

TEST(SyncEdit, EmptyTransformIsBitwiseSync) {
  const auto o = matched_pair(0.5);
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  EditConfig cfg{.grid = TimeGrid::uniform(12), .start_step = 1, .seed = 77};
  const std::vector<double> y0{-2.2};
  const auto a = sync_edit(y0, o.label("src"), o.label("tar"), o, sched, cfg);
  const auto b = coupled_sync_edit(y0, o.label("src"), o.label("tar"), o, sched, cfg, {});
  EXPECT_EQ(a.edited, b.edited);
  EXPECT_TRUE(std::ranges::equal(a.target_reverse.data(), b.target_reverse.data()));
}

TEST(ResamplingEdit, IdenticalPromptReturnsInputExactly) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.2, -0.1}, 0.9}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EditConfig cfg{.grid = TimeGrid::uniform(28), .start_step = 4, .seed = seed};
    const std::vector<double> y0{0.123, -4.5};
    const auto r = resampling_ode_edit(y0, o.label("n"), o.label("n"), o, sched, cfg);
    EXPECT_EQ(r.edited, y0);
    EXPECT_FALSE(r.backward_path.has_value());
  }
}

TEST(ResamplingEdit, ShiftMatchesDifferenceRecursion) {
  const double g = std::sqrt(2.0);
  const auto o = matched_pair(0.5);
  const auto sched = NoiseSchedule::constant_ou(1.0, g);
  const std::size_t n = 128;
  const double oracle_shift = monge_recursion(1.0, g, 0.5, 4.0, n, 0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EditConfig cfg{.grid = TimeGrid::uniform(n), .start_step = 0, .seed = seed};
    const std::vector<double> y0{-2.0 + 0.3 * static_cast<double>(seed)};
    const auto r = resampling_ode_edit(y0, o.label("src"), o.label("tar"), o, sched, cfg);
    EXPECT_NEAR(r.edited[0] - y0[0], oracle_shift, 1e-10);
  }
}

// The source path is the exact forward solution rather than an Euler path, so
// sync_edit only matches the recursion up to the step size.
TEST(SyncEdit, MeanShiftMatchesDifferenceRecursion) {
  const double g = std::sqrt(2.0);
  const auto o = matched_pair(0.5);
  const auto sched = NoiseSchedule::constant_ou(1.0, g);
  const std::size_t n = 128;
  const double oracle_shift = monge_recursion(1.0, g, 0.5, 4.0, n, 0);
  Rng rng = make_rng(123);
  std::normal_distribution<double> data(-2.0, 0.5);
  std::vector<double> shifts;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    EditConfig cfg{.grid = TimeGrid::uniform(n), .start_step = 0, .seed = seed};
    const std::vector<double> y0{data(rng)};
    const auto r = sync_edit(y0, o.label("src"), o.label("tar"), o, sched, cfg);
    shifts.push_back(r.edited[0] - y0[0]);
  }
  const auto est = mean_and_se(shifts);
  EXPECT_NEAR(est.mean, oracle_shift, 1.0 / static_cast<double>(n));
}

TEST(IndependentEdit, NoStepsReturnsInput) {
  const auto o = matched_pair(0.5);
  EditConfig cfg{.grid = TimeGrid::uniform(8), .start_step = 8, .seed = 1};
  const std::vector<double> y0{0.42};
  EXPECT_EQ(independent_edit(y0, o.label("tar"), o, NoiseSchedule::constant_ou(1.0, 1.0), cfg), y0);
}

TEST(IndependentEdit, PureNoiseStartHitsTargetMoments) {
  // alpha = 8 leaves m(1) = e^-8, so the noised input is practically N(0, 1).
  const auto o = matched_pair(0.5);
  const auto sched = NoiseSchedule::constant_ou(8.0, 4.0);
  std::vector<double> out;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    EditConfig cfg{.grid = TimeGrid::uniform(512), .start_step = 0, .seed = seed};
    out.push_back(independent_edit(std::vector<double>{-2.0}, o.label("tar"), o, sched, cfg)[0]);
  }
  const std::vector<double> mean{2.0}, var{0.25};
  const auto rep = marginal_check(out, mean, var, true);
  EXPECT_TRUE(rep.pass) << rep.coords[0].z_mean << " " << rep.coords[0].z_variance;
}

TEST(SampleReverse, DeterministicAndJobsFree) {
  const auto o = ScoreOracle::gaussian_family({{"n", {1.0}, 0.5}});
  const auto sched = NoiseSchedule::rectified_flow_for_steps(32);
  const auto grid = TimeGrid::uniform(32);
  const SamplerOptions opts{.start_step = 1};
  EXPECT_EQ(sample_reverse(o, o.label("n"), sched, grid, 50, 9, opts),
            sample_reverse(o, o.label("n"), sched, grid, 50, 9, opts));
  EXPECT_NE(sample_reverse(o, o.label("n"), sched, grid, 50, 9, opts),
            sample_reverse(o, o.label("n"), sched, grid, 50, 10, opts));
}

TEST(SampleReverse, VelocityFormNeedsRectifiedGaussian) {
  const auto o = ScoreOracle::gaussian_family({{"n", {1.0}, 0.5}});
  const auto grid = TimeGrid::uniform(16);
  SamplerOptions opts{.start_step = 1, .form = DriftForm::Velocity};
  EXPECT_THROW(sample_reverse(o, o.label("n"), NoiseSchedule::constant_ou(1.0, 1.0), grid, 10, 0, opts),
               std::invalid_argument);
  opts.start_step = 0;
  EXPECT_THROW(sample_reverse(o, o.label("n"), NoiseSchedule::rectified_flow_for_steps(16), grid,
                              10, 0, opts),
               std::invalid_argument);
}

}  // namespace
