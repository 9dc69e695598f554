#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "syncsde/editing.hpp"
#include "syncsde/scores.hpp"

using namespace syncsde;

namespace {

ScoreOracle two_labels() {
  return ScoreOracle::gaussian_family({{"a", {0.5, -1.0}, 0.7}, {"b", {-1.0, 2.0}, 1.2}});
}

// Central difference of log_density along coordinate i.
double fd_score(const ScoreOracle& o, std::vector<double> x, PromptLabel c, double t,
                const NoiseSchedule& s, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = o.log_density(x, c, t, s);
  x[i] = x0 - h;
  const double dn = o.log_density(x, c, t, s);
  return (up - dn) / (2.0 * h);
}

TEST(Score, StandardNormalAtTimeZero) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  const auto s = score(o, std::vector<double>{1.0}, o.label("n"), 0.0,
                       NoiseSchedule::constant_ou(0.0, 1.0));
  EXPECT_DOUBLE_EQ(s[0], -1.0);
}

TEST(Score, RectifiedGaussianClosedForm) {
  const auto o = ScoreOracle::gaussian_family({{"n", {1.5}, 0.5}});
  const auto sched = NoiseSchedule::rectified_flow(0.99);
  for (double t : {0.0, 0.2, 0.6, 0.95}) {
    for (double x : {-2.0, 0.3, 4.0}) {
      const double var = (1 - t) * (1 - t) * 0.25 + t * t;
      const auto s = score(o, std::vector<double>{x}, o.label("n"), t, sched);
      EXPECT_NEAR(s[0], oracle::gaussian_score(x, (1 - t) * 1.5, var), 1e-12);
      EXPECT_NEAR(s[0], fd_score(o, {x}, o.label("n"), t, sched, 0, 1e-5), 1e-6);
    }
  }
}

TEST(Score, MixtureMatchesFiniteDifferences) {
  const ScoreOracle o({{"m",
                        {{0.3, {1.0, 0.0}, 0.4}, {0.7, {-1.0, 0.5}, 0.8}}}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3.0, 3.0), ut(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{u(rng), u(rng)};
    const double t = ut(rng);
    const auto s = score(o, x, o.label("m"), t, sched);
    for (std::size_t j = 0; j < 2; ++j) {
      worst = std::max(worst, std::abs(s[j] - fd_score(o, x, o.label("m"), t, sched, j, 1e-5)));
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Score, SymmetricMixtureVanishesAtOrigin) {
  const ScoreOracle o({{"m", {{0.5, {2.0}, 0.5}, {0.5, {-2.0}, 0.5}}}});
  const auto s = score(o, std::vector<double>{0.0}, o.label("m"), 0.3,
                       NoiseSchedule::constant_ou(1.0, 1.0));
  EXPECT_EQ(s[0], 0.0);
}

TEST(Score, DegenerateMixtureIsGaussian) {
  const ScoreOracle mix({{"m", {{1.0, {0.4}, 0.9}}}});
  const auto gauss = ScoreOracle::gaussian_family({{"g", {0.4}, 0.9}});
  const auto sched = NoiseSchedule::constant_ou(0.5, 1.5);
  for (double x : {-1.0, 0.0, 2.5}) {
    EXPECT_NEAR(score(mix, std::vector<double>{x}, mix.label("m"), 0.4, sched)[0],
                score(gauss, std::vector<double>{x}, gauss.label("g"), 0.4, sched)[0], 1e-14);
  }
}

TEST(Guidance, WeightsInterpolate) {
  const auto o = two_labels();
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const std::vector<double> x{0.2, 0.9};
  const auto c = o.label("a");
  const auto cond = score(o, x, c, 0.5, sched);
  std::vector<double> unc(2);
  o.unconditional_score(x, 0.5, sched, unc);
  EXPECT_EQ(guided_score(o, x, c, 0.5, sched, 1.0), cond);
  const auto g0 = guided_score(o, x, c, 0.5, sched, 0.0);
  const auto g25 = guided_score(o, x, c, 0.5, sched, 2.5);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(g0[i], unc[i], 1e-14);
    EXPECT_NEAR(g25[i], unc[i] + 2.5 * (cond[i] - unc[i]), 1e-12);
  }
}

TEST(Guidance, SingleLabelIgnoresWeight) {
  const auto o = ScoreOracle::gaussian_family({{"only", {1.0}, 0.5}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const std::vector<double> x{0.3};
  EXPECT_NEAR(guided_score(o, x, o.label("only"), 0.5, sched, 2.5)[0],
              score(o, x, o.label("only"), 0.5, sched)[0], 1e-14);
}

TEST(Guidance, BatchMatchesSingle) {
  const auto o = two_labels();
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const std::vector<double> xs{0.1, 0.2, -1.0, 3.0, 2.0, -0.5};
  std::vector<double> out(6);
  o.guided_score_batch(xs, o.label("b"), 0.3, sched, 1.5, out);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto one = guided_score(o, std::span(xs).subspan(2 * r, 2), o.label("b"), 0.3, sched, 1.5);
    EXPECT_EQ(out[2 * r], one[0]);
    EXPECT_EQ(out[2 * r + 1], one[1]);
  }
}

TEST(Oracle, RejectsBadFamilies) {
  EXPECT_THROW(ScoreOracle({}), std::invalid_argument);
  EXPECT_THROW(ScoreOracle({{"m", {{0.5, {0.0}, 1.0}, {0.4, {1.0}, 1.0}}}}), std::invalid_argument);
  EXPECT_THROW(ScoreOracle::gaussian_family({{"a", {0.0}, 0.0}}), std::invalid_argument);
  EXPECT_THROW(ScoreOracle::gaussian_family({{"a", {0.0}, 1.0}, {"b", {0.0, 1.0}, 1.0}}),
               std::invalid_argument);
  EXPECT_THROW(ScoreOracle::gaussian_family({{"a", {0.0}, 1.0}, {"a", {1.0}, 1.0}}),
               std::invalid_argument);
  const auto o = two_labels();
  EXPECT_THROW(o.label("missing"), std::invalid_argument);
  EXPECT_THROW(score(o, std::vector<double>{1.0}, o.label("a"), 0.1,
                     NoiseSchedule::constant_ou(1.0, 1.0)),
               std::invalid_argument);
  EXPECT_THROW(score(o, std::vector<double>{1.0, 1.0}, o.label("a"), 0.999,
                     NoiseSchedule::rectified_flow(0.99)),
               std::domain_error);
}

TEST(Oracle, MarginalMomentsMatchSamples) {
  const ScoreOracle o({{"m", {{0.25, {1.0}, 0.3}, {0.75, {-2.0}, 0.6}}}});
  const auto sched = NoiseSchedule::constant_ou(1.0, 1.0);
  const double t = 0.4;
  const double m = std::exp(-t), v = (1 - std::exp(-2 * t)) / 2;
  // Mixture moments, computed by hand.
  const double mean = m * (0.25 * 1.0 + 0.75 * -2.0);
  const double second = 0.25 * (m * m * 1.0 + m * m * 0.09 + v) + 0.75 * (m * m * 4.0 + m * m * 0.36 + v);
  const double var = second - mean * mean;
  EXPECT_NEAR(o.marginal_mean(o.label("m"), t, sched)[0], mean, 1e-14);
  EXPECT_NEAR(o.marginal_variance(o.label("m"), t, sched)[0], var, 1e-13);

  Rng rng = make_rng(5);
  const std::size_t n = 100000;
  double s = 0.0, s2 = 0.0;
  std::vector<double> x(1);
  for (std::size_t i = 0; i < n; ++i) {
    o.sample_marginal(o.label("m"), t, sched, rng, x);
    s += x[0];
    s2 += x[0] * x[0];
  }
  const double sm = s / n;
  EXPECT_NEAR(sm, mean, 4.0 * std::sqrt(var / n));
  EXPECT_NEAR(s2 / n - sm * sm, var, 0.02 * var);
}

TEST(Velocity, ZeroMeanUnitStdVanishesAtOrigin) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  for (double t : {0.0, 0.3, 0.8}) {
    EXPECT_EQ(rf_velocity(o, std::vector<double>{0.0}, o.label("n"), t)[0], 0.0);
  }
}

TEST(Velocity, MatchesNumericDerivativeOfPath) {
  // v(x, t) = mu_t' + (s_t'/s_t)(x - mu_t), derivatives by central differences.
  const double mu = 1.2, sig = 0.6;
  const auto o = ScoreOracle::gaussian_family({{"n", {mu}, sig}});
  auto mu_t = [&](double t) { return (1 - t) * mu; };
  auto s_t = [&](double t) { return std::sqrt((1 - t) * (1 - t) * sig * sig + t * t); };
  const double h = 1e-6;
  for (double t : {0.0 + 2 * h, 0.25, 0.5, 0.9}) {
    for (double x : {-1.0, 0.5, 2.0}) {
      const double dmu = (mu_t(t + h) - mu_t(t - h)) / (2 * h);
      const double ds = (s_t(t + h) - s_t(t - h)) / (2 * h);
      const double expect = dmu + ds / s_t(t) * (x - mu_t(t));
      EXPECT_NEAR(rf_velocity(o, std::vector<double>{x}, o.label("n"), t)[0], expect, 1e-6);
    }
  }
  EXPECT_THROW(rf_velocity(o, std::vector<double>{0.0}, o.label("n"), 1.0), std::domain_error);
}

TEST(Velocity, MatchesConditionalExpectation) {
  // X_t = (1-t) X0 + t eps; E[-X0 + eps | X_t = x] by Gaussian conditioning.
  const double mu = -0.7, sig = 0.9, t = 0.35, x = 0.4;
  const auto o = ScoreOracle::gaussian_family({{"n", {mu}, sig}});
  const double var_t = (1 - t) * (1 - t) * sig * sig + t * t;
  const double cov_v_x = -(1 - t) * sig * sig + t;  // Cov(eps - X0, X_t)
  const double mean_v = -mu;
  const double expect = mean_v + cov_v_x / var_t * (x - (1 - t) * mu);
  EXPECT_NEAR(rf_velocity(o, std::vector<double>{x}, o.label("n"), t)[0], expect, 1e-12);
}

TEST(Velocity, SdeDriftEqualsScoreForm) {
  const auto o = two_labels();
  const auto sched = NoiseSchedule::rectified_flow(0.99);
  const auto vel = reverse_velocity(o);
  double worst = 0.0;
  for (double t_rev : {0.02, 0.1, 0.4, 0.7, 1.0}) {
    for (double x0 : {-3.0, 0.0, 1.7}) {
      const std::vector<double> x{x0, -x0 / 2};
      for (const auto* name : {"a", "b"}) {
        const auto c = o.label(name);
        const auto a = rf_sde_drift(vel, x, c, t_rev, sched);
        const auto b = reverse_drift(o, x, c, t_rev, sched, 1.0);
        for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
      }
    }
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(Velocity, SdeDriftGuards) {
  const auto o = ScoreOracle::gaussian_family({{"n", {0.0}, 1.0}});
  VelocityFn zero = [](std::span<const double> x, PromptLabel, double) {
    return std::vector<double>(x.size(), 0.0);
  };
  const auto sched = NoiseSchedule::rectified_flow(0.99);
  EXPECT_EQ(rf_sde_drift(zero, std::vector<double>{0.0}, o.label("n"), 0.5, sched)[0], 0.0);
  EXPECT_THROW(rf_sde_drift(zero, std::vector<double>{0.0}, o.label("n"), 0.0, sched),
               std::domain_error);
  EXPECT_THROW(rf_sde_drift(zero, std::vector<double>{0.0}, o.label("n"), 0.5,
                            NoiseSchedule::constant_ou(1.0, 1.0)),
               std::invalid_argument);
}

}  // namespace
