#pragma once

// Oracles and statistics used to check the integrators: pathwise retrace
// error and its convergence order, marginal moment / KS checks, finite
// difference score checks and 1-D empirical W2.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "syncsde/paths.hpp"
#include "syncsde/schedule.hpp"
#include "syncsde/scores.hpp"

namespace syncsde {

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation / sqrt(n)
};

McEstimate mean_and_se(std::span<const double> xs);

// Median of a copy; the mean of the two middle values for even sizes.
double median(std::vector<double> xs);

struct TTest {
  double mean = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p = 1.0;
};

// One-sided paired t-test of H1: E[diff] > 0. With zero spread the p-value is
// 0 for a positive mean and 1 otherwise.
TTest paired_t_test_greater(std::span<const double> diffs);

// Kolmogorov distribution tail P(K > lambda).
double kolmogorov_q(double lambda);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;  // asymptotic, with the usual small-sample correction
};

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);
KsResult ks_one_sample_normal(std::vector<double> a, double mean, double sd);

// sqrt(mean (a_(i) - b_(i))^2) over sorted samples.
double empirical_w2_1d(std::span<const double> a, std::span<const double> b);

struct ReversalOptions {
  // Guidance used when building the backward increments. The reverse
  // integration always uses the exact conditional score, so w_src != 1
  // leaves a score mismatch that the retrace cannot absorb.
  double w_src = 1.0;
  // First reverse step (needed as 1 for rectified flow).
  std::size_t first_step = 0;
};

// Uniform grid of N steps: forward_closed_form -> reverse -> backward
// increments -> reverse_integrate from node first_step with the same label.
// Returns max_k |Zbar_k - Ybar_k|.
double pathwise_reversal_error(std::span<const double> y0, const ScoreOracle& oracle,
                               PromptLabel c, const NoiseSchedule& sched, std::size_t steps,
                               std::uint64_t seed, const ReversalOptions& opts = {});

struct ReversalSetup {
  const ScoreOracle* oracle = nullptr;
  NoiseSchedule sched = NoiseSchedule::constant_ou(1.0, 1.0);
  PromptLabel label;
  ReversalOptions options;
};

struct ConvergenceRow {
  std::size_t steps = 0;
  double median_error = 0.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  std::optional<double> slope;  // -d log(error) / d log(N), least squares; needs >= 2 rows
  bool monotone = true;         // medians strictly decreasing in N
};

// Seed i draws y0 from p_0(. | label) and runs pathwise_reversal_error with
// seed stream_seed(base_seed, i), for every N in `steps` (strictly increasing).
ConvergenceTable convergence_study(const ReversalSetup& setup, std::span<const std::size_t> steps,
                                   std::size_t seeds, std::uint64_t base_seed,
                                   std::size_t jobs = 1);

struct CoordinateCheck {
  double mean = 0.0;
  double variance = 0.0;
  double z_mean = 0.0;
  double z_variance = 0.0;
  std::optional<KsResult> ks;  // against N(target_mean, target_var) when requested
};

struct MarginalReport {
  std::size_t samples = 0;
  std::vector<CoordinateCheck> coords;
  bool pass = false;  // every |z| <= 3
};

inline constexpr std::size_t kMinMarginalSamples = 100;
inline constexpr double kZGate = 3.0;

// samples: row-major n x d. The variance z-score uses the fourth-moment
// standard error sqrt((m4 - s^4) / n). Throws for n < 100.
MarginalReport marginal_check(std::span<const double> samples, std::span<const double> target_mean,
                              std::span<const double> target_var, bool gaussian_target);

// Max |central difference of log p_t - score| over random (label, t, x),
// x drawn from p_t(. | label), t uniform in [0.05, min(0.95, t_max)].
double finite_diff_score_check(const ScoreOracle& oracle, const NoiseSchedule& sched,
                               std::size_t trials, double h, std::uint64_t seed);

}  // namespace syncsde
