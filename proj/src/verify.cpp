#include "syncsde/verify.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <stdexcept>

#include "syncsde/editing.hpp"
#include "syncsde/parallel.hpp"
#include "syncsde/random.hpp"
#include "syncsde/simd.hpp"

namespace syncsde {

McEstimate mean_and_se(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_and_se: empty sample");
  const double n = static_cast<double>(xs.size());
  const double mean = simd::sum(xs) / n;
  if (xs.size() == 1) return {mean, 0.0};
  const double var = simd::central_sums(xs, mean).sq / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median: empty sample");
  const std::size_t mid = xs.size() / 2;
  std::ranges::nth_element(xs, xs.begin() + static_cast<std::ptrdiff_t>(mid));
  const double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  const double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

TTest paired_t_test_greater(std::span<const double> diffs) {
  if (diffs.size() < 2) throw std::invalid_argument("t-test: need at least 2 pairs");
  const McEstimate est = mean_and_se(diffs);
  TTest out{est.mean, est.se, 0.0, 1.0};
  if (est.se == 0.0) {
    out.p = est.mean > 0.0 ? 0.0 : 1.0;
    out.t = est.mean > 0.0 ? INFINITY : (est.mean < 0.0 ? -INFINITY : 0.0);
    return out;
  }
  out.t = est.mean / est.se;
  const boost::math::students_t dist(static_cast<double>(diffs.size() - 1));
  out.p = boost::math::cdf(boost::math::complement(dist, out.t));
  return out;
}

double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    // P(K <= lambda) = sqrt(2 pi)/lambda sum_k exp(-(2k-1)^2 pi^2 / (8 lambda^2))
    const double c = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double j = 2.0 * k - 1.0;
      s += std::exp(c * j * j);
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += sign * term;
    if (term < 1e-17) break;
    sign = -sign;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

namespace {

double ks_p(double d, double n_eff) {
  const double root = std::sqrt(n_eff);
  return kolmogorov_q((root + 0.12 + 0.11 / root) * d);
}

}  // namespace

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::ranges::sort(a);
  std::ranges::sort(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {d, ks_p(d, na * nb / (na + nb))};
}

KsResult ks_one_sample_normal(std::vector<double> a, double mean, double sd) {
  if (a.empty()) throw std::invalid_argument("ks_one_sample_normal: empty sample");
  if (!(sd > 0.0)) throw std::invalid_argument("ks_one_sample_normal: sd must be positive");
  std::ranges::sort(a);
  const double n = static_cast<double>(a.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double f = 0.5 * std::erfc(-(a[i] - mean) / (sd * std::numbers::sqrt2));
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, ks_p(d, n)};
}

double empirical_w2_1d(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(
        fmt::format("empirical_w2_1d: sample sizes differ ({} vs {})", a.size(), b.size()));
  }
  if (a.empty()) throw std::invalid_argument("empirical_w2_1d: empty samples");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::ranges::sort(sa);
  std::ranges::sort(sb);
  return std::sqrt(simd::squared_distance(sa, sb) / static_cast<double>(sa.size()));
}

double pathwise_reversal_error(std::span<const double> y0, const ScoreOracle& oracle,
                               PromptLabel c, const NoiseSchedule& sched, std::size_t steps,
                               std::uint64_t seed, const ReversalOptions& opts) {
  if (steps < 1) throw std::invalid_argument("pathwise_reversal_error: need at least one step");
  if (opts.first_step >= steps) {
    throw std::invalid_argument("pathwise_reversal_error: first_step must be below N");
  }
  const TimeGrid grid = TimeGrid::uniform(steps);
  Rng rng = make_rng(seed, streams::kForward);
  const BrownianPath path = sample_brownian(grid, y0.size(), rng);
  const Trajectory reversed = reverse_trajectory(forward_closed_form(y0, sched, grid, path));
  const BrownianPath backward = backward_increments(
      path, reversed, oracle, c, sched, {.guidance = opts.w_src, .first_step = opts.first_step});
  const Trajectory retrace = reverse_integrate(reversed.state(opts.first_step), backward, oracle, c,
                                               sched, opts.first_step, 1.0);
  double worst = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    worst = std::max(worst, std::sqrt(simd::squared_distance(retrace.state(k), reversed.state(k))));
  }
  return worst;
}

ConvergenceTable convergence_study(const ReversalSetup& setup, std::span<const std::size_t> steps,
                                   std::size_t seeds, std::uint64_t base_seed, std::size_t jobs) {
  if (!setup.oracle) throw std::invalid_argument("convergence_study: missing score oracle");
  if (steps.empty()) throw std::invalid_argument("convergence_study: empty step list");
  if (seeds == 0) throw std::invalid_argument("convergence_study: need at least one seed");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i] <= steps[i - 1]) {
      throw std::invalid_argument("convergence_study: step counts must be strictly increasing");
    }
  }
  const ScoreOracle& oracle = *setup.oracle;
  const std::size_t d = oracle.dim();
  std::vector<double> y0s(seeds * d);
  for (std::size_t i = 0; i < seeds; ++i) {
    Rng rng = make_rng(stream_seed(base_seed, i), streams::kSource);
    oracle.sample_marginal(setup.label, 0.0, setup.sched, rng,
                           std::span<double>(y0s).subspan(i * d, d));
  }

  ConvergenceTable table;
  std::vector<double> errors(seeds);
  for (std::size_t n : steps) {
    parallel_for(seeds, jobs, [&](std::size_t i) {
      errors[i] = pathwise_reversal_error(std::span<const double>(y0s).subspan(i * d, d), oracle,
                                          setup.label, setup.sched, n,
                                          stream_seed(base_seed, i), setup.options);
    });
    table.rows.push_back({n, median(errors)});
  }

  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    if (!(table.rows[i].median_error < table.rows[i - 1].median_error)) table.monotone = false;
  }
  if (table.rows.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (const auto& r : table.rows) {
      mx += std::log(static_cast<double>(r.steps));
      my += std::log(r.median_error);
    }
    const double k = static_cast<double>(table.rows.size());
    mx /= k;
    my /= k;
    double sxy = 0.0, sxx = 0.0;
    for (const auto& r : table.rows) {
      const double dx = std::log(static_cast<double>(r.steps)) - mx;
      sxy += dx * (std::log(r.median_error) - my);
      sxx += dx * dx;
    }
    table.slope = -sxy / sxx;
  }
  return table;
}

MarginalReport marginal_check(std::span<const double> samples, std::span<const double> target_mean,
                              std::span<const double> target_var, bool gaussian_target) {
  const std::size_t d = target_mean.size();
  if (d == 0 || target_var.size() != d) {
    throw std::invalid_argument("marginal_check: target mean/variance sizes disagree");
  }
  if (samples.size() % d != 0) {
    throw std::invalid_argument("marginal_check: sample buffer is not a multiple of the dimension");
  }
  const std::size_t n = samples.size() / d;
  if (n < kMinMarginalSamples) {
    throw std::invalid_argument(fmt::format("marginal_check: {} samples, need at least {}", n,
                                            kMinMarginalSamples));
  }
  MarginalReport report;
  report.samples = n;
  report.pass = true;
  const double nn = static_cast<double>(n);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = samples[i * d + j];
    CoordinateCheck cc;
    cc.mean = simd::sum(col) / nn;
    const auto sums = simd::central_sums(col, cc.mean);
    cc.variance = sums.sq / (nn - 1.0);
    const double m2 = sums.sq / nn;
    const double m4 = sums.quad / nn;
    const double se_mean = std::sqrt(cc.variance / nn);
    const double se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / nn);
    cc.z_mean = (cc.mean - target_mean[j]) / se_mean;
    cc.z_variance = (cc.variance - target_var[j]) / se_var;
    if (gaussian_target) cc.ks = ks_one_sample_normal(col, target_mean[j], std::sqrt(target_var[j]));
    if (!(std::abs(cc.z_mean) <= kZGate) || !(std::abs(cc.z_variance) <= kZGate)) {
      report.pass = false;
    }
    report.coords.push_back(std::move(cc));
  }
  return report;
}

double finite_diff_score_check(const ScoreOracle& oracle, const NoiseSchedule& sched,
                               std::size_t trials, double h, std::uint64_t seed) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_score_check: h must be positive");
  Rng rng = make_rng(seed);
  const double t_hi = std::min(0.95, sched.t_max());
  std::uniform_real_distribution<double> time(0.05, t_hi);
  std::uniform_int_distribution<std::size_t> pick(0, oracle.label_count() - 1);
  const std::size_t d = oracle.dim();
  std::vector<double> x(d), s(d), xp(d);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const PromptLabel c{pick(rng)};
    const double t = time(rng);
    oracle.sample_marginal(c, t, sched, rng, x);
    oracle.score(x, c, t, sched, s);
    for (std::size_t j = 0; j < d; ++j) {
      xp = x;
      xp[j] = x[j] + h;
      const double up = oracle.log_density(xp, c, t, sched);
      xp[j] = x[j] - h;
      const double down = oracle.log_density(xp, c, t, sched);
      worst = std::max(worst, std::abs((up - down) / (2.0 * h) - s[j]));
    }
  }
  return worst;
}

}  // namespace syncsde
