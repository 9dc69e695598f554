#include "syncsde/editing.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "syncsde/random.hpp"
#include "syncsde/simd.hpp"

namespace syncsde {

namespace {

double norm(std::span<const double> x) { return std::sqrt(simd::dot(x, x)); }

void require_rf_start(const NoiseSchedule& sched, std::size_t start_step) {
  if (sched.is_rectified_flow() && start_step == 0) {
    throw std::invalid_argument(
        "rectified flow: reverse integration must start at step >= 1 (alpha(1) is singular)");
  }
}

// One reverse Euler-Maruyama step of `z` at reverse node k, using score buffer `s`.
void reverse_step(const ScoreOracle& oracle, PromptLabel c, const NoiseSchedule& sched,
                  const TimeGrid& grid, std::size_t k, double w, std::span<double> z,
                  std::span<const double> noise, std::span<double> s,
                  double* drift_norm = nullptr) {
  const double tau = reverse_time(grid, k);
  const double a = alpha(sched, tau);
  const double g = diffusion(sched, tau);
  const double dt = grid.dt(k);
  oracle.guided_score(z, c, tau, sched, w, s);
  if (drift_norm) {
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double b = a * z[i] + g * g * s[i];
      acc += b * b;
    }
    *drift_norm = std::sqrt(acc);
  }
  simd::em_update(z, s, noise, a * dt, g * g * dt, g);
}

struct IntegrationOutput {
  Trajectory traj;
  EditDiagnostics diag;
};

// Shared reverse loop. `source` (optional) feeds diagnostics and the transform.
IntegrationOutput integrate(std::span<const double> init, const BrownianPath& increments,
                            const ScoreOracle& oracle, PromptLabel c, const NoiseSchedule& sched,
                            std::size_t start, double w, const Trajectory* source,
                            const NoiseTransform& transform) {
  const TimeGrid& grid = increments.grid();
  const std::size_t n = grid.steps();
  const std::size_t d = increments.dim();
  if (init.size() != d || oracle.dim() != d) {
    throw std::invalid_argument("reverse_integrate: dimension mismatch");
  }
  if (start >= n) {
    throw std::invalid_argument(
        fmt::format("reverse_integrate: start step {} must be below N = {}", start, n));
  }

  IntegrationOutput out{Trajectory(grid, d, Direction::Reversed),
                        {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}};
  std::vector<double> z(init.begin(), init.end());
  std::vector<double> s(d);
  std::vector<double> noise(d);
  for (std::size_t k = 0; k <= start; ++k) {
    std::ranges::copy(source ? source->state(k) : init, out.traj.state(k).begin());
  }
  for (std::size_t k = start; k < n; ++k) {
    const auto dw = increments.increment(k);
    if (source) out.diag.gap[k] = std::sqrt(simd::squared_distance(z, source->state(k)));
    std::span<const double> drive = dw;
    if (transform) {
      transform(k, dw, source ? source->state(k) : std::span<const double>{}, z, noise);
      drive = noise;
    }
    reverse_step(oracle, c, sched, grid, k, w, z, drive, s, &out.diag.drift_norm[k]);
    std::ranges::copy(z, out.traj.state(k + 1).begin());
  }
  return out;
}

}  // namespace

void EditConfig::validate(const NoiseSchedule& sched) const {
  const std::size_t n = grid.steps();
  if (n < 2) throw std::invalid_argument("edit config: need at least 2 steps");
  if (start_step >= n) {
    throw std::invalid_argument(
        fmt::format("edit config: start_step {} must be below N = {}", start_step, n));
  }
  if (!grid.symmetric()) throw std::invalid_argument("edit config: time grid must be symmetric");
  require_rf_start(sched, start_step);
}

double reverse_time(const TimeGrid& grid, std::size_t k) {
  return grid.symmetric() ? grid.node(grid.mirror(k)) : 1.0 - grid.node(k);
}

void reverse_drift(const ScoreOracle& oracle, std::span<const double> x, PromptLabel c,
                   double t_rev, const NoiseSchedule& sched, double w, std::span<double> out) {
  const double tau = 1.0 - t_rev;
  const double a = alpha(sched, tau);
  const double g = diffusion(sched, tau);
  oracle.guided_score(x, c, tau, sched, w, out);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + g * g * out[i];
}

std::vector<double> reverse_drift(const ScoreOracle& oracle, std::span<const double> x,
                                  PromptLabel c, double t_rev, const NoiseSchedule& sched,
                                  double w) {
  std::vector<double> out(x.size());
  reverse_drift(oracle, x, c, t_rev, sched, w, out);
  return out;
}

Trajectory reverse_integrate(std::span<const double> init, const BrownianPath& increments,
                             const ScoreOracle& oracle, PromptLabel c,
                             const NoiseSchedule& sched, std::size_t start_step, double w) {
  return integrate(init, increments, oracle, c, sched, start_step, w, nullptr, {}).traj;
}

EditResult coupled_sync_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                             const ScoreOracle& oracle, const NoiseSchedule& sched,
                             const EditConfig& cfg, const NoiseTransform& transform) {
  cfg.validate(sched);
  if (y0.size() != oracle.dim()) throw std::invalid_argument("sync_edit: dimension mismatch");
  oracle.distribution(c_src);
  oracle.distribution(c_tar);

  const std::size_t d = y0.size();
  const std::size_t s = cfg.start_step;
  Rng rng = make_rng(cfg.seed, streams::kForward);
  const BrownianPath path = sample_brownian(cfg.grid, d, rng);
  const Trajectory forward = forward_closed_form(y0, sched, cfg.grid, path);
  Trajectory source = reverse_trajectory(forward);
  BrownianPath backward = backward_increments(path, source, oracle, c_src, sched,
                                              {.guidance = cfg.w_src, .first_step = s});

  auto run = integrate(source.state(s), backward, oracle, c_tar, sched, s, cfg.w_tar, &source,
                       transform);
  const auto last = run.traj.state(cfg.grid.steps());
  return EditResult{{last.begin(), last.end()},
                    std::move(source),
                    std::move(run.traj),
                    std::move(backward),
                    std::move(run.diag)};
}

EditResult sync_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                     const ScoreOracle& oracle, const NoiseSchedule& sched, const EditConfig& cfg) {
  return coupled_sync_edit(y0, c_src, c_tar, oracle, sched, cfg, {});
}

EditResult resampling_ode_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                               const ScoreOracle& oracle, const NoiseSchedule& sched,
                               const EditConfig& cfg) {
  cfg.validate(sched);
  if (y0.size() != oracle.dim()) {
    throw std::invalid_argument("resampling_ode_edit: dimension mismatch");
  }
  oracle.distribution(c_src);
  oracle.distribution(c_tar);

  const TimeGrid& grid = cfg.grid;
  const std::size_t n = grid.steps();
  const std::size_t d = y0.size();
  const std::size_t s = cfg.start_step;

  // Forward closed form at node j: m_j (y0 + sum_{i<j} coef_i dW_i).
  std::vector<double> m(n + 1);
  std::vector<double> coef(n);
  for (std::size_t j = 0; j <= n; ++j) m[j] = decay_m(sched, grid.node(j));
  for (std::size_t i = 0; i < n; ++i) coef[i] = diffusion(sched, grid.node(i)) / m[i];

  Trajectory source(grid, d, Direction::Reversed);
  Trajectory target(grid, d, Direction::Reversed);
  EditDiagnostics diag{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};

  Rng rng = make_rng(cfg.seed, streams::kResample);
  std::vector<double> diff(d, 0.0);
  std::vector<double> ybar(d);
  std::vector<double> zbar(d);
  std::vector<double> b_y(d);
  std::vector<double> b_z(d);
  for (std::size_t k = s; k < n; ++k) {
    const BrownianPath path = sample_brownian(grid, d, rng);
    const std::size_t j = grid.mirror(k);
    std::ranges::copy(y0, ybar.begin());
    for (std::size_t i = 0; i < j; ++i) simd::axpy(coef[i], path.increment(i), ybar);
    for (double& v : ybar) v *= m[j];
    for (std::size_t i = 0; i < d; ++i) zbar[i] = diff[i] + ybar[i];

    const double t_rev = grid.node(k);
    reverse_drift(oracle, zbar, c_tar, t_rev, sched, cfg.w_tar, b_z);
    reverse_drift(oracle, ybar, c_src, t_rev, sched, cfg.w_src, b_y);

    diag.gap[k] = norm(diff);
    diag.drift_norm[k] = norm(b_z);
    std::ranges::copy(ybar, source.state(k).begin());
    std::ranges::copy(zbar, target.state(k).begin());
    if (k == s) {
      for (std::size_t r = 0; r < s; ++r) {
        std::ranges::copy(ybar, source.state(r).begin());
        std::ranges::copy(zbar, target.state(r).begin());
      }
    }
    const double dt = grid.dt(k);
    for (std::size_t i = 0; i < d; ++i) diff[i] += (b_z[i] - b_y[i]) * dt;
  }

  std::vector<double> edited(d);
  for (std::size_t i = 0; i < d; ++i) edited[i] = diff[i] + y0[i];
  std::ranges::copy(y0, source.state(n).begin());
  std::ranges::copy(edited, target.state(n).begin());
  return EditResult{std::move(edited), std::move(source), std::move(target), std::nullopt,
                    std::move(diag)};
}

std::vector<double> independent_edit(std::span<const double> y0, PromptLabel c_tar,
                                     const ScoreOracle& oracle, const NoiseSchedule& sched,
                                     const EditConfig& cfg) {
  const TimeGrid& grid = cfg.grid;
  const std::size_t n = grid.steps();
  const std::size_t s = cfg.start_step;
  if (s > n) {
    throw std::invalid_argument(
        fmt::format("independent_edit: start_step {} exceeds N = {}", s, n));
  }
  if (s < n) require_rf_start(sched, s);
  if (y0.size() != oracle.dim()) throw std::invalid_argument("independent_edit: dimension mismatch");
  oracle.distribution(c_tar);

  const std::size_t d = y0.size();
  const double tau = reverse_time(grid, s);
  const double m = decay_m(sched, tau);
  const double sd = std::sqrt(perturbation_variance(sched, tau));
  Rng init_rng = make_rng(cfg.seed, streams::kInitial);
  std::normal_distribution<double> normal;
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = m * y0[i] + sd * normal(init_rng);

  Rng rng = make_rng(cfg.seed, streams::kFreshReverse);
  std::vector<double> noise(d);
  std::vector<double> score_buf(d);
  for (std::size_t k = s; k < n; ++k) {
    const double step_sd = std::sqrt(grid.dt(k));
    for (double& e : noise) e = step_sd * normal(rng);
    reverse_step(oracle, c_tar, sched, grid, k, cfg.w_tar, x, noise, score_buf);
  }
  return x;
}

std::vector<double> sample_reverse(const ScoreOracle& oracle, PromptLabel c,
                                   const NoiseSchedule& sched, const TimeGrid& grid,
                                   std::size_t n, std::uint64_t seed, const SamplerOptions& opts) {
  const std::size_t steps = grid.steps();
  const std::size_t d = oracle.dim();
  if (opts.start_step >= steps) throw std::invalid_argument("sample_reverse: start step too large");
  require_rf_start(sched, opts.start_step);
  const bool velocity = opts.form == DriftForm::Velocity;
  if (velocity &&
      (!sched.is_rectified_flow() || !oracle.is_gaussian(c) || opts.guidance != 1.0)) {
    throw std::invalid_argument(
        "velocity-form sampling needs a rectified-flow schedule, a Gaussian label and w = 1");
  }

  std::vector<double> xs(n * d);
  {
    Rng rng = make_rng(seed, streams::kInitial);
    const double tau0 = reverse_time(grid, opts.start_step);
    for (std::size_t r = 0; r < n; ++r) {
      oracle.sample_marginal(c, tau0, sched, rng, std::span<double>(xs).subspan(r * d, d));
    }
  }

  Rng rng = make_rng(seed, streams::kFreshReverse);
  std::normal_distribution<double> normal;
  std::vector<double> noise(n * d);
  std::vector<double> field(n * d);
  std::vector<double> shift(d);
  std::vector<double> bias(d);
  for (std::size_t k = opts.start_step; k < steps; ++k) {
    const double tau = reverse_time(grid, k);
    const double dt = grid.dt(k);
    const double a = alpha(sched, tau);
    const double g = diffusion(sched, tau);
    const double step_sd = std::sqrt(dt);
    for (double& e : noise) e = step_sd * normal(rng);

    if (velocity) {
      // v_rev(x) = mu - rate(tau) (x - (1 - tau) mu); drift = 2 v_rev - alpha x.
      const auto& comp = oracle.distribution(c).components.front();
      const double var0 = comp.std * comp.std;
      const double rate = (tau - (1.0 - tau) * var0) / ((1.0 - tau) * (1.0 - tau) * var0 + tau * tau);
      for (std::size_t i = 0; i < d; ++i) {
        shift[i] = (1.0 - tau) * comp.mean[i];
        bias[i] = comp.mean[i];
      }
      simd::affine_bcast(xs, shift, -rate, bias, field);
      simd::em_update(xs, field, noise, -a * dt, 2.0 * dt, g);
    } else {
      oracle.guided_score_batch(xs, c, tau, sched, opts.guidance, field);
      simd::em_update(xs, field, noise, a * dt, g * g * dt, g);
    }
  }
  return xs;
}

}  // namespace syncsde
