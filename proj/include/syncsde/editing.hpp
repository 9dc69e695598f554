#pragma once

// Editing by coupled reverse-time SDEs.
//
// sync_edit: noise y0 forward with a sampled Brownian path, rebuild the
// backward Brownian increments along the reversed path under the source
// label, then drive the target-label reverse SDE with those same increments.
//
// resampling_ode_edit: evolve the difference D = Zbar - Ybar deterministically,
// re-drawing the reference state from a fresh forward path at every step.
//
// independent_edit: the noise-and-resample baseline; the target reverse SDE
// gets fresh, independent increments.
//
// Coupling start: with start_step s, the target is initialised to the source
// reverse state at reverse node s and only steps s..N-1 carry target dynamics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "syncsde/paths.hpp"
#include "syncsde/schedule.hpp"
#include "syncsde/scores.hpp"

namespace syncsde {

struct EditConfig {
  TimeGrid grid = TimeGrid::uniform(28);
  std::size_t start_step = 4;
  double w_src = 1.0;
  double w_tar = 1.0;
  std::uint64_t seed = 0;

  // N >= 2, 0 <= start_step < N, symmetric grid; start_step >= 1 for rectified flow.
  void validate(const NoiseSchedule& sched) const;
};

struct EditDiagnostics {
  std::vector<double> drift_norm;  // |b_Z| at each reverse step, 0 before the start
  std::vector<double> gap;         // |Zbar_k - Ybar_k| at each reverse node k < N
};

struct EditResult {
  std::vector<double> edited;
  Trajectory source_reverse;
  Trajectory target_reverse;
  std::optional<BrownianPath> backward_path;  // absent for resampling-ODE
  EditDiagnostics diagnostics;
};

// Reverse time at node k: 1 - t_k, read off the mirrored node when the grid is
// symmetric so no rounding creeps in.
double reverse_time(const TimeGrid& grid, std::size_t k);

// b(t_rev, x) = alpha(1 - t_rev) x + g^2(1 - t_rev) guided_score(x, c, 1 - t_rev, w).
void reverse_drift(const ScoreOracle& oracle, std::span<const double> x, PromptLabel c,
                   double t_rev, const NoiseSchedule& sched, double w, std::span<double> out);
std::vector<double> reverse_drift(const ScoreOracle& oracle, std::span<const double> x,
                                  PromptLabel c, double t_rev, const NoiseSchedule& sched,
                                  double w = 1.0);

// Euler-Maruyama in reverse time, k = start_step .. N-1:
//   Zbar_{k+1} = Zbar_k + b(t_k, Zbar_k) dt_k + g(1 - t_k) dWbar_k.
// Nodes before start_step hold `init`.
Trajectory reverse_integrate(std::span<const double> init, const BrownianPath& increments,
                             const ScoreOracle& oracle, PromptLabel c,
                             const NoiseSchedule& sched, std::size_t start_step, double w = 1.0);

// Maps the shared increment at reverse step k to the increment that drives the
// target, given the current source and target states.
using NoiseTransform =
    std::function<void(std::size_t step, std::span<const double> dw, std::span<const double> source,
                       std::span<const double> target, std::span<double> out)>;

EditResult sync_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                     const ScoreOracle& oracle, const NoiseSchedule& sched, const EditConfig& cfg);

// sync_edit with the target driven by transform(dWbar_k). An empty transform is
// the identity.
EditResult coupled_sync_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                             const ScoreOracle& oracle, const NoiseSchedule& sched,
                             const EditConfig& cfg, const NoiseTransform& transform);

EditResult resampling_ode_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                               const ScoreOracle& oracle, const NoiseSchedule& sched,
                               const EditConfig& cfg);

// start_step may equal N here, meaning no noise and no steps (returns y0).
std::vector<double> independent_edit(std::span<const double> y0, PromptLabel c_tar,
                                     const ScoreOracle& oracle, const NoiseSchedule& sched,
                                     const EditConfig& cfg);

enum class DriftForm { Score, Velocity };

struct SamplerOptions {
  std::size_t start_step = 0;
  double guidance = 1.0;
  DriftForm form = DriftForm::Score;
};

// n independent reverse-SDE samples with fresh noise, started from the exact
// marginal p_{1 - t_s}(. | c) at reverse node s. Row-major n x d.
// DriftForm::Velocity uses the rectified-flow velocity drift (Gaussian label,
// rectified-flow schedule, guidance 1).
std::vector<double> sample_reverse(const ScoreOracle& oracle, PromptLabel c,
                                   const NoiseSchedule& sched, const TimeGrid& grid,
                                   std::size_t n, std::uint64_t seed, const SamplerOptions& opts);

}  // namespace syncsde
