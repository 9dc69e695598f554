#pragma once

// Time grids, Brownian paths and trajectories, plus the forward simulators and
// the structured backward increments that let a reverse-time integration
// retrace a given forward path.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "syncsde/random.hpp"
#include "syncsde/schedule.hpp"

namespace syncsde {

class ScoreOracle;
struct PromptLabel;

class TimeGrid {
 public:
  // Nodes k/N, k = 0..N. Always symmetric.
  static TimeGrid uniform(std::size_t steps);
  // Validates 0 = t_0 < t_1 < ... < t_N <= 1; detects symmetry under t -> 1 - t.
  static TimeGrid from_nodes(std::vector<double> nodes);

  std::size_t steps() const noexcept { return nodes_.size() - 1; }
  double node(std::size_t k) const { return nodes_[k]; }
  double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
  std::span<const double> nodes() const noexcept { return nodes_; }
  bool symmetric() const noexcept { return symmetric_; }
  double max_dt() const;

  // Index j with t_j = 1 - t_k. Requires a symmetric grid.
  std::size_t mirror(std::size_t k) const;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  explicit TimeGrid(std::vector<double> nodes);

  std::vector<double> nodes_;
  bool symmetric_ = false;
};

// increments[k] is the Brownian increment over [t_k, t_{k+1}]; stored row-major.
class BrownianPath {
 public:
  BrownianPath(TimeGrid grid, std::size_t dim);
  BrownianPath(TimeGrid grid, std::size_t dim, std::vector<double> increments);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t steps() const noexcept { return grid_.steps(); }
  std::span<const double> increment(std::size_t k) const {
    return {data_.data() + k * dim_, dim_};
  }
  std::span<double> increment(std::size_t k) { return {data_.data() + k * dim_, dim_}; }
  std::span<const double> data() const noexcept { return data_; }

 private:
  TimeGrid grid_;
  std::size_t dim_;
  std::vector<double> data_;
};

enum class Direction { Forward, Reversed };

// states[k] is the state at grid node k (forward time t_k, or reverse time t_k).
class Trajectory {
 public:
  Trajectory(TimeGrid grid, std::size_t dim, Direction direction);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return grid_.steps() + 1; }
  Direction direction() const noexcept { return direction_; }
  std::span<const double> state(std::size_t k) const {
    return {data_.data() + k * dim_, dim_};
  }
  std::span<double> state(std::size_t k) { return {data_.data() + k * dim_, dim_}; }
  std::span<const double> data() const noexcept { return data_; }

 private:
  TimeGrid grid_;
  std::size_t dim_;
  Direction direction_;
  std::vector<double> data_;
};

// I.i.d. N(0, dt_k I_d) increments.
BrownianPath sample_brownian(const TimeGrid& grid, std::size_t dim, Rng& rng);

// Y_{t_k} = m(t_k) y0 + sum_{j<k} Phi(t_k, t_j) g(t_j) dW_j.
//
// The final node may lie beyond sched.t_max() (rectified flow at t = 1); it is
// then evaluated through the exact kernel limits, which make Phi(1, t_j) = 0.
Trajectory forward_closed_form(std::span<const double> y0, const NoiseSchedule& sched,
                               const TimeGrid& grid, const BrownianPath& path);

// Euler-Maruyama: Y_{k+1} = Y_k - alpha(t_k) Y_k dt_k + g(t_k) dW_k.
Trajectory forward_euler(std::span<const double> y0, const NoiseSchedule& sched,
                         const TimeGrid& grid, const BrownianPath& path);

// Output state at node t_k is the input state at node 1 - t_k. Symmetric grids only.
Trajectory reverse_trajectory(const Trajectory& traj);

struct BackwardOptions {
  double guidance = 1.0;
  // Steps before this index get the score-free increment -dW_{N-1-k}. Use a
  // positive value when the score cannot be evaluated at reverse time 0.
  std::size_t first_step = 0;
};

// dWbar_k = -dW_{N-1-k} - g(1 - t_k) S(Ybar_k, c, 1 - t_k) dt_k, the discrete
// backward Brownian increments built from the forward noise and the score
// along the reversed forward path.
BrownianPath backward_increments(const BrownianPath& path, const Trajectory& reversed,
                                 const ScoreOracle& oracle, const PromptLabel& label,
                                 const NoiseSchedule& sched, const BackwardOptions& opts = {});

// CSV: header "t,x0,...,x{d-1}", one row per node.
void write_csv(std::ostream& os, const Trajectory& traj);
// CSV: header "t_start,dt,w0,...", one row per step.
void write_csv(std::ostream& os, const BrownianPath& path);

}  // namespace syncsde
