#include "syncsde/paths.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <ostream>
#include <stdexcept>

#include "syncsde/scores.hpp"
#include "syncsde/simd.hpp"

namespace syncsde {

namespace {

constexpr double kSymmetryTol = 1e-12;

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(fmt::format("{}: dimension mismatch ({} vs {})", what, a, b));
  }
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
  const std::size_t n = nodes_.size();
  symmetric_ = true;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(nodes_[k] + nodes_[n - 1 - k] - 1.0) > kSymmetryTol) {
      symmetric_ = false;
      break;
    }
  }
}

TimeGrid TimeGrid::uniform(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("time grid needs at least one step");
  std::vector<double> nodes(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    nodes[k] = static_cast<double>(k) / static_cast<double>(steps);
  }
  return TimeGrid(std::move(nodes));
}

TimeGrid TimeGrid::from_nodes(std::vector<double> nodes) {
  if (nodes.size() < 2) throw std::invalid_argument("time grid needs at least two nodes");
  if (nodes.front() != 0.0) throw std::invalid_argument("time grid must start at 0");
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    if (!(nodes[k] > nodes[k - 1])) {
      throw std::invalid_argument(
          fmt::format("time grid must be strictly increasing (node {} = {})", k, nodes[k]));
    }
  }
  if (nodes.back() > 1.0) throw std::invalid_argument("time grid must end at t <= 1");
  return TimeGrid(std::move(nodes));
}

double TimeGrid::max_dt() const {
  double best = 0.0;
  for (std::size_t k = 0; k < steps(); ++k) best = std::max(best, dt(k));
  return best;
}

std::size_t TimeGrid::mirror(std::size_t k) const {
  if (!symmetric_) throw std::logic_error("mirror index requires a symmetric time grid");
  return steps() - k;
}

BrownianPath::BrownianPath(TimeGrid grid, std::size_t dim)
    : grid_(std::move(grid)), dim_(dim), data_(grid_.steps() * dim, 0.0) {
  if (dim == 0) throw std::invalid_argument("Brownian path dimension must be positive");
}

BrownianPath::BrownianPath(TimeGrid grid, std::size_t dim, std::vector<double> increments)
    : grid_(std::move(grid)), dim_(dim), data_(std::move(increments)) {
  if (dim == 0) throw std::invalid_argument("Brownian path dimension must be positive");
  if (data_.size() != grid_.steps() * dim_) {
    throw std::invalid_argument("Brownian path: increment count does not match grid");
  }
}

Trajectory::Trajectory(TimeGrid grid, std::size_t dim, Direction direction)
    : grid_(std::move(grid)),
      dim_(dim),
      direction_(direction),
      data_((grid_.steps() + 1) * dim, 0.0) {
  if (dim == 0) throw std::invalid_argument("trajectory dimension must be positive");
}

BrownianPath sample_brownian(const TimeGrid& grid, std::size_t dim, Rng& rng) {
  BrownianPath path(grid, dim);
  std::normal_distribution<double> normal;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double sd = std::sqrt(grid.dt(k));
    for (double& w : path.increment(k)) w = sd * normal(rng);
  }
  return path;
}

Trajectory forward_closed_form(std::span<const double> y0, const NoiseSchedule& sched,
                               const TimeGrid& grid, const BrownianPath& path) {
  require_same_dim(y0.size(), path.dim(), "forward_closed_form");
  if (!(path.grid() == grid)) throw std::invalid_argument("forward_closed_form: grid mismatch");
  const std::size_t n = grid.steps();
  const std::size_t d = y0.size();

  // Phi(t_k, t_j) = m(t_k) / m(t_j): accumulate sum_j g(t_j)/m(t_j) dW_j once.
  Trajectory traj(grid, d, Direction::Forward);
  std::vector<double> acc(y0.begin(), y0.end());
  std::ranges::copy(y0, traj.state(0).begin());
  for (std::size_t k = 1; k <= n; ++k) {
    const double tj = grid.node(k - 1);
    simd::axpy(diffusion(sched, tj) / decay_m(sched, tj), path.increment(k - 1), acc);
    const double mk = decay_m(sched, grid.node(k));
    auto out = traj.state(k);
    for (std::size_t i = 0; i < d; ++i) out[i] = mk * acc[i];
  }
  return traj;
}

Trajectory forward_euler(std::span<const double> y0, const NoiseSchedule& sched,
                         const TimeGrid& grid, const BrownianPath& path) {
  require_same_dim(y0.size(), path.dim(), "forward_euler");
  if (!(path.grid() == grid)) throw std::invalid_argument("forward_euler: grid mismatch");
  Trajectory traj(grid, y0.size(), Direction::Forward);
  std::vector<double> y(y0.begin(), y0.end());
  std::ranges::copy(y, traj.state(0).begin());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.node(k);
    const auto dw = path.increment(k);
    simd::em_update(y, dw, dw, -alpha(sched, t) * grid.dt(k), diffusion(sched, t), 0.0);
    std::ranges::copy(y, traj.state(k + 1).begin());
  }
  return traj;
}

Trajectory reverse_trajectory(const Trajectory& traj) {
  const TimeGrid& grid = traj.grid();
  if (!grid.symmetric()) throw std::invalid_argument("reverse_trajectory: grid is not symmetric");
  const Direction flipped =
      traj.direction() == Direction::Forward ? Direction::Reversed : Direction::Forward;
  Trajectory out(grid, traj.dim(), flipped);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    std::ranges::copy(traj.state(grid.mirror(k)), out.state(k).begin());
  }
  return out;
}

BrownianPath backward_increments(const BrownianPath& path, const Trajectory& reversed,
                                 const ScoreOracle& oracle, const PromptLabel& label,
                                 const NoiseSchedule& sched, const BackwardOptions& opts) {
  const TimeGrid& grid = path.grid();
  if (reversed.direction() != Direction::Reversed) {
    throw std::invalid_argument("backward_increments: trajectory must be reversed");
  }
  if (!grid.symmetric()) throw std::invalid_argument("backward_increments: grid is not symmetric");
  if (!(reversed.grid() == grid)) throw std::invalid_argument("backward_increments: grid mismatch");
  require_same_dim(path.dim(), reversed.dim(), "backward_increments");
  require_same_dim(path.dim(), oracle.dim(), "backward_increments");

  const std::size_t n = grid.steps();
  const std::size_t d = path.dim();
  BrownianPath out(grid, d);
  std::vector<double> s(d);
  for (std::size_t k = 0; k < n; ++k) {
    // Reverse step k covers forward time [1 - t_{k+1}, 1 - t_k].
    const auto fwd = path.increment(grid.mirror(k + 1));
    auto bar = out.increment(k);
    for (std::size_t i = 0; i < d; ++i) bar[i] = -fwd[i];
    if (k < opts.first_step) continue;
    const double tau = grid.node(grid.mirror(k));
    oracle.guided_score(reversed.state(k), label, tau, sched, opts.guidance, s);
    simd::axpy(-diffusion(sched, tau) * grid.dt(k), s, bar);
  }
  return out;
}

void write_csv(std::ostream& os, const Trajectory& traj) {
  os << 't';
  for (std::size_t i = 0; i < traj.dim(); ++i) os << ",x" << i;
  os << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << fmt::format("{:.17g}", traj.grid().node(k));
    for (double v : traj.state(k)) os << fmt::format(",{:.17g}", v);
    os << '\n';
  }
}

void write_csv(std::ostream& os, const BrownianPath& path) {
  os << "t_start,dt";
  for (std::size_t i = 0; i < path.dim(); ++i) os << ",w" << i;
  os << '\n';
  for (std::size_t k = 0; k < path.steps(); ++k) {
    os << fmt::format("{:.17g},{:.17g}", path.grid().node(k), path.grid().dt(k));
    for (double v : path.increment(k)) os << fmt::format(",{:.17g}", v);
    os << '\n';
  }
}

}  // namespace syncsde
