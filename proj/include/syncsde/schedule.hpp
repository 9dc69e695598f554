#pragma once

// Noise schedules (alpha, g) of the forward OU process
//
//     dX_t = -alpha(t) X_t dt + g(t) dW_t,   t in [0, 1]
//
// and the deterministic kernels that describe its solution
//
//     m(t)      = exp(-int_0^t alpha)
//     Phi(t, s) = exp(-int_s^t alpha) = m(t) / m(s)
//     V(t)      = int_0^t Phi(t, s)^2 g(s)^2 ds
//
// so that X_t | X_0 ~ N(m(t) X_0, V(t) I).
//
// Time convention used across the library: forward time t runs from data (0)
// to noise (1); reverse time is 1 - t.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace syncsde {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConstantOU {
  double alpha = 1.0;
  double g = 1.0;
};

// alpha(t) = 1/(1-t), g(t) = sqrt(2t/(1-t)). Marginals match (1-t) X_0 + t eps.
struct RectifiedFlow {};

// alpha and g sampled on an increasing grid starting at 0; linear in between.
struct Tabulated {
  std::vector<double> t;
  std::vector<double> alpha;
  std::vector<double> g;
};

class NoiseSchedule {
 public:
  using Kind = std::variant<ConstantOU, RectifiedFlow, Tabulated>;

  static NoiseSchedule constant_ou(double alpha, double g);
  static NoiseSchedule rectified_flow(double t_max = 0.99);
  // t_max = 1 - 1/(2N): every node of a uniform N-step grid except t = 1.
  static NoiseSchedule rectified_flow_for_steps(std::size_t steps);
  static NoiseSchedule tabulated(std::vector<double> t, std::vector<double> alpha,
                                 std::vector<double> g);

  const Kind& kind() const noexcept { return kind_; }
  double t_max() const noexcept { return t_max_; }
  bool is_rectified_flow() const noexcept {
    return std::holds_alternative<RectifiedFlow>(kind_);
  }
  bool has_closed_form() const noexcept {
    return !std::holds_alternative<Tabulated>(kind_);
  }
  // Largest t at which m, Phi and V may be evaluated. Equals t_max except for
  // rectified flow, whose kernels have finite limits at t = 1.
  double kernel_t_max() const noexcept { return is_rectified_flow() ? 1.0 : t_max_; }
  std::string name() const;

 private:
  NoiseSchedule(Kind kind, double t_max) : kind_(std::move(kind)), t_max_(t_max) {}

  Kind kind_;
  double t_max_;
};

// Drift coefficient alpha(t). Throws std::domain_error outside [0, t_max].
double alpha(const NoiseSchedule& sched, double t);

// Diffusion coefficient g(t) >= 0. Throws std::domain_error outside [0, t_max].
double diffusion(const NoiseSchedule& sched, double t);

// m(t); closed form when the schedule has one, adaptive quadrature otherwise.
double decay_m(const NoiseSchedule& sched, double t);

// Phi(t, s) for s <= t.
double transition_phi(const NoiseSchedule& sched, double t, double s);

// V(t); closed form when available, nested quadrature otherwise.
double perturbation_variance(const NoiseSchedule& sched, double t);

// Quadrature routes, available for every schedule. Tolerance 1e-9 absolute;
// QuadratureError if the error estimate does not meet it.
double decay_m_quadrature(const NoiseSchedule& sched, double t);
double perturbation_variance_quadrature(const NoiseSchedule& sched, double t);

}  // namespace syncsde
