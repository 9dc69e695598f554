#include "syncsde/schedule.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <fmt/format.h>

namespace syncsde {

namespace {

// Rounding slack when a time comes from 1 - t arithmetic on grid nodes.
constexpr double kTimeSlack = 1e-12;
constexpr double kQuadTol = 1e-9;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double checked_time(double t, double hi, const char* what) {
  if (!(t >= -kTimeSlack) || !(t <= hi + kTimeSlack)) {
    throw std::domain_error(fmt::format("{}: t = {} outside [0, {}]", what, t, hi));
  }
  return std::clamp(t, 0.0, hi);
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double t) {
  const auto it = std::upper_bound(xs.begin(), xs.end(), t);
  if (it == xs.begin()) return ys.front();
  if (it == xs.end()) return ys.back();
  const auto i = static_cast<std::size_t>(it - xs.begin());
  const double w = (t - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

// One 15-point Gauss-Kronrod panel. Boost reports the |K - G| estimate in the
// [-1, 1] variable, so it is rescaled to [a, b] here.
template <class F>
double gk_panel(F& f, double a, double b, double& error) {
  double raw = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 0, 0.0, &raw);
  error = raw * 0.5 * (b - a);
  return value;
}

// Bisect until each panel meets its share of the absolute budget.
template <class F>
double adapt(F& f, double a, double b, double budget, int depth, double& error) {
  double err = 0.0;
  const double value = gk_panel(f, a, b, err);
  if (err <= budget || depth == 0) {
    error += err;
    return value;
  }
  const double mid = 0.5 * (a + b);
  return adapt(f, a, mid, 0.5 * budget, depth - 1, error) +
         adapt(f, mid, b, 0.5 * budget, depth - 1, error);
}

// Adaptive Gauss-Kronrod on [a, b], split at the tabulation knots so the
// integrand is smooth on every piece.
template <class F>
double integrate(const NoiseSchedule& sched, F&& f, double a, double b) {
  if (b <= a) return 0.0;
  std::vector<double> cuts{a};
  if (const auto* tab = std::get_if<Tabulated>(&sched.kind())) {
    for (double knot : tab->t) {
      if (knot > a && knot < b) cuts.push_back(knot);
    }
  }
  cuts.push_back(b);

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double error = 0.0;
    const double share = kQuadTol * (cuts[i + 1] - cuts[i]) / (b - a);
    total += adapt(f, cuts[i], cuts[i + 1], 0.1 * share, 30, error);
    if (!(error <= share) || !std::isfinite(total)) {
      throw QuadratureError(fmt::format(
          "quadrature did not converge on [{}, {}] (error estimate {:.3g})", cuts[i],
          cuts[i + 1], error));
    }
  }
  return total;
}

double alpha_integral_quadrature(const NoiseSchedule& sched, double s, double t) {
  return integrate(sched, [&](double u) { return alpha(sched, u); }, s, t);
}

}  // namespace

NoiseSchedule NoiseSchedule::constant_ou(double alpha, double g) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha) || !(g >= 0.0) || !std::isfinite(g)) {
    throw std::invalid_argument(
        fmt::format("constant OU schedule needs finite alpha >= 0 and g >= 0 (got {}, {})",
                    alpha, g));
  }
  return NoiseSchedule(ConstantOU{alpha, g}, 1.0);
}

NoiseSchedule NoiseSchedule::rectified_flow(double t_max) {
  if (!(t_max > 0.0 && t_max < 1.0)) {
    throw std::invalid_argument(
        fmt::format("rectified flow needs t_max in (0, 1), got {}", t_max));
  }
  return NoiseSchedule(RectifiedFlow{}, t_max);
}

NoiseSchedule NoiseSchedule::rectified_flow_for_steps(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("rectified flow grid needs at least one step");
  return rectified_flow(1.0 - 1.0 / (2.0 * static_cast<double>(steps)));
}

NoiseSchedule NoiseSchedule::tabulated(std::vector<double> t, std::vector<double> alpha,
                                       std::vector<double> g) {
  if (t.size() < 2 || alpha.size() != t.size() || g.size() != t.size()) {
    throw std::invalid_argument("tabulated schedule needs >= 2 samples of equal length");
  }
  if (t.front() != 0.0) throw std::invalid_argument("tabulated schedule must start at t = 0");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) {
      throw std::invalid_argument("tabulated schedule times must be strictly increasing");
    }
  }
  if (t.back() > 1.0) throw std::invalid_argument("tabulated schedule must end at t <= 1");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(alpha[i]) || !std::isfinite(g[i]) || g[i] < 0.0) {
      throw std::invalid_argument("tabulated schedule needs finite alpha and g >= 0");
    }
  }
  const double t_max = t.back();
  return NoiseSchedule(Tabulated{std::move(t), std::move(alpha), std::move(g)}, t_max);
}

std::string NoiseSchedule::name() const {
  return std::visit(
      overloaded{
          [](const ConstantOU& c) { return fmt::format("constant_ou(alpha={}, g={})", c.alpha, c.g); },
          [](const RectifiedFlow&) { return std::string("rectified"); },
          [](const Tabulated& tab) { return fmt::format("tabulated({} samples)", tab.t.size()); },
      },
      kind_);
}

double alpha(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.t_max(), "alpha");
  return std::visit(overloaded{
                        [](const ConstantOU& c) { return c.alpha; },
                        [t](const RectifiedFlow&) { return 1.0 / (1.0 - t); },
                        [t](const Tabulated& tab) { return interpolate(tab.t, tab.alpha, t); },
                    },
                    sched.kind());
}

double diffusion(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.t_max(), "diffusion");
  return std::visit(overloaded{
                        [](const ConstantOU& c) { return c.g; },
                        [t](const RectifiedFlow&) { return std::sqrt(2.0 * t / (1.0 - t)); },
                        [t](const Tabulated& tab) { return interpolate(tab.t, tab.g, t); },
                    },
                    sched.kind());
}

double decay_m(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.kernel_t_max(), "decay_m");
  return std::visit(overloaded{
                        [t](const ConstantOU& c) { return std::exp(-c.alpha * t); },
                        [t](const RectifiedFlow&) { return 1.0 - t; },
                        [&](const Tabulated&) { return decay_m_quadrature(sched, t); },
                    },
                    sched.kind());
}

double transition_phi(const NoiseSchedule& sched, double t, double s) {
  if (s > t) {
    throw std::domain_error(fmt::format("transition_phi: need s <= t (s = {}, t = {})", s, t));
  }
  if (s == t) return 1.0;
  if (const auto* c = std::get_if<ConstantOU>(&sched.kind())) {
    checked_time(s, sched.t_max(), "transition_phi");
    checked_time(t, sched.t_max(), "transition_phi");
    return std::exp(-c->alpha * (t - s));
  }
  if (sched.is_rectified_flow()) {
    s = checked_time(s, 1.0, "transition_phi");
    t = checked_time(t, 1.0, "transition_phi");
    return (1.0 - t) / (1.0 - s);
  }
  return std::exp(-alpha_integral_quadrature(sched, checked_time(s, sched.t_max(), "transition_phi"),
                                             checked_time(t, sched.t_max(), "transition_phi")));
}

double perturbation_variance(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.kernel_t_max(), "perturbation_variance");
  return std::visit(overloaded{
                        [t](const ConstantOU& c) {
                          if (c.alpha == 0.0) return c.g * c.g * t;
                          return -c.g * c.g * std::expm1(-2.0 * c.alpha * t) / (2.0 * c.alpha);
                        },
                        [t](const RectifiedFlow&) { return t * t; },
                        [&](const Tabulated&) { return perturbation_variance_quadrature(sched, t); },
                    },
                    sched.kind());
}

double decay_m_quadrature(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.t_max(), "decay_m_quadrature");
  return std::exp(-alpha_integral_quadrature(sched, 0.0, t));
}

double perturbation_variance_quadrature(const NoiseSchedule& sched, double t) {
  t = checked_time(t, sched.t_max(), "perturbation_variance_quadrature");
  const auto integrand = [&](double s) {
    const double phi = std::exp(-alpha_integral_quadrature(sched, s, t));
    const double g = diffusion(sched, s);
    return phi * phi * g * g;
  };
  return integrate(sched, integrand, 0.0, t);
}

}  // namespace syncsde
