#pragma once

// Analytic conditional score oracles. Each prompt label owns an isotropic
// Gaussian mixture p(x | c); pushed through the forward OU process, component
// N(mu, sigma^2 I) becomes N(m(t) mu, (m(t)^2 sigma^2 + V(t)) I), so the time-t
// score and log density are exact.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "syncsde/random.hpp"
#include "syncsde/schedule.hpp"

namespace syncsde {

struct PromptLabel {
  std::size_t id = 0;
  friend bool operator==(const PromptLabel&, const PromptLabel&) = default;
};

struct GaussianComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double std = 1.0;
};

struct LabelDistribution {
  std::string name;
  std::vector<GaussianComponent> components;
};

struct GaussianLabel {
  std::string name;
  std::vector<double> mean;
  double std = 1.0;
};

class ScoreOracle {
 public:
  // Mixture family. Weights must be positive and sum to 1 within 1e-12.
  explicit ScoreOracle(std::vector<LabelDistribution> labels);

  static ScoreOracle gaussian_family(std::vector<GaussianLabel> labels);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t label_count() const noexcept { return labels_.size(); }
  PromptLabel label(std::string_view name) const;
  const std::string& label_name(PromptLabel c) const;
  const LabelDistribution& distribution(PromptLabel c) const;
  bool is_gaussian(PromptLabel c) const;

  // Exact grad_x log p_t(x | c).
  void score(std::span<const double> x, PromptLabel c, double t, const NoiseSchedule& sched,
             std::span<double> out) const;
  double log_density(std::span<const double> x, PromptLabel c, double t,
                     const NoiseSchedule& sched) const;

  // The unconditional pool is the equal-weight mixture over all labels.
  void unconditional_score(std::span<const double> x, double t, const NoiseSchedule& sched,
                           std::span<double> out) const;
  double unconditional_log_density(std::span<const double> x, double t,
                                   const NoiseSchedule& sched) const;

  // s_uncond + w (s_c - s_uncond). w = 1 returns the conditional score exactly.
  void guided_score(std::span<const double> x, PromptLabel c, double t, const NoiseSchedule& sched,
                    double w, std::span<double> out) const;

  // guided_score over a row-major batch of states (size multiple of dim()).
  void guided_score_batch(std::span<const double> xs, PromptLabel c, double t,
                          const NoiseSchedule& sched, double w, std::span<double> out) const;

  // Exact moments of p_t(x | c): mean vector and per-coordinate variance.
  std::vector<double> marginal_mean(PromptLabel c, double t, const NoiseSchedule& sched) const;
  std::vector<double> marginal_variance(PromptLabel c, double t, const NoiseSchedule& sched) const;

  // One exact draw from p_t(x | c).
  void sample_marginal(PromptLabel c, double t, const NoiseSchedule& sched, Rng& rng,
                       std::span<double> out) const;

 private:
  struct Component {
    double weight;
    std::vector<double> mean;
    double var0;  // sigma^2
  };

  void mixture_score(std::span<const Component> comps, std::span<const double> x, double m,
                     double v, std::span<double> out) const;
  double mixture_log_density(std::span<const Component> comps, std::span<const double> x,
                             double m, double v) const;

  std::vector<LabelDistribution> labels_;
  std::vector<std::vector<Component>> comps_;
  std::vector<Component> pool_;
  std::size_t dim_ = 0;
};

std::vector<double> score(const ScoreOracle& oracle, std::span<const double> x, PromptLabel c,
                          double t, const NoiseSchedule& sched);

std::vector<double> guided_score(const ScoreOracle& oracle, std::span<const double> x,
                                 PromptLabel c, double t, const NoiseSchedule& sched, double w);

// Marginal-flow velocity of the Gaussian path mu_t = (1-t) mu, s_t^2 = (1-t)^2
// sigma^2 + t^2, in the forward (data -> noise) direction:
//     v(x, t) = d mu_t/dt + (ds_t/dt / s_t) (x - mu_t).
// Label c must be a single Gaussian. Throws std::domain_error for t >= 1.
std::vector<double> rf_velocity(const ScoreOracle& oracle, std::span<const double> x,
                                PromptLabel c, double t);

// Velocity in reverse time (noise -> data): v_rev(x, c, t_rev) = -v(x, c, 1 - t_rev).
using VelocityFn = std::function<std::vector<double>(std::span<const double>, PromptLabel, double)>;
VelocityFn reverse_velocity(const ScoreOracle& oracle);

// Reverse-time SDE drift of a rectified flow, in terms of its reverse velocity:
//     2 v_rev(x, c, t_rev) - alpha(1 - t_rev) x.
// This equals alpha(1-t) x + g^2(1-t) score(x, c, 1-t) under alpha = 1/(1-t),
// g^2 = 2t/(1-t). Needs a rectified-flow schedule and t_rev > 0.
std::vector<double> rf_sde_drift(const VelocityFn& vel, std::span<const double> x, PromptLabel c,
                                 double t_rev, const NoiseSchedule& sched);

}  // namespace syncsde
