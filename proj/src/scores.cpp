#include "syncsde/scores.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <stdexcept>

#include "syncsde/simd.hpp"

namespace syncsde {

namespace {

constexpr double kWeightTol = 1e-12;

}  // namespace

ScoreOracle::ScoreOracle(std::vector<LabelDistribution> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw std::invalid_argument("score oracle needs at least one label");
  dim_ = labels_.front().components.empty() ? 0 : labels_.front().components.front().mean.size();
  if (dim_ == 0) throw std::invalid_argument("score oracle: label means must be non-empty");

  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& lab = labels_[i];
    for (std::size_t j = 0; j < i; ++j) {
      if (labels_[j].name == lab.name) {
        throw std::invalid_argument(fmt::format("score oracle: duplicate label '{}'", lab.name));
      }
    }
    if (lab.components.empty()) {
      throw std::invalid_argument(fmt::format("label '{}' has no components", lab.name));
    }
    double total = 0.0;
    std::vector<Component> comps;
    for (const auto& c : lab.components) {
      if (c.mean.size() != dim_) {
        throw std::invalid_argument(
            fmt::format("label '{}': component dimension {} differs from {}", lab.name,
                        c.mean.size(), dim_));
      }
      if (!(c.weight > 0.0) || !(c.std > 0.0) || !std::isfinite(c.std)) {
        throw std::invalid_argument(
            fmt::format("label '{}': weights and stds must be positive", lab.name));
      }
      for (double v : c.mean) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument(fmt::format("label '{}': non-finite mean", lab.name));
        }
      }
      total += c.weight;
      comps.push_back({c.weight, c.mean, c.std * c.std});
    }
    if (std::abs(total - 1.0) > kWeightTol) {
      throw std::invalid_argument(
          fmt::format("label '{}': weights sum to {}, expected 1", lab.name, total));
    }
    comps_.push_back(std::move(comps));
  }

  const double share = 1.0 / static_cast<double>(labels_.size());
  for (const auto& comps : comps_) {
    for (const auto& c : comps) pool_.push_back({c.weight * share, c.mean, c.var0});
  }
}

ScoreOracle ScoreOracle::gaussian_family(std::vector<GaussianLabel> labels) {
  std::vector<LabelDistribution> dists;
  dists.reserve(labels.size());
  for (auto& l : labels) {
    dists.push_back({std::move(l.name), {GaussianComponent{1.0, std::move(l.mean), l.std}}});
  }
  return ScoreOracle(std::move(dists));
}

PromptLabel ScoreOracle::label(std::string_view name) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].name == name) return PromptLabel{i};
  }
  throw std::invalid_argument(fmt::format("unknown prompt label '{}'", name));
}

const std::string& ScoreOracle::label_name(PromptLabel c) const { return distribution(c).name; }

const LabelDistribution& ScoreOracle::distribution(PromptLabel c) const {
  if (c.id >= labels_.size()) {
    throw std::invalid_argument(fmt::format("unknown prompt label id {}", c.id));
  }
  return labels_[c.id];
}

namespace {

// Scores are defined on [0, t_max]; the kernels alone may go further.
void check_score_time(double t, const NoiseSchedule& sched, const char* what) {
  if (!(t >= 0.0 && t <= sched.t_max())) {
    throw std::domain_error(
        fmt::format("{}: t = {} outside [0, {}]", what, t, sched.t_max()));
  }
}

}  // namespace

bool ScoreOracle::is_gaussian(PromptLabel c) const {
  return distribution(c).components.size() == 1;
}

void ScoreOracle::mixture_score(std::span<const Component> comps, std::span<const double> x,
                                double m, double v, std::span<double> out) const {
  std::vector<double> center(dim_);
  if (comps.size() == 1) {
    const auto& c = comps.front();
    const double var = m * m * c.var0 + v;
    for (std::size_t i = 0; i < dim_; ++i) center[i] = m * c.mean[i];
    const std::vector<double> zero(dim_, 0.0);
    simd::affine_bcast(x, center, -1.0 / var, zero, out);
    return;
  }

  const double d = static_cast<double>(dim_);
  std::vector<double> logw(comps.size());
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const auto& c = comps[j];
    const double var = m * m * c.var0 + v;
    for (std::size_t i = 0; i < dim_; ++i) center[i] = m * c.mean[i];
    logw[j] = std::log(c.weight) - 0.5 * simd::squared_distance(x, center) / var -
              0.5 * d * std::log(var);
  }
  const double top = *std::ranges::max_element(logw);
  double norm = 0.0;
  for (double& l : logw) {
    l = std::exp(l - top);
    norm += l;
  }
  std::ranges::fill(out, 0.0);
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const auto& c = comps[j];
    const double var = m * m * c.var0 + v;
    const double r = logw[j] / norm / var;
    for (std::size_t i = 0; i < dim_; ++i) out[i] += r * (m * c.mean[i] - x[i]);
  }
}

double ScoreOracle::mixture_log_density(std::span<const Component> comps,
                                        std::span<const double> x, double m, double v) const {
  const double d = static_cast<double>(dim_);
  std::vector<double> center(dim_);
  std::vector<double> logw(comps.size());
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const auto& c = comps[j];
    const double var = m * m * c.var0 + v;
    for (std::size_t i = 0; i < dim_; ++i) center[i] = m * c.mean[i];
    logw[j] = std::log(c.weight) - 0.5 * simd::squared_distance(x, center) / var -
              0.5 * d * std::log(2.0 * std::numbers::pi * var);
  }
  const double top = *std::ranges::max_element(logw);
  double acc = 0.0;
  for (double l : logw) acc += std::exp(l - top);
  return top + std::log(acc);
}

void ScoreOracle::score(std::span<const double> x, PromptLabel c, double t,
                        const NoiseSchedule& sched, std::span<double> out) const {
  distribution(c);
  if (x.size() != dim_ || out.size() != dim_) {
    throw std::invalid_argument("score: dimension mismatch");
  }
  check_score_time(t, sched, "score");
  mixture_score(comps_[c.id], x, decay_m(sched, t), perturbation_variance(sched, t), out);
}

double ScoreOracle::log_density(std::span<const double> x, PromptLabel c, double t,
                                const NoiseSchedule& sched) const {
  distribution(c);
  if (x.size() != dim_) throw std::invalid_argument("log_density: dimension mismatch");
  check_score_time(t, sched, "log_density");
  return mixture_log_density(comps_[c.id], x, decay_m(sched, t), perturbation_variance(sched, t));
}

void ScoreOracle::unconditional_score(std::span<const double> x, double t,
                                      const NoiseSchedule& sched, std::span<double> out) const {
  if (x.size() != dim_ || out.size() != dim_) {
    throw std::invalid_argument("unconditional_score: dimension mismatch");
  }
  check_score_time(t, sched, "unconditional_score");
  mixture_score(pool_, x, decay_m(sched, t), perturbation_variance(sched, t), out);
}

double ScoreOracle::unconditional_log_density(std::span<const double> x, double t,
                                              const NoiseSchedule& sched) const {
  if (x.size() != dim_) throw std::invalid_argument("unconditional_log_density: dimension mismatch");
  check_score_time(t, sched, "unconditional_log_density");
  return mixture_log_density(pool_, x, decay_m(sched, t), perturbation_variance(sched, t));
}

void ScoreOracle::guided_score(std::span<const double> x, PromptLabel c, double t,
                               const NoiseSchedule& sched, double w,
                               std::span<double> out) const {
  score(x, c, t, sched, out);
  if (w == 1.0) return;
  std::vector<double> uncond(dim_);
  unconditional_score(x, t, sched, uncond);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = uncond[i] + w * (out[i] - uncond[i]);
}

void ScoreOracle::guided_score_batch(std::span<const double> xs, PromptLabel c, double t,
                                     const NoiseSchedule& sched, double w,
                                     std::span<double> out) const {
  distribution(c);
  if (xs.size() % dim_ != 0 || out.size() != xs.size()) {
    throw std::invalid_argument("guided_score_batch: batch size mismatch");
  }
  check_score_time(t, sched, "guided_score_batch");
  if (w == 1.0 && is_gaussian(c)) {
    const auto& comp = comps_[c.id].front();
    const double m = decay_m(sched, t);
    const double var = m * m * comp.var0 + perturbation_variance(sched, t);
    std::vector<double> center(dim_);
    for (std::size_t i = 0; i < dim_; ++i) center[i] = m * comp.mean[i];
    const std::vector<double> zero(dim_, 0.0);
    simd::affine_bcast(xs, center, -1.0 / var, zero, out);
    return;
  }
  for (std::size_t row = 0; row < xs.size(); row += dim_) {
    guided_score(xs.subspan(row, dim_), c, t, sched, w, out.subspan(row, dim_));
  }
}

std::vector<double> ScoreOracle::marginal_mean(PromptLabel c, double t,
                                               const NoiseSchedule& sched) const {
  distribution(c);
  const double m = decay_m(sched, t);
  std::vector<double> mean(dim_, 0.0);
  for (const auto& comp : comps_[c.id]) {
    for (std::size_t i = 0; i < dim_; ++i) mean[i] += comp.weight * m * comp.mean[i];
  }
  return mean;
}

std::vector<double> ScoreOracle::marginal_variance(PromptLabel c, double t,
                                                   const NoiseSchedule& sched) const {
  const auto mean = marginal_mean(c, t, sched);
  const double m = decay_m(sched, t);
  const double v = perturbation_variance(sched, t);
  std::vector<double> var(dim_, 0.0);
  for (const auto& comp : comps_[c.id]) {
    for (std::size_t i = 0; i < dim_; ++i) {
      const double mu = m * comp.mean[i];
      var[i] += comp.weight * (m * m * comp.var0 + v + mu * mu);
    }
  }
  for (std::size_t i = 0; i < dim_; ++i) var[i] -= mean[i] * mean[i];
  return var;
}

void ScoreOracle::sample_marginal(PromptLabel c, double t, const NoiseSchedule& sched, Rng& rng,
                                  std::span<double> out) const {
  distribution(c);
  const auto& comps = comps_[c.id];
  std::size_t pick = 0;
  if (comps.size() > 1) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    while (pick + 1 < comps.size() && u >= comps[pick].weight) u -= comps[pick++].weight;
  }
  const auto& comp = comps[pick];
  const double m = decay_m(sched, t);
  const double sd = std::sqrt(m * m * comp.var0 + perturbation_variance(sched, t));
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < dim_; ++i) out[i] = m * comp.mean[i] + sd * normal(rng);
}

std::vector<double> score(const ScoreOracle& oracle, std::span<const double> x, PromptLabel c,
                          double t, const NoiseSchedule& sched) {
  std::vector<double> out(oracle.dim());
  oracle.score(x, c, t, sched, out);
  return out;
}

std::vector<double> guided_score(const ScoreOracle& oracle, std::span<const double> x,
                                 PromptLabel c, double t, const NoiseSchedule& sched, double w) {
  std::vector<double> out(oracle.dim());
  oracle.guided_score(x, c, t, sched, w, out);
  return out;
}

std::vector<double> rf_velocity(const ScoreOracle& oracle, std::span<const double> x,
                                PromptLabel c, double t) {
  if (!oracle.is_gaussian(c)) {
    throw std::invalid_argument(
        fmt::format("rf_velocity: label '{}' is not a single Gaussian", oracle.label_name(c)));
  }
  if (!(t >= 0.0 && t < 1.0)) {
    throw std::domain_error(fmt::format("rf_velocity: t = {} outside [0, 1)", t));
  }
  if (x.size() != oracle.dim()) throw std::invalid_argument("rf_velocity: dimension mismatch");
  const auto& comp = oracle.distribution(c).components.front();
  const double var0 = comp.std * comp.std;
  const double s2 = (1.0 - t) * (1.0 - t) * var0 + t * t;
  const double rate = (t - (1.0 - t) * var0) / s2;  // (ds/dt) / s
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = -comp.mean[i] + rate * (x[i] - (1.0 - t) * comp.mean[i]);
  }
  return v;
}

VelocityFn reverse_velocity(const ScoreOracle& oracle) {
  return [&oracle](std::span<const double> x, PromptLabel c, double t_rev) {
    auto v = rf_velocity(oracle, x, c, 1.0 - t_rev);
    for (double& e : v) e = -e;
    return v;
  };
}

std::vector<double> rf_sde_drift(const VelocityFn& vel, std::span<const double> x, PromptLabel c,
                                 double t_rev, const NoiseSchedule& sched) {
  if (!sched.is_rectified_flow()) {
    throw std::invalid_argument("rf_sde_drift needs a rectified-flow schedule");
  }
  if (!(t_rev > 0.0 && t_rev <= 1.0)) {
    throw std::domain_error(
        fmt::format("rf_sde_drift: t_rev = {} outside (0, 1]; alpha(1) is singular", t_rev));
  }
  const double a = alpha(sched, 1.0 - t_rev);
  auto out = vel(x, c, t_rev);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * out[i] - a * x[i];
  return out;
}

}  // namespace syncsde
