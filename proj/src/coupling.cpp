#include "syncsde/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <fmt/format.h>
#include <stdexcept>

#include "syncsde/parallel.hpp"
#include "syncsde/random.hpp"
#include "syncsde/simd.hpp"
#include "syncsde/verify.hpp"

namespace syncsde {

namespace {

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// Rules whose Q does not depend on the state resolve once per dimension.
struct ResolvedRule {
  const CouplingRule* rule;
  std::optional<Eigen::MatrixXd> fixed;  // empty for Synchronous and Reflection

  ResolvedRule(const CouplingRule& r, std::size_t dim) : rule(&r) {
    validate_rule(r, dim);
    if (const auto* f = std::get_if<FixedOrthonormal>(&r)) fixed = f->q;
    if (const auto* rnd = std::get_if<RandomOrthonormal>(&r)) {
      fixed = random_orthonormal(dim, rnd->seed);
    }
  }

  Eigen::MatrixXd matrix(std::span<const double> y, std::span<const double> z) const {
    if (fixed) return *fixed;
    if (std::holds_alternative<Reflection>(*rule)) return reflection_matrix(y, z);
    return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(y.size()),
                                     static_cast<Eigen::Index>(y.size()));
  }

  void apply(std::span<const double> dw, std::span<const double> y, std::span<const double> z,
             std::span<double> out) const {
    if (std::holds_alternative<Synchronous>(*rule)) {
      std::ranges::copy(dw, out.begin());
      return;
    }
    if (std::holds_alternative<Reflection>(*rule)) {
      // Q dW = dW - 2 n (n . dW), without forming Q.
      const double dist2 = simd::squared_distance(y, z);
      std::ranges::copy(dw, out.begin());
      if (std::sqrt(dist2) < kReflectionTie) return;
      double proj = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) proj += (y[i] - z[i]) * dw[i];
      const double scale = -2.0 * proj / dist2;
      for (std::size_t i = 0; i < y.size(); ++i) out[i] += scale * (y[i] - z[i]);
      return;
    }
    Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) =
        *fixed * as_vector(dw);
  }
};

}  // namespace

std::string rule_name(const CouplingRule& rule) {
  return std::visit(overloaded{[](const Synchronous&) { return std::string("synchronous"); },
                               [](const Reflection&) { return std::string("reflection"); },
                               [](const FixedOrthonormal&) { return std::string("fixed"); },
                               [](const RandomOrthonormal& r) {
                                 return fmt::format("random_{}", r.seed);
                               }},
                    rule);
}

bool is_orthonormal(const Eigen::MatrixXd& q, double tol) {
  if (q.rows() != q.cols() || q.rows() == 0) return false;
  const Eigen::MatrixXd err =
      q.transpose() * q - Eigen::MatrixXd::Identity(q.rows(), q.cols());
  return err.cwiseAbs().maxCoeff() <= tol;
}

void validate_rule(const CouplingRule& rule, std::size_t dim) {
  if (const auto* f = std::get_if<FixedOrthonormal>(&rule)) {
    if (f->q.rows() != static_cast<Eigen::Index>(dim) || f->q.cols() != static_cast<Eigen::Index>(dim)) {
      throw std::invalid_argument(fmt::format("coupling: fixed Q is {}x{}, state dimension is {}",
                                              f->q.rows(), f->q.cols(), dim));
    }
    if (!is_orthonormal(f->q)) {
      throw std::invalid_argument("coupling: fixed Q is not orthonormal (|Q^T Q - I| > 1e-10)");
    }
  }
}

Eigen::MatrixXd random_orthonormal(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("random_orthonormal: dimension must be positive");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal;
  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

Eigen::MatrixXd reflection_matrix(std::span<const double> y, std::span<const double> z) {
  if (y.size() != z.size()) throw std::invalid_argument("reflection: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::VectorXd diff = as_vector(y) - as_vector(z);
  const double len = diff.norm();
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
  if (len < kReflectionTie) return q;
  diff /= len;
  q -= 2.0 * diff * diff.transpose();
  return q;
}

Eigen::MatrixXd rule_matrix(const CouplingRule& rule, std::span<const double> y,
                            std::span<const double> z) {
  if (y.size() != z.size()) throw std::invalid_argument("rule_matrix: dimension mismatch");
  return ResolvedRule(rule, y.size()).matrix(y, z);
}

std::vector<double> apply_rule(const CouplingRule& rule, std::span<const double> dw,
                               std::span<const double> y, std::span<const double> z) {
  if (dw.size() != y.size() || y.size() != z.size()) {
    throw std::invalid_argument("apply_rule: dimension mismatch");
  }
  std::vector<double> out(dw.size());
  ResolvedRule(rule, dw.size()).apply(dw, y, z, out);
  return out;
}

double expected_increment_cost(const Eigen::MatrixXd& q, double dt) {
  if (!is_orthonormal(q)) {
    throw std::invalid_argument("expected_increment_cost: Q is not orthonormal");
  }
  return 2.0 * (static_cast<double>(q.rows()) - q.trace()) * dt;
}

McEstimate mc_increment_cost(const Eigen::MatrixXd& q, double dt, std::size_t n,
                             std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("mc_increment_cost: need at least one draw");
  if (q.rows() != q.cols()) throw std::invalid_argument("mc_increment_cost: Q must be square");
  const Eigen::Index d = q.rows();
  const Eigen::MatrixXd a = q - Eigen::MatrixXd::Identity(d, d);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  Eigen::VectorXd dw(d);
  Eigen::VectorXd moved(d);
  std::vector<double> costs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) dw(j) = normal(rng);
    moved.noalias() = a * dw;
    costs[i] = moved.squaredNorm();
  }
  return mean_and_se(costs);
}

EditResult coupled_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                        const CouplingRule& rule, const ScoreOracle& oracle,
                        const NoiseSchedule& sched, const EditConfig& cfg) {
  if (std::holds_alternative<Synchronous>(rule)) {
    return sync_edit(y0, c_src, c_tar, oracle, sched, cfg);
  }
  const ResolvedRule resolved(rule, oracle.dim());
  return coupled_sync_edit(
      y0, c_src, c_tar, oracle, sched, cfg,
      [&resolved](std::size_t, std::span<const double> dw, std::span<const double> source,
                  std::span<const double> target, std::span<double> out) {
        resolved.apply(dw, source, target, out);
      });
}

GreedyReport greedy_optimality_experiment(const ScoreOracle& oracle, const NoiseSchedule& sched,
                                          const GreedyConfig& cfg,
                                          const std::vector<CouplingRule>& rules) {
  if (rules.empty() || !std::holds_alternative<Synchronous>(rules.front())) {
    throw std::invalid_argument("greedy experiment: the first rule must be synchronous");
  }
  if (cfg.seeds < 2) throw std::invalid_argument("greedy experiment: need at least 2 seeds");
  cfg.edit.validate(sched);
  const TimeGrid& grid = cfg.edit.grid;
  if (cfg.step >= grid.steps()) {
    throw std::invalid_argument(
        fmt::format("greedy experiment: step {} must be below N = {}", cfg.step, grid.steps()));
  }
  if (sched.is_rectified_flow() && cfg.step == 0) {
    throw std::invalid_argument("greedy experiment: rectified flow needs step >= 1");
  }

  const std::size_t d = oracle.dim();
  std::vector<ResolvedRule> resolved;
  resolved.reserve(rules.size());
  for (const auto& r : rules) resolved.emplace_back(r, d);

  const double tau = reverse_time(grid, cfg.step);
  const double t_rev = grid.node(cfg.step);
  const double dt = grid.dt(cfg.step);
  const double g = diffusion(sched, tau);

  const std::size_t nr = rules.size();
  const std::size_t ns = cfg.seeds;
  std::vector<double> one_step(nr * ns);
  std::vector<double> predicted(nr * ns);
  std::vector<double> end_to_end(cfg.end_to_end ? nr * ns : 0);

  parallel_for(ns, cfg.jobs, [&](std::size_t i) {
    const std::uint64_t seed = stream_seed(cfg.edit.seed, i);
    Rng rng = make_rng(seed, streams::kInitial);
    std::vector<double> y(d), z(d), dw(d), qdw(d), b_y(d), b_z(d);
    oracle.sample_marginal(cfg.c_src, tau, sched, rng, y);
    oracle.sample_marginal(cfg.c_tar, tau, sched, rng, z);
    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    for (double& e : dw) e = normal(rng);
    reverse_drift(oracle, y, cfg.c_src, t_rev, sched, cfg.edit.w_src, b_y);
    reverse_drift(oracle, z, cfg.c_tar, t_rev, sched, cfg.edit.w_tar, b_z);

    for (std::size_t r = 0; r < nr; ++r) {
      resolved[r].apply(dw, y, z, qdw);
      // Antithetic pair: +dW and -dW share the state pair.
      double acc = 0.0;
      for (double sign : {1.0, -1.0}) {
        double dev = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double e = (z[j] - y[j]) + (b_z[j] - b_y[j]) * dt + sign * g * (qdw[j] - dw[j]);
          dev += e * e;
        }
        acc += dev;
      }
      one_step[r * ns + i] = 0.5 * acc;
      predicted[r * ns + i] = g * g * expected_increment_cost(resolved[r].matrix(y, z), dt);
    }

    if (cfg.end_to_end) {
      std::vector<double> y0(d);
      Rng src = make_rng(seed, streams::kSource);
      oracle.sample_marginal(cfg.c_src, 0.0, sched, src, y0);
      EditConfig ec = cfg.edit;
      ec.seed = seed;
      for (std::size_t r = 0; r < nr; ++r) {
        const EditResult res = coupled_edit(y0, cfg.c_src, cfg.c_tar, rules[r], oracle, sched, ec);
        end_to_end[r * ns + i] = simd::squared_distance(res.target_reverse.state(grid.steps()),
                                                        res.source_reverse.state(grid.steps()));
      }
    }
  });

  GreedyReport report;
  report.dt = dt;
  report.g = g;
  std::vector<double> diff(ns);
  const std::span<const double> sync_vals(one_step.data(), ns);
  for (std::size_t r = 0; r < nr; ++r) {
    RuleReport rr;
    rr.name = rule_name(rules[r]);
    const std::span<const double> vals(one_step.data() + r * ns, ns);
    rr.one_step = mean_and_se(vals);
    for (std::size_t i = 0; i < ns; ++i) diff[i] = vals[i] - sync_vals[i];
    const TTest t = paired_t_test_greater(diff);
    rr.gap = {t.mean, t.se};
    rr.t_stat = t.t;
    rr.p_value = r == 0 ? 1.0 : t.p;
    rr.predicted_gap = mean_and_se(std::span<const double>(predicted.data() + r * ns, ns)).mean;
    if (cfg.end_to_end) {
      rr.end_to_end = mean_and_se(std::span<const double>(end_to_end.data() + r * ns, ns));
    }
    report.rules.push_back(std::move(rr));
  }

  report.argmin = 0;
  for (std::size_t r = 1; r < nr; ++r) {
    if (report.rules[r].one_step.mean < report.rules[report.argmin].one_step.mean) {
      report.argmin = r;
    }
  }
  report.synchronous_minimal = report.argmin == 0;
  report.all_significant = true;
  for (std::size_t r = 1; r < nr; ++r) {
    if (!(report.rules[r].p_value < cfg.alpha)) report.all_significant = false;
  }
  return report;
}

}  // namespace syncsde
