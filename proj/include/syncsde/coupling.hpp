#pragma once

// Orthonormal couplings dWbar^Z = Q dWbar^Y between the source and target
// reverse SDEs. Q = I is the synchronous coupling used for editing; Q = I - 2 n n^T
// with n = (y - z)/|y - z| is reflection.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "syncsde/editing.hpp"
#include "syncsde/verify.hpp"

namespace syncsde {

struct Synchronous {};
// Falls back to Q = I when |y - z| < 1e-12.
struct Reflection {};
struct FixedOrthonormal {
  Eigen::MatrixXd q;
};
// A fixed Q drawn from `seed` (see random_orthonormal).
struct RandomOrthonormal {
  std::uint64_t seed = 0;
};

using CouplingRule = std::variant<Synchronous, Reflection, FixedOrthonormal, RandomOrthonormal>;

inline constexpr double kOrthonormalTol = 1e-10;
inline constexpr double kReflectionTie = 1e-12;

std::string rule_name(const CouplingRule& rule);

// max |Q^T Q - I| <= tol, and Q square.
bool is_orthonormal(const Eigen::MatrixXd& q, double tol = kOrthonormalTol);

// Throws std::invalid_argument for a FixedOrthonormal that is not orthonormal.
void validate_rule(const CouplingRule& rule, std::size_t dim);

// Haar-style draw: QR of a standard Gaussian matrix, columns sign-fixed so R
// has a positive diagonal.
Eigen::MatrixXd random_orthonormal(std::size_t dim, std::uint64_t seed);

// I - 2 n n^T, n = (y - z)/|y - z|; identity on a tie.
Eigen::MatrixXd reflection_matrix(std::span<const double> y, std::span<const double> z);

// Q for the current state pair.
Eigen::MatrixXd rule_matrix(const CouplingRule& rule, std::span<const double> y,
                            std::span<const double> z);

std::vector<double> apply_rule(const CouplingRule& rule, std::span<const double> dw,
                               std::span<const double> y, std::span<const double> z);

// E|(Q - I) dW|^2 = 2 tr(I - Q) dt for dW ~ N(0, dt I).
double expected_increment_cost(const Eigen::MatrixXd& q, double dt);

// (1/n) sum_i |(Q - I) dW_i|^2 with its standard error.
McEstimate mc_increment_cost(const Eigen::MatrixXd& q, double dt, std::size_t n,
                             std::uint64_t seed);

// sync_edit with the target driven by Q_k dWbar_k.
EditResult coupled_edit(std::span<const double> y0, PromptLabel c_src, PromptLabel c_tar,
                        const CouplingRule& rule, const ScoreOracle& oracle,
                        const NoiseSchedule& sched, const EditConfig& cfg);

struct GreedyConfig {
  PromptLabel c_src;
  PromptLabel c_tar;
  EditConfig edit;          // grid, start step, guidance, base seed
  std::size_t step = 0;     // reverse step of the one-step comparison
  std::size_t seeds = 1000;
  bool end_to_end = true;
  double alpha = 0.01;      // significance of the paired comparisons
  std::size_t jobs = 1;
};

struct RuleReport {
  std::string name;
  McEstimate one_step;        // E|Zbar_{k+1} - Ybar_{k+1}|^2 given the state pair
  McEstimate gap;             // one_step minus the synchronous value, paired
  double t_stat = 0.0;
  double p_value = 1.0;       // one-sided, H1: gap > 0
  double predicted_gap = 0.0; // g^2 E tr-cost, averaged over the state pairs
  McEstimate end_to_end;      // E|Zbar_N - Ybar_N|^2
};

struct GreedyReport {
  std::vector<RuleReport> rules;  // rules[0] is Synchronous
  std::size_t argmin = 0;
  bool synchronous_minimal = false;  // argmin is Synchronous
  bool all_significant = false;      // every non-synchronous gap has p < alpha
  double dt = 0.0;
  double g = 0.0;
};

// At each seed, one state pair (Ybar_k, Zbar_k) is drawn from the exact source
// and target marginals at reverse node k and shared by every rule, so the drift
// contribution is common and cancels in the paired differences. Each seed uses
// an antithetic pair +-dWbar.
GreedyReport greedy_optimality_experiment(const ScoreOracle& oracle, const NoiseSchedule& sched,
                                          const GreedyConfig& cfg,
                                          const std::vector<CouplingRule>& rules);

}  // namespace syncsde
