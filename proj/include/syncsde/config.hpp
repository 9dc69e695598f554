#pragma once

// Run configuration for the command-line harness, read from a TOML file.
//
//   schedule = "rectified"                        # or an inline table:
//   schedule = { kind = "constant_ou", alpha = 1.0, g = 1.0 }
//   schedule = { kind = "tabulated", t = [...], alpha = [...], g = [...] }
//
//   [labels.cat]  mean = [-2.0], std = 0.5
//   [labels.mix]  components = [{ weight = 0.5, mean = [1.0], std = 0.3 }, ...]
//
// plus the optional sections [grid], [edit], [seeds], [reversal], [marginal]
// and [coupling]. Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "syncsde/coupling.hpp"
#include "syncsde/paths.hpp"
#include "syncsde/schedule.hpp"
#include "syncsde/scores.hpp"

namespace syncsde {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScheduleSpec {
  std::string kind = "constant_ou";  // constant_ou | rectified | tabulated
  double alpha = 1.0;
  double g = 1.0;
  std::optional<double> t_max;       // rectified only; default 1 - 1/(2N)
  std::vector<double> table_t, table_alpha, table_g;

  // Rectified flow gets t_max = 1 - 1/(2 * max_steps) unless set explicitly.
  NoiseSchedule build(std::size_t max_steps) const;
};

struct GridSpec {
  std::size_t steps = 28;
  std::vector<double> nodes;  // explicit nodes override `steps`
  TimeGrid build() const;
};

enum class EditMethod { Sync, Resampling, Independent, Compare };

struct EditSpec {
  std::string source;
  std::string target;
  std::size_t start_step = 4;
  double w_src = 1.0;
  double w_tar = 1.0;
  EditMethod method = EditMethod::Sync;
  std::vector<double> y0;              // empty: draw y0 from the source data law
  std::optional<double> retrace_tolerance;  // default: max_dt of the grid
  std::size_t trajectories = 1;        // replicates whose trajectories are written
};

struct SeedSpec {
  std::uint64_t base = 0;
  std::size_t replicates = 1000;
};

struct ReversalSpec {
  std::string label;
  std::vector<std::size_t> steps{16, 32, 64, 128};
  std::size_t seeds = 100;
  double w_src = 1.0;
  std::size_t first_step = 0;
  double min_slope = 0.8;
};

enum class SamplerForm { Score, Velocity };

struct MarginalSpec {
  std::string label;
  std::size_t steps = 256;
  std::size_t start_step = 0;
  std::size_t samples = 10000;
  std::vector<SamplerForm> forms{SamplerForm::Score};
  double ks_alpha = 0.01;
};

struct CouplingSpec {
  std::vector<CouplingRule> rules;  // first entry is always Synchronous
  std::size_t step = 0;             // reverse step of the one-step comparison
  std::size_t seeds = 1000;
  bool end_to_end = true;
  double alpha = 0.01;
  std::size_t trace_matrices = 50;
  std::vector<std::size_t> trace_dims{1, 2, 4, 8};
  std::size_t trace_draws = 1000000;
  double trace_dt = 1.0 / 64.0;
};

struct RunConfig {
  ScheduleSpec schedule;
  std::vector<LabelDistribution> labels;
  GridSpec grid;
  EditSpec edit;
  SeedSpec seeds;
  ReversalSpec reversal;
  MarginalSpec marginal;
  CouplingSpec coupling;
};

// Throws ConfigError with a message naming the offending key.
RunConfig parse_config(std::string_view text, std::string_view source_name = "<config>");
RunConfig load_config(const std::string& path);

// Built-in preset for a subcommand, used when no --config is given.
std::string_view default_config_text(std::string_view command);

std::string_view method_name(EditMethod m);
std::string_view form_name(SamplerForm f);

}  // namespace syncsde
