#pragma once

// The four harness subcommands. Each one resolves and validates its config,
// computes, and only then writes summary.json plus CSV/SVG files to the output
// directory. Outputs carry no timestamps or host details, so identical config
// and seed give identical bytes regardless of --jobs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

namespace syncsde {

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

struct CommandOptions {
  std::optional<std::string> config_path;  // built-in preset when absent
  std::optional<std::uint64_t> seed;       // overrides [seeds].base
  std::size_t jobs = 1;
  std::string out_dir = "out";
};

// Known names: reversal-check, edit, coupling-bench, marginal-check.
// Progress and check results go to `log`, errors to `err`.
int run_command(std::string_view name, const CommandOptions& opts, std::ostream& log,
                std::ostream& err);

}  // namespace syncsde
