#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "syncsde/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Coupled reverse-time SDE editing: experiments and checks"};
  app.require_subcommand(1);

  syncsde::CommandOptions opts;
  std::string config;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "TOML run configuration (built-in preset if omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base seed, overrides [seeds].base");
    sub->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  };

  for (const char* name : {"reversal-check", "edit", "coupling-bench", "marginal-check"}) {
    add_common(app.add_subcommand(name));
  }
  app.get_subcommand("reversal-check")->description("retrace error convergence study");
  app.get_subcommand("edit")->description("sync, resampling or independent editing runs");
  app.get_subcommand("coupling-bench")->description("greedy optimality and trace identity");
  app.get_subcommand("marginal-check")->description("endpoint law of the reverse samplers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return syncsde::kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--config") > 0) opts.config_path = config;
  if (sub->count("--seed") > 0) opts.seed = seed;
  return syncsde::run_command(sub->get_name(), opts, std::cout, std::cerr);
}
