#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>

#include "syncsde/config.hpp"

using namespace syncsde;

namespace {

const char* kLabels = R"(
[labels.a]
mean = [0.0, 1.0]
std = 0.5
)";

std::string with_labels(const std::string& body) { return body + kLabels; }

// Message of the ConfigError raised by `text`, or "" if it parses.
std::string error_of(const std::string& text) {
  try {
    parse_config(text, "test.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, PresetsParse) {
  for (const char* cmd : {"reversal-check", "edit", "coupling-bench", "marginal-check"}) {
    EXPECT_NO_THROW(parse_config(default_config_text(cmd), cmd)) << cmd;
  }
}

// configs/ ships the built-in presets as editable files.
TEST(Config, ShippedConfigsMatchPresets) {
  for (const char* cmd : {"reversal-check", "edit", "coupling-bench", "marginal-check"}) {
    std::string file(cmd);
    file = file.substr(0, file.find('-'));
    std::ifstream in(std::string(SYNCSDE_CONFIG_DIR) + "/" + file + ".toml");
    ASSERT_TRUE(in) << file;
    std::ostringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(ss.str(), default_config_text(cmd)) << file;
  }
}

TEST(Config, CouplingPresetExpandsRules) {
  const auto cfg = parse_config(default_config_text("coupling-bench"));
  // An explicit "synchronous" entry is folded into the leading one.
  ASSERT_EQ(cfg.coupling.rules.size(), 12u);
  EXPECT_TRUE(std::holds_alternative<Synchronous>(cfg.coupling.rules[0]));
  EXPECT_TRUE(std::holds_alternative<Reflection>(cfg.coupling.rules[1]));
  EXPECT_EQ(rule_name(cfg.coupling.rules[2]), "random_1");
  EXPECT_EQ(rule_name(cfg.coupling.rules[11]), "random_10");
  EXPECT_EQ(cfg.coupling.step, 32u);
  EXPECT_EQ(cfg.grid.steps, 64u);
}

TEST(Config, ScheduleForms) {
  auto cfg = parse_config(with_labels(R"(schedule = "rectified")"));
  EXPECT_EQ(cfg.schedule.kind, "rectified");
  EXPECT_NEAR(cfg.schedule.build(28).t_max(), 1.0 - 1.0 / 56.0, 1e-15);

  cfg = parse_config(with_labels(R"(schedule = { kind = "constant_ou", alpha = 0.5, g = 2 })"));
  EXPECT_EQ(cfg.schedule.alpha, 0.5);
  EXPECT_EQ(cfg.schedule.g, 2.0);

  cfg = parse_config(with_labels(
      R"(schedule = { kind = "tabulated", t = [0.0, 1.0], alpha = [1.0, 1.0], g = [1.0, 2.0] })"));
  EXPECT_FALSE(cfg.schedule.build(10).has_closed_form());
}

TEST(Config, MixtureLabels) {
  const auto cfg = parse_config(R"(
[labels.m]
components = [{ weight = 0.25, mean = [1.0], std = 0.3 }, { weight = 0.75, mean = [-1.0], std = 0.6 }]
)");
  ASSERT_EQ(cfg.labels.size(), 1u);
  EXPECT_EQ(cfg.labels[0].components.size(), 2u);
  EXPECT_EQ(cfg.labels[0].components[1].std, 0.6);
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_NE(error_of(with_labels("bogus = 1\n")).find("bogus"), std::string::npos);
  EXPECT_NE(error_of(with_labels("[grid]\nstpes = 4\n")).find("grid.stpes"), std::string::npos);
}

TEST(Config, RejectsBadValues) {
  EXPECT_NE(error_of(with_labels("[grid]\nsteps = \"many\"\n")), "");
  EXPECT_NE(error_of(with_labels("[grid]\nsteps = -3\n")), "");
  EXPECT_NE(error_of(with_labels("[grid]\nsteps = 1\n")), "");
  EXPECT_NE(error_of(with_labels("[grid]\nnodes = [0.0, 0.5, 0.4, 1.0]\n")), "");
  EXPECT_NE(error_of(with_labels(R"(schedule = "sideways")")), "");
  EXPECT_NE(error_of(with_labels(R"(schedule = { kind = "constant_ou", alpha = -1.0 })")), "");
  EXPECT_NE(error_of(with_labels("[edit]\nmethod = \"magic\"\n")), "");
  EXPECT_NE(error_of(with_labels("[seeds]\nreplicates = 0\n")), "");
  EXPECT_NE(error_of(with_labels("[marginal]\nforms = [\"ode\"]\n")), "");
  EXPECT_NE(error_of("[labels.a]\nmean = [0.0]\nstd = -1.0\n"), "");
  EXPECT_NE(error_of("[labels.a]\ncomponents = [{ weight = 0.5, mean = [0.0], std = 1.0 }]\n"), "");
  EXPECT_NE(error_of("[grid\n"), "");
}

TEST(Config, RequiresLabels) { EXPECT_NE(error_of("[grid]\nsteps = 8\n"), ""); }

TEST(Config, RejectsNonOrthonormalFixedQ) {
  const auto msg = error_of(with_labels(R"(
[coupling]
rules = [{ kind = "fixed", q = [[1.0, 0.1], [0.0, 1.0]] }]
)"));
  EXPECT_NE(msg.find("orthonormal"), std::string::npos) << msg;
  EXPECT_EQ(error_of(with_labels(R"(
[coupling]
rules = [{ kind = "fixed", q = [[0.0, 1.0], [1.0, 0.0]] }]
)")),
            "");
}

TEST(Config, RejectsUnknownRule) {
  EXPECT_NE(error_of(with_labels("[coupling]\nrules = [\"mirror\"]\n")), "");
}

}  // namespace
