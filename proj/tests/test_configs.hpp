#pragma once

// Reduced configurations that keep the CLI tests fast.

#include <string_view>

namespace test_configs {

inline constexpr std::string_view kSmallReversal = R"(
schedule = { kind = "constant_ou", alpha = 1.0, g = 1.0 }

[labels.data]
mean = [0.0]
std = 1.0

[reversal]
steps = [16, 32, 64]
seeds = 30
)";

inline constexpr std::string_view kSmallEdit = R"(
schedule = "rectified"

[labels.src]
mean = [-2.0]
std = 0.5

[labels.tar]
mean = [2.0]
std = 0.5

[grid]
steps = 32

[edit]
source = "src"
target = "tar"
start_step = 1
method = "compare"
trajectories = 2

[seeds]
replicates = 60
)";

inline constexpr std::string_view kSmallCoupling = R"(
schedule = { kind = "constant_ou", alpha = 1.0, g = 1.0 }

[labels.src]
mean = [-1.0, 0.0]
std = 0.5

[labels.tar]
mean = [1.0, 0.5]
std = 0.5

[grid]
steps = 16

[edit]
source = "src"
target = "tar"
start_step = 0

[coupling]
rules = ["reflection", { kind = "random", count = 2, seed = 3 }]
step = 8
seeds = 200
trace_matrices = 4
trace_dims = [1, 3]
trace_draws = 20000
)";

inline constexpr std::string_view kSmallMarginal = R"(
schedule = "rectified"

[labels.target]
mean = [1.0]
std = 0.5

[marginal]
steps = 64
start_step = 1
samples = 2000
forms = ["score", "velocity"]
)";

}  // namespace test_configs
