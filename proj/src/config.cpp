#include "syncsde/config.hpp"

#include <fmt/format.h>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <toml.hpp>

namespace syncsde {

namespace {

// Typed access to one TOML table, with the dotted path kept for messages.
class Reader {
 public:
  Reader(const toml::table& tbl, std::string path) : tbl_(tbl), path_(std::move(path)) {}

  void allow(std::initializer_list<std::string_view> keys) const {
    for (auto&& [k, v] : tbl_) {
      bool ok = false;
      for (auto key : keys) ok = ok || k.str() == key;
      if (!ok) fail(k.str(), "unknown key");
    }
  }

  bool has(std::string_view key) const { return tbl_.contains(key); }

  [[noreturn]] void fail(std::string_view key, std::string_view what) const {
    throw ConfigError(fmt::format("{}: {}", qualified(key), what));
  }

  std::string qualified(std::string_view key) const {
    return path_.empty() ? std::string(key) : fmt::format("{}.{}", path_, key);
  }

  double real(std::string_view key, double fallback) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return fallback;
    return as_real(*n, key);
  }

  double as_real(const toml::node& n, std::string_view key) const {
    if (auto v = n.value_exact<double>()) return check_finite(*v, key);
    if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
    fail(key, "expected a number");
  }

  std::size_t count(std::string_view key, std::size_t fallback) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return fallback;
    return as_count(*n, key);
  }

  std::size_t as_count(const toml::node& n, std::string_view key) const {
    auto v = n.value_exact<std::int64_t>();
    if (!v) fail(key, "expected an integer");
    if (*v < 0) fail(key, "must be non-negative");
    return static_cast<std::size_t>(*v);
  }

  std::uint64_t seed(std::string_view key, std::uint64_t fallback) const {
    return static_cast<std::uint64_t>(count(key, static_cast<std::size_t>(fallback)));
  }

  bool boolean(std::string_view key, bool fallback) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return fallback;
    auto v = n->value_exact<bool>();
    if (!v) fail(key, "expected true or false");
    return *v;
  }

  std::string string(std::string_view key, std::string fallback) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return fallback;
    auto v = n->value_exact<std::string>();
    if (!v) fail(key, "expected a string");
    return *v;
  }

  const toml::array* array(std::string_view key) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return nullptr;
    if (!n->is_array()) fail(key, "expected an array");
    return n->as_array();
  }

  std::vector<double> reals(std::string_view key) const {
    std::vector<double> out;
    if (const auto* arr = array(key)) {
      for (const auto& e : *arr) out.push_back(as_real(e, key));
    }
    return out;
  }

  std::vector<std::size_t> counts(std::string_view key, std::vector<std::size_t> fallback) const {
    const auto* arr = array(key);
    if (!arr) return fallback;
    std::vector<std::size_t> out;
    for (const auto& e : *arr) out.push_back(as_count(e, key));
    return out;
  }

  std::optional<Reader> sub(std::string_view key) const {
    const toml::node* n = tbl_.get(key);
    if (!n) return std::nullopt;
    if (!n->is_table()) fail(key, "expected a table");
    return Reader(*n->as_table(), qualified(key));
  }

  const toml::table& table() const { return tbl_; }

 private:
  double check_finite(double v, std::string_view key) const {
    if (!std::isfinite(v)) fail(key, "must be finite");
    return v;
  }

  const toml::table& tbl_;
  std::string path_;
};

void require_positive(const Reader& r, std::string_view key, double v) {
  if (!(v > 0.0)) r.fail(key, "must be positive");
}

ScheduleSpec parse_schedule(const Reader& root) {
  ScheduleSpec spec;
  const toml::node* n = root.table().get("schedule");
  if (!n) return spec;
  if (auto name = n->value_exact<std::string>()) {
    if (*name == "rectified" || *name == "rectified_flow") {
      spec.kind = "rectified";
    } else if (*name == "constant_ou") {
      spec.kind = "constant_ou";
    } else {
      root.fail("schedule", fmt::format("unknown schedule '{}'", *name));
    }
    return spec;
  }
  if (!n->is_table()) root.fail("schedule", "expected a string or a table");
  const Reader r(*n->as_table(), "schedule");
  spec.kind = r.string("kind", "");
  if (spec.kind == "rectified_flow") spec.kind = "rectified";
  if (spec.kind == "constant_ou") {
    r.allow({"kind", "alpha", "g"});
    spec.alpha = r.real("alpha", 1.0);
    spec.g = r.real("g", 1.0);
    if (spec.alpha < 0.0) r.fail("alpha", "must be >= 0");
    if (spec.g < 0.0) r.fail("g", "must be >= 0");
  } else if (spec.kind == "rectified") {
    r.allow({"kind", "t_max"});
    if (r.has("t_max")) {
      spec.t_max = r.real("t_max", 0.0);
      if (!(*spec.t_max > 0.0 && *spec.t_max < 1.0)) r.fail("t_max", "must lie in (0, 1)");
    }
  } else if (spec.kind == "tabulated") {
    r.allow({"kind", "t", "alpha", "g"});
    spec.table_t = r.reals("t");
    spec.table_alpha = r.reals("alpha");
    spec.table_g = r.reals("g");
    try {
      NoiseSchedule::tabulated(spec.table_t, spec.table_alpha, spec.table_g);
    } catch (const std::invalid_argument& e) {
      r.fail("t", e.what());
    }
  } else {
    r.fail("kind", "expected constant_ou, rectified or tabulated");
  }
  return spec;
}

std::vector<double> parse_mean(const Reader& r) {
  std::vector<double> mean = r.reals("mean");
  if (mean.empty()) r.fail("mean", "must be a non-empty array");
  return mean;
}

std::vector<LabelDistribution> parse_labels(const Reader& root) {
  auto labels = root.sub("labels");
  if (!labels) throw ConfigError("labels: at least one label table is required");
  std::vector<LabelDistribution> out;
  for (auto&& [k, v] : labels->table()) {
    const std::string name(k.str());
    if (!v.is_table()) labels->fail(name, "expected a table");
    const Reader r(*v.as_table(), labels->qualified(name));
    LabelDistribution dist{name, {}};
    if (r.has("components")) {
      r.allow({"components"});
      const auto* arr = r.array("components");
      if (arr->empty()) r.fail("components", "must not be empty");
      std::size_t i = 0;
      for (const auto& e : *arr) {
        if (!e.is_table()) r.fail("components", "entries must be tables");
        const Reader c(*e.as_table(), fmt::format("{}.components[{}]", labels->qualified(name), i++));
        c.allow({"weight", "mean", "std"});
        GaussianComponent comp{c.real("weight", 1.0), parse_mean(c), c.real("std", 1.0)};
        require_positive(c, "weight", comp.weight);
        require_positive(c, "std", comp.std);
        dist.components.push_back(std::move(comp));
      }
    } else {
      r.allow({"mean", "std"});
      GaussianComponent comp{1.0, parse_mean(r), r.real("std", 1.0)};
      require_positive(r, "std", comp.std);
      dist.components.push_back(std::move(comp));
    }
    out.push_back(std::move(dist));
  }
  if (out.empty()) throw ConfigError("labels: at least one label table is required");
  try {
    ScoreOracle probe(out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("labels: {}", e.what()));
  }
  return out;
}

std::vector<CouplingRule> parse_rules(const Reader& r) {
  std::vector<CouplingRule> rules;
  const auto* arr = r.array("rules");
  if (!arr) return {Synchronous{}, Reflection{}};
  for (const auto& e : *arr) {
    if (auto name = e.value_exact<std::string>()) {
      if (*name == "synchronous") {
        // Always run, as the reference; see below.
      } else if (*name == "reflection") {
        rules.emplace_back(Reflection{});
      } else {
        r.fail("rules", fmt::format("unknown rule '{}'", *name));
      }
      continue;
    }
    if (!e.is_table()) r.fail("rules", "entries must be strings or tables");
    const Reader t(*e.as_table(), r.qualified("rules"));
    const std::string kind = t.string("kind", "");
    if (kind == "random") {
      t.allow({"kind", "seed", "count"});
      const std::uint64_t seed = t.seed("seed", 0);
      const std::size_t n = t.count("count", 1);
      for (std::size_t i = 0; i < n; ++i) rules.emplace_back(RandomOrthonormal{seed + i});
    } else if (kind == "fixed") {
      t.allow({"kind", "q"});
      const auto* rows = t.array("q");
      if (!rows || rows->empty()) t.fail("q", "expected a non-empty array of rows");
      const auto n = static_cast<Eigen::Index>(rows->size());
      Eigen::MatrixXd q(n, n);
      Eigen::Index i = 0;
      for (const auto& row : *rows) {
        const auto* vals = row.as_array();
        if (!vals || static_cast<Eigen::Index>(vals->size()) != n) {
          t.fail("q", "must be a square matrix");
        }
        Eigen::Index j = 0;
        for (const auto& v : *vals) q(i, j++) = t.as_real(v, "q");
        ++i;
      }
      if (!is_orthonormal(q)) t.fail("q", "is not orthonormal (|Q^T Q - I| > 1e-10)");
      rules.emplace_back(FixedOrthonormal{std::move(q)});
    } else {
      t.fail("kind", "expected random or fixed");
    }
  }
  rules.insert(rules.begin(), Synchronous{});
  return rules;
}

std::vector<SamplerForm> parse_forms(const Reader& r) {
  const auto* arr = r.array("forms");
  if (!arr) return {SamplerForm::Score};
  std::vector<SamplerForm> out;
  for (const auto& e : *arr) {
    auto v = e.value_exact<std::string>();
    if (v && *v == "score") {
      out.push_back(SamplerForm::Score);
    } else if (v && *v == "velocity") {
      out.push_back(SamplerForm::Velocity);
    } else {
      r.fail("forms", "entries must be \"score\" or \"velocity\"");
    }
  }
  if (out.empty()) r.fail("forms", "must not be empty");
  return out;
}

RunConfig parse_table(const toml::table& tbl) {
  const Reader root(tbl, "");
  root.allow({"schedule", "labels", "grid", "edit", "seeds", "reversal", "marginal", "coupling"});

  RunConfig cfg;
  cfg.schedule = parse_schedule(root);
  cfg.labels = parse_labels(root);

  if (auto r = root.sub("grid")) {
    r->allow({"steps", "nodes"});
    cfg.grid.steps = r->count("steps", cfg.grid.steps);
    cfg.grid.nodes = r->reals("nodes");
    if (cfg.grid.nodes.empty() && cfg.grid.steps < 2) r->fail("steps", "must be at least 2");
    if (!cfg.grid.nodes.empty()) {
      try {
        cfg.grid.build();
      } catch (const std::invalid_argument& e) {
        r->fail("nodes", e.what());
      }
    }
  }

  if (auto r = root.sub("edit")) {
    r->allow({"source", "target", "start_step", "w_src", "w_tar", "method", "y0",
              "retrace_tolerance", "trajectories"});
    auto& e = cfg.edit;
    e.source = r->string("source", "");
    e.target = r->string("target", "");
    e.start_step = r->count("start_step", e.start_step);
    e.w_src = r->real("w_src", e.w_src);
    e.w_tar = r->real("w_tar", e.w_tar);
    const std::string method = r->string("method", "sync");
    if (method == "sync") {
      e.method = EditMethod::Sync;
    } else if (method == "resampling") {
      e.method = EditMethod::Resampling;
    } else if (method == "independent") {
      e.method = EditMethod::Independent;
    } else if (method == "compare") {
      e.method = EditMethod::Compare;
    } else {
      r->fail("method", "expected sync, resampling, independent or compare");
    }
    e.y0 = r->reals("y0");
    if (r->has("retrace_tolerance")) {
      e.retrace_tolerance = r->real("retrace_tolerance", 0.0);
      if (*e.retrace_tolerance < 0.0) r->fail("retrace_tolerance", "must be >= 0");
    }
    e.trajectories = r->count("trajectories", e.trajectories);
  }

  if (auto r = root.sub("seeds")) {
    r->allow({"base", "replicates"});
    cfg.seeds.base = r->seed("base", cfg.seeds.base);
    cfg.seeds.replicates = r->count("replicates", cfg.seeds.replicates);
    if (cfg.seeds.replicates < 1) r->fail("replicates", "must be at least 1");
  }

  if (auto r = root.sub("reversal")) {
    r->allow({"label", "steps", "seeds", "w_src", "first_step", "min_slope"});
    auto& v = cfg.reversal;
    v.label = r->string("label", "");
    v.steps = r->counts("steps", v.steps);
    v.seeds = r->count("seeds", v.seeds);
    v.w_src = r->real("w_src", v.w_src);
    v.first_step = r->count("first_step", v.first_step);
    v.min_slope = r->real("min_slope", v.min_slope);
  }

  if (auto r = root.sub("marginal")) {
    r->allow({"label", "steps", "start_step", "samples", "forms", "ks_alpha"});
    auto& m = cfg.marginal;
    m.label = r->string("label", "");
    m.steps = r->count("steps", m.steps);
    m.start_step = r->count("start_step", m.start_step);
    m.samples = r->count("samples", m.samples);
    m.forms = parse_forms(*r);
    m.ks_alpha = r->real("ks_alpha", m.ks_alpha);
  }

  if (auto r = root.sub("coupling")) {
    r->allow({"rules", "step", "seeds", "end_to_end", "alpha", "trace_matrices", "trace_dims",
              "trace_draws", "trace_dt"});
    auto& c = cfg.coupling;
    c.rules = parse_rules(*r);
    c.step = r->count("step", c.step);
    c.seeds = r->count("seeds", c.seeds);
    c.end_to_end = r->boolean("end_to_end", c.end_to_end);
    c.alpha = r->real("alpha", c.alpha);
    c.trace_matrices = r->count("trace_matrices", c.trace_matrices);
    c.trace_dims = r->counts("trace_dims", c.trace_dims);
    c.trace_draws = r->count("trace_draws", c.trace_draws);
    c.trace_dt = r->real("trace_dt", c.trace_dt);
    require_positive(*r, "trace_dt", c.trace_dt);
    for (std::size_t d : c.trace_dims) {
      if (d == 0) r->fail("trace_dims", "dimensions must be positive");
    }
  } else {
    cfg.coupling.rules = {Synchronous{}, Reflection{}};
  }
  return cfg;
}

constexpr std::string_view kReversalPreset = R"(schedule = { kind = "constant_ou", alpha = 1.0, g = 1.0 }

[labels.data]
mean = [0.0]
std = 1.0

[reversal]
label = "data"
steps = [16, 32, 64, 128]
seeds = 100
min_slope = 0.8

[seeds]
base = 0
)";

constexpr std::string_view kEditPreset = R"(schedule = "rectified"

[labels.src]
mean = [-2.0]
std = 0.5

[labels.tar]
mean = [2.0]
std = 0.5

[grid]
steps = 128

[edit]
source = "src"
target = "tar"
start_step = 1
method = "compare"

[seeds]
base = 0
replicates = 1000
)";

constexpr std::string_view kCouplingPreset = R"(schedule = { kind = "constant_ou", alpha = 1.0, g = 1.0 }

[labels.src]
mean = [-1.0, 0.0]
std = 0.5

[labels.tar]
mean = [1.0, 0.5]
std = 0.5

[grid]
steps = 64

[edit]
source = "src"
target = "tar"
start_step = 0

[coupling]
rules = ["synchronous", "reflection", { kind = "random", count = 10, seed = 1 }]
step = 32
seeds = 1000
trace_matrices = 50
trace_dims = [1, 2, 4, 8]
trace_draws = 1000000

[seeds]
base = 0
)";

constexpr std::string_view kMarginalPreset = R"(schedule = "rectified"

[labels.target]
mean = [1.0]
std = 0.5

[marginal]
label = "target"
steps = 256
start_step = 1
samples = 10000
forms = ["score", "velocity"]

[seeds]
base = 0
)";

}  // namespace

NoiseSchedule ScheduleSpec::build(std::size_t max_steps) const {
  if (kind == "rectified") {
    return t_max ? NoiseSchedule::rectified_flow(*t_max)
                 : NoiseSchedule::rectified_flow_for_steps(std::max<std::size_t>(max_steps, 1));
  }
  if (kind == "tabulated") return NoiseSchedule::tabulated(table_t, table_alpha, table_g);
  return NoiseSchedule::constant_ou(alpha, g);
}

TimeGrid GridSpec::build() const {
  return nodes.empty() ? TimeGrid::uniform(steps) : TimeGrid::from_nodes(nodes);
}

RunConfig parse_config(std::string_view text, std::string_view source_name) {
  toml::table tbl;
  try {
    tbl = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}:{}:{}: {}", source_name, e.source().begin.line,
                                  e.source().begin.column, e.description()));
  }
  return parse_table(tbl);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string_view default_config_text(std::string_view command) {
  if (command == "reversal-check") return kReversalPreset;
  if (command == "edit") return kEditPreset;
  if (command == "coupling-bench") return kCouplingPreset;
  if (command == "marginal-check") return kMarginalPreset;
  throw std::invalid_argument(fmt::format("no preset for command '{}'", command));
}

std::string_view method_name(EditMethod m) {
  switch (m) {
    case EditMethod::Sync: return "sync";
    case EditMethod::Resampling: return "resampling";
    case EditMethod::Independent: return "independent";
    case EditMethod::Compare: return "compare";
  }
  return "?";
}

std::string_view form_name(SamplerForm f) {
  return f == SamplerForm::Score ? "score" : "velocity";
}

}  // namespace syncsde
