#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "crossmoments/io.hpp"
#include "crossmoments/validation.hpp"

namespace cm = crossmoments;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidationFailure = 1, kConfigError = 2, kInconclusive = 3, kDivergent = 4 };

constexpr const char* kFooter = R"(Exit codes: 0 success, 1 validation failure (or too many failed replicates),
2 config error, 3 inconclusive classification, 4 certified divergence.

Output files (written to --out, default output.dir in the config, default "."):
  geman.json            classification of both integrand forms and the dyadic table
  geman_table.csv       columns: k,tau,sigma2,spectral
                          spectral = lambda2 + r''(tau)
  moments.json          resolved config and MomentReport
  moments_trace.csv     columns: lag,integrand   (crossings)
                        columns: radius,integrand (roots, length)
                          integrand samples at the quadrature nodes, sorted
  ensemble.csv          columns: replicate_id,count,delta  (crossings, roots)
                        columns: replicate_id,length,delta (length)
                          one row per replicate and nested grid level
  ensemble.json         resolved config and aggregate statistics

CSV columns are append-only across versions.
Environment: CROSSMOMENTS_THREADS caps the number of worker threads.)";

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<int> resolution;
  std::optional<std::string> out;
  bool json = false;
};

void add_common(CLI::App* sub, Flags& f, bool needs_config) {
  auto* c = sub->add_option("--config", f.config, "Experiment config (JSON)");
  if (needs_config) c->required();
  sub->add_option("--seed", f.seed, "Seed for all random streams (overrides mc.seed and inner_mc.seed)");
  sub->add_option("--out", f.out, "Output directory (overrides output.dir)");
  sub->add_flag("--json", f.json, "Print the machine-readable report on stdout");
}

cm::io::ExperimentConfig load_config(const Flags& f) {
  const fs::path path(f.config);
  cm::io::ExperimentConfig c = cm::io::config_from_json(cm::io::load_json_file(path), path.parent_path());
  if (f.seed) {
    c.seed = *f.seed;
    c.radial.inner.seed = *f.seed;
  }
  if (f.replicates) c.replicates = *f.replicates;
  if (f.resolution) c.resolution = *f.resolution;
  if (f.out) c.out_dir = *f.out;
  return c;
}

fs::path output_dir(const cm::io::ExperimentConfig& c) {
  const fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) cm::fail(cm::ErrorCode::InvalidConfig, "cannot create output directory " + dir.string());
  return dir;
}

void write_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) cm::fail(cm::ErrorCode::InvalidConfig, "cannot write " + file.string());
  out << text;
}

std::string g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string show(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

int exit_for(cm::GemanClass c) {
  switch (c) {
    case cm::GemanClass::Converges: return kOk;
    case cm::GemanClass::Diverges: return kDivergent;
    case cm::GemanClass::Inconclusive: return kInconclusive;
  }
  return kInconclusive;
}

int cmd_geman(const Flags& f) {
  const auto c = load_config(f);
  if (!c.model) cm::fail(cm::ErrorCode::InvalidConfig, "geman needs a 1D 'model'");
  const cm::GemanReport g = cm::geman_classify(*c.model, c.quad.geman);

  json table = json::array();
  std::string csv = "k,tau,sigma2,spectral\n";
  for (std::size_t i = 0; i < g.tau.size(); ++i) {
    const int k = -std::ilogb(g.tau[i]);
    table.push_back({{"k", k}, {"tau", g.tau[i]}, {"sigma2", g.sigma2[i]}, {"spectral", g.spectral[i]}});
    csv += std::to_string(k) + "," + g17(g.tau[i]) + "," + g17(g.sigma2[i]) + "," + g17(g.spectral[i]) + "\n";
  }
  json out = {{"config", cm::io::config_to_json(c)},
              {"class", std::string(cm::to_string(g.cls))},
              {"alpha", cm::io::detail::num(g.alpha)},
              {"alpha_se", cm::io::detail::num(g.alpha_se)},
              {"sigma_form", cm::io::fit_to_json(g.sigma_form)},
              {"spectral_form", cm::io::fit_to_json(g.spectral_form)},
              {"table", table}};
  const fs::path dir = output_dir(c);
  write_file(dir / "geman.json", out.dump(2) + "\n");
  write_file(dir / "geman_table.csv", csv);

  if (f.json) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "model " << c.model->name() << "\n"
              << "class " << cm::to_string(g.cls) << "\n";
    auto form = [](const char* name, const cm::GemanFit& fit) {
      std::cout << name << ": " << cm::to_string(fit.cls);
      if (fit.identically_zero)
        std::cout << " (identically zero)";
      else
        std::cout << " alpha " << show(fit.alpha) << " +- " << show(fit.alpha_se);
      if (std::isfinite(fit.loglog_slope)) std::cout << " loglog slope " << show(fit.loglog_slope);
      std::cout << "\n";
    };
    form("sigma^2(tau)/tau", g.sigma_form);
    form("(lambda2 + r''(tau))/tau", g.spectral_form);
    std::cout << csv;
  }
  return exit_for(g.cls);
}

int cmd_moments(const Flags& f) {
  const auto c = load_config(f);
  cm::MomentReport r;
  const char* trace_col = "radius";
  switch (c.problem) {
    case cm::io::Problem::Crossings:
      r = cm::second_factorial_moment_1d(*c.model, c.u[0], c.T, c.quad);
      trace_col = "lag";
      break;
    case cm::io::Problem::Roots: r = cm::second_moment_2d_zero(*c.field, c.u, c.rect, c.radial); break;
    case cm::io::Problem::Length:
      r = cm::length_second_moment_2d_to_1d(c.field->coords.front(), c.u[0], c.rect, c.radial);
      break;
  }
  auto trace = r.trace;
  std::sort(trace.begin(), trace.end());
  std::string csv = std::string(trace_col) + ",integrand\n";
  for (const auto& [x, v] : trace) csv += g17(x) + "," + g17(v) + "\n";

  json out = {{"config", cm::io::config_to_json(c)}, {"report", cm::io::report_to_json(r)}};
  const fs::path dir = output_dir(c);
  write_file(dir / "moments.json", out.dump(2) + "\n");
  write_file(dir / "moments_trace.csv", csv);

  if (f.json) {
    std::cout << out.dump(2) << "\n";
  } else {
    auto value = [](const cm::MomentValue& m) { return m.infinite ? std::string("+inf") : show(m.value); };
    std::cout << "problem " << cm::io::to_string(c.problem) << "\n"
              << "mean " << show(r.mean) << "\n"
              << "second_factorial " << value(r.second_factorial) << "\n"
              << "second_moment " << value(r.second_moment) << "\n"
              << "quad_error " << show(r.quad_error) << "\n"
              << "inner_mc_se " << show(r.inner_mc_se) << "\n"
              << "geman " << cm::to_string(r.geman.cls) << " alpha " << show(r.geman.alpha) << " +- "
              << show(r.geman.alpha_se) << "\n";
  }
  if (r.second_factorial.infinite || r.second_moment.infinite) return kDivergent;
  return exit_for(r.geman.cls);
}

int cmd_simulate(const Flags& f) {
  const auto c = load_config(f);
  cm::io::validate_mc(c);
  cm::EnsembleConfig e;
  e.kind = c.problem == cm::io::Problem::Crossings ? cm::EnsembleKind::Crossings1D
           : c.problem == cm::io::Problem::Roots   ? cm::EnsembleKind::Roots2D
                                                   : cm::EnsembleKind::Length2D;
  e.model = c.model;
  e.field = c.field;
  e.u = c.u;
  e.T = c.T;
  e.rect = c.rect;
  e.resolution = c.resolution;
  e.replicates = c.replicates;
  e.seed = c.seed;
  e.levels = c.levels;
  e.embedding = c.embedding;
  const cm::SimulationEnsemble ens = cm::run_ensemble(e);

  std::ostringstream csv;
  cm::write_ensemble_csv(csv, ens);
  json out = {{"config", cm::io::config_to_json(c)}, {"ensemble", cm::io::ensemble_to_json(ens)}};
  const fs::path dir = output_dir(c);
  write_file(dir / "ensemble.csv", csv.str());
  write_file(dir / "ensemble.json", out.dump(2) + "\n");

  if (f.json) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "statistic " << cm::to_string(ens.kind) << "\n"
              << "method " << ens.method << " padding " << ens.padding << "\n";
    for (const auto& l : ens.levels)
      std::cout << "intervals " << l.intervals << " mean " << show(l.mean) << " variance " << show(l.variance)
                << " se " << show(l.se) << "\n";
    std::cout << "richardson_mean " << show(ens.richardson_mean) << " bias " << show(ens.richardson_bias) << "\n"
              << "failures " << ens.failures << "\n";
  }
  return kOk;
}

int cmd_validate(const std::string& filter, bool full, double tolerance_scale, std::uint64_t seed, bool as_json) {
  if (!filter.empty()) {
    bool known = false;
    for (const auto& c : cm::validation::all_checks())
      known = known || filter == c.name || filter == std::to_string(c.criterion);
    if (!known) cm::fail(cm::ErrorCode::InvalidConfig, "unknown check '" + filter + "' for --filter");
  }
  cm::validation::ValidationOptions opt;
  opt.reduced = !full;
  opt.tolerance_scale = tolerance_scale;
  opt.seed = seed;
  json results = json::array();
  bool all = true;
  const auto res = cm::validation::run_checks(opt, filter, [&](const cm::validation::CheckResult& r) {
    if (!as_json)
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.criterion << " " << r.name << ": " << r.detail << std::endl;
  });
  for (const auto& r : res) {
    all = all && r.passed;
    results.push_back({{"criterion", r.criterion}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  if (as_json)
    std::cout << json{{"passed", all}, {"checks", results}}.dump(2) << "\n";
  else
    std::cout << (all ? "all checks passed" : "some checks failed") << "\n";
  return all ? kOk : kValidationFailure;
}

int exit_for(const cm::Error& e) {
  switch (e.code()) {
    case cm::ErrorCode::InvalidConfig:
    case cm::ErrorCode::InvalidModel:
    case cm::ErrorCode::DegenerateLag:
    case cm::ErrorCode::EmbeddingNotPSD: return kConfigError;
    case cm::ErrorCode::InconclusiveTail: return kInconclusive;
    default: return kValidationFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moments of level-set measures of smooth stationary Gaussian processes and fields", "crossmoments"};
  app.require_subcommand(1);
  app.footer(kFooter);

  Flags f;
  auto* geman = app.add_subcommand("geman", "Classify the small-lag integrability condition of a 1D model");
  add_common(geman, f, true);

  auto* moments = app.add_subcommand("moments", "First and second moments by Kac-Rice quadrature");
  add_common(moments, f, true);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo ensemble of counts or lengths");
  add_common(simulate, f, true);
  simulate->add_option("--replicates", f.replicates, "Number of replicates (overrides mc.replicates)");
  simulate->add_option("--resolution", f.resolution, "Grid intervals at the finest level (overrides mc.resolution)");

  std::string filter;
  bool full = false;
  double tolerance_scale = 1.0;
  std::uint64_t validate_seed = cm::validation::ValidationOptions{}.seed;
  auto* validate = app.add_subcommand("validate", "Run the quadrature versus Monte Carlo cross-check matrix");
  validate->add_option("--filter", filter, "Run only the check with this name or criterion number");
  validate->add_option("--seed", validate_seed, "Base seed of the checks");
  validate->add_flag("--full", full, "Full-size 2D ensembles instead of the desk-scale ones");
  validate->add_flag("--json", f.json, "Print results as JSON");
  validate->add_option("--tolerance-scale", tolerance_scale)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*geman) return cmd_geman(f);
    if (*moments) return cmd_moments(f);
    if (*simulate) return cmd_simulate(f);
    return cmd_validate(filter, full, tolerance_scale, validate_seed, f.json);
  } catch (const cm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
}
