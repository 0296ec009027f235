#pragma once

// JSON model specs, experiment configs and report serialization.
// Requires nlohmann/json on the include path.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossmoments/covmodels.hpp"
#include "crossmoments/error.hpp"
#include "crossmoments/fields.hpp"
#include "crossmoments/kacrice.hpp"
#include "crossmoments/simulate.hpp"
#include "crossmoments/spectral.hpp"

namespace crossmoments::io {

using nlohmann::json;

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void check_object(const json& j, const std::string& path) {
  if (!j.is_object())
    fail(ErrorCode::InvalidConfig, "'" + (path.empty() ? std::string("<root>") : path) + "' must be a JSON object");
}

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  check_object(j, path);
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) fail(ErrorCode::InvalidConfig, "unknown key '" + join(path, key) + "'");
}

inline double number(const json& j, const std::string& key, const std::string& path, std::optional<double> def) {
  if (!j.contains(key)) {
    if (def) return *def;
    fail(ErrorCode::InvalidConfig, "missing key '" + join(path, key) + "'");
  }
  const json& v = j.at(key);
  if (!v.is_number()) fail(ErrorCode::InvalidConfig, "key '" + join(path, key) + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(ErrorCode::InvalidConfig, "key '" + join(path, key) + "' must be finite");
  return x;
}

inline std::uint64_t unsigned_int(const json& j, const std::string& key, const std::string& path,
                                  std::uint64_t def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    fail(ErrorCode::InvalidConfig, "key '" + join(path, key) + "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline bool boolean(const json& j, const std::string& key, const std::string& path, bool def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_boolean()) fail(ErrorCode::InvalidConfig, "key '" + join(path, key) + "' must be true or false");
  return j.at(key).get<bool>();
}

inline std::string string(const json& j, const std::string& key, const std::string& path, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) fail(ErrorCode::InvalidConfig, "key '" + join(path, key) + "' must be a string");
  return j.at(key).get<std::string>();
}

// NaN and infinities have no JSON literal; they are written as null.
inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// {"kind": ..., "params": {...}}. SpectralTable takes either inline arrays
/// "frequency"/"density" or "csv" (path relative to base_dir), plus an
/// optional "tail_exponent".
inline CovarianceModel1D model_from_json(const json& j, const std::string& path = "model",
                                         const std::filesystem::path& base_dir = {}) {
  detail::check_keys(j, {"kind", "params"}, path);
  const std::string kind = detail::string(j, "kind", path, "");
  if (kind.empty()) fail(ErrorCode::InvalidConfig, "missing key '" + detail::join(path, "kind") + "'");
  const json params = j.contains("params") ? j.at("params") : json::object();
  const std::string pp = detail::join(path, "params");
  using detail::number;
  if (kind == "GaussianExp") {
    detail::check_keys(params, {"length_scale"}, pp);
    return CovarianceModel1D::gaussian_exp(number(params, "length_scale", pp, 1.0));
  }
  if (kind == "SineCosine") {
    detail::check_keys(params, {"w"}, pp);
    return CovarianceModel1D::sine_cosine(number(params, "w", pp, std::nullopt));
  }
  if (kind == "MaternLike") {
    detail::check_keys(params, {"nu", "length_scale"}, pp);
    return CovarianceModel1D::matern_like(number(params, "nu", pp, std::nullopt),
                                          number(params, "length_scale", pp, 1.0));
  }
  if (kind == "Cauchy") {
    detail::check_keys(params, {"alpha", "length_scale"}, pp);
    return CovarianceModel1D::cauchy(number(params, "alpha", pp, std::nullopt),
                                     number(params, "length_scale", pp, 1.0));
  }
  if (kind == "LogTail") {
    detail::check_keys(params, {"beta", "length_scale"}, pp);
    return CovarianceModel1D::log_tail(number(params, "beta", pp, 1.5), number(params, "length_scale", pp, 1.0));
  }
  if (kind == "SpectralTable") {
    detail::check_keys(params, {"csv", "frequency", "density", "tail_exponent"}, pp);
    std::optional<double> tail;
    if (params.contains("tail_exponent")) tail = number(params, "tail_exponent", pp, std::nullopt);
    if (params.contains("csv")) {
      if (params.contains("frequency") || params.contains("density"))
        fail(ErrorCode::InvalidConfig, "'" + pp + "' takes either csv or frequency/density, not both");
      std::filesystem::path file = detail::string(params, "csv", pp, "");
      if (file.is_relative()) file = base_dir / file;
      std::ifstream in(file);
      if (!in) fail(ErrorCode::InvalidConfig, "cannot open '" + detail::join(pp, "csv") + "' = " + file.string());
      return CovarianceModel1D::spectral_table(SpectralDensity::from_csv(in, tail));
    }
    auto array = [&](const char* key) {
      if (!params.contains(key) || !params.at(key).is_array())
        fail(ErrorCode::InvalidConfig, "key '" + detail::join(pp, key) + "' must be an array of numbers");
      std::vector<double> v;
      for (const auto& x : params.at(key)) {
        if (!x.is_number()) fail(ErrorCode::InvalidConfig, "key '" + detail::join(pp, key) + "' must hold numbers");
        v.push_back(x.get<double>());
      }
      return v;
    };
    return CovarianceModel1D::spectral_table(SpectralDensity(array("frequency"), array("density"), tail));
  }
  fail(ErrorCode::InvalidConfig, "unknown model kind '" + kind + "' at '" + detail::join(path, "kind") + "'");
}

inline json model_to_json(const CovarianceModel1D& m) {
  json params = json::object();
  switch (m.kind()) {
    case ModelKind::GaussianExp: params["length_scale"] = m.param1(); break;
    case ModelKind::SineCosine: params["w"] = m.param1(); break;
    case ModelKind::MaternLike: params = {{"nu", m.param1()}, {"length_scale", m.param2()}}; break;
    case ModelKind::Cauchy: params = {{"alpha", m.param1()}, {"length_scale", m.param2()}}; break;
    case ModelKind::LogTail: params = {{"beta", m.param1()}, {"length_scale", m.param2()}}; break;
    case ModelKind::SpectralTable: {
      const SpectralDensity& s = *m.spectrum();
      params = {{"frequency", s.frequencies()}, {"density", s.values()}, {"tail_exponent", s.tail_exponent()}};
      break;
    }
  }
  return {{"kind", m.name()}, {"params", params}};
}

/// {"coords": [model, ...]} or {"profile": model, "dim": d}.
inline IsotropicFieldModel field_from_json(const json& j, const std::string& path = "field",
                                           const std::filesystem::path& base_dir = {}) {
  detail::check_keys(j, {"coords", "profile", "dim"}, path);
  IsotropicFieldModel f;
  if (j.contains("coords")) {
    if (j.contains("profile") || j.contains("dim"))
      fail(ErrorCode::InvalidConfig, "'" + path + "' takes either coords or profile/dim");
    if (!j.at("coords").is_array() || j.at("coords").empty())
      fail(ErrorCode::InvalidConfig, "key '" + detail::join(path, "coords") + "' must be a nonempty array");
    std::size_t i = 0;
    for (const auto& c : j.at("coords"))
      f.coords.emplace_back(model_from_json(c, detail::join(path, "coords") + "[" + std::to_string(i++) + "]", base_dir));
    return f;
  }
  if (!j.contains("profile")) fail(ErrorCode::InvalidConfig, "missing key '" + detail::join(path, "profile") + "'");
  const auto d = detail::unsigned_int(j, "dim", path, 1);
  if (d < 1 || d > 2) fail(ErrorCode::InvalidConfig, "key '" + detail::join(path, "dim") + "' must be 1 or 2");
  return IsotropicFieldModel::uniform(static_cast<int>(d),
                                      RadialProfile(model_from_json(j.at("profile"), detail::join(path, "profile"), base_dir)));
}

inline json field_to_json(const IsotropicFieldModel& f) {
  json coords = json::array();
  for (const auto& p : f.coords) coords.push_back(model_to_json(p.restriction()));
  return {{"coords", coords}};
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

enum class Problem { Crossings, Roots, Length };

constexpr std::string_view to_string(Problem p) {
  switch (p) {
    case Problem::Crossings: return "crossings";
    case Problem::Roots: return "roots";
    case Problem::Length: return "length";
  }
  return "crossings";
}

struct ExperimentConfig {
  Problem problem = Problem::Crossings;
  std::optional<CovarianceModel1D> model;
  std::optional<IsotropicFieldModel> field;
  std::array<double, 2> u{0.0, 0.0};
  double T = 1.0;
  Rectangle rect{1.0, 1.0};
  QuadConfig quad;
  Radial2DOptions radial;
  std::size_t replicates = 1000;
  int resolution = 1024;
  std::uint64_t seed = 1;
  int levels = 2;
  EmbeddingOptions embedding;
  std::string out_dir = ".";
};

/// Validates the whole document (schema, ranges, model construction) before
/// anything is computed. Every error names the offending key.
inline ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  using detail::number;
  detail::check_keys(j,
                     {"problem", "model", "field", "u", "T", "rectangle", "quadrature", "inner_mc", "mc", "embedding",
                      "output"},
                     "");
  ExperimentConfig c;
  if (j.contains("model") && j.contains("field"))
    fail(ErrorCode::InvalidConfig, "config takes either 'model' (1D) or 'field' (2D), not both");
  if (j.contains("model")) c.model = model_from_json(j.at("model"), "model", base_dir);
  if (j.contains("field")) c.field = field_from_json(j.at("field"), "field", base_dir);
  if (!c.model && !c.field) fail(ErrorCode::InvalidConfig, "missing key 'model' (or 'field')");

  const std::string dflt = c.model ? "crossings" : (c.field->dim() == 2 ? "roots" : "length");
  const std::string problem = detail::string(j, "problem", "", dflt);
  if (problem == "crossings")
    c.problem = Problem::Crossings;
  else if (problem == "roots")
    c.problem = Problem::Roots;
  else if (problem == "length")
    c.problem = Problem::Length;
  else
    fail(ErrorCode::InvalidConfig, "key 'problem' must be crossings, roots or length");
  if (c.problem == Problem::Crossings && !c.model)
    fail(ErrorCode::InvalidConfig, "key 'problem' = crossings needs 'model'");
  if (c.problem == Problem::Roots && !(c.field && c.field->dim() == 2))
    fail(ErrorCode::InvalidConfig, "key 'problem' = roots needs 'field' with 2 coordinates");
  if (c.problem == Problem::Length && !(c.field && c.field->dim() == 1))
    fail(ErrorCode::InvalidConfig, "key 'problem' = length needs 'field' with 1 coordinate");

  if (j.contains("u")) {
    const json& u = j.at("u");
    if (u.is_number()) {
      c.u = {u.get<double>(), u.get<double>()};
    } else if (u.is_array() && u.size() == 2 && u[0].is_number() && u[1].is_number()) {
      c.u = {u[0].get<double>(), u[1].get<double>()};
    } else {
      fail(ErrorCode::InvalidConfig, "key 'u' must be a number or a pair of numbers");
    }
    if (!std::isfinite(c.u[0]) || !std::isfinite(c.u[1])) fail(ErrorCode::InvalidConfig, "key 'u' must be finite");
  }
  c.T = number(j, "T", "", 1.0);
  if (!(c.T > 0.0)) fail(ErrorCode::InvalidConfig, "key 'T' must be positive");
  if (j.contains("rectangle")) {
    const json& r = j.at("rectangle");
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number() || !(r[0].get<double>() > 0.0) ||
        !(r[1].get<double>() > 0.0))
      fail(ErrorCode::InvalidConfig, "key 'rectangle' must be a pair of positive side lengths");
    c.rect = {r[0].get<double>(), r[1].get<double>()};
  }

  if (j.contains("quadrature")) {
    const json& q = j.at("quadrature");
    detail::check_keys(q, {"rel_tol", "fail_tol", "tau_min_rel", "k_min", "k_max", "geometric_levels"}, "quadrature");
    c.quad.rel_tol = number(q, "rel_tol", "quadrature", c.quad.rel_tol);
    c.quad.fail_tol = number(q, "fail_tol", "quadrature", c.quad.fail_tol);
    c.quad.tau_min_rel = number(q, "tau_min_rel", "quadrature", c.quad.tau_min_rel);
    c.quad.geman.k_min = static_cast<int>(detail::unsigned_int(q, "k_min", "quadrature", 4));
    c.quad.geman.k_max = static_cast<int>(detail::unsigned_int(q, "k_max", "quadrature", 40));
    if (q.contains("k_min")) c.radial.geman.k_min = c.quad.geman.k_min;
    if (q.contains("k_max")) c.radial.geman.k_max = c.quad.geman.k_max;
    c.radial.geometric_levels =
        static_cast<int>(detail::unsigned_int(q, "geometric_levels", "quadrature", c.radial.geometric_levels));
    if (!(c.quad.rel_tol > 0.0 && c.quad.fail_tol > 0.0 && c.quad.tau_min_rel > 0.0 && c.quad.tau_min_rel < 1e-3))
      fail(ErrorCode::InvalidConfig, "'quadrature' tolerances must be positive and tau_min_rel < 1e-3");
    if (c.quad.geman.k_min < 1 || c.quad.geman.k_max < c.quad.geman.k_min + 5 || c.quad.geman.k_max > 60)
      fail(ErrorCode::InvalidConfig, "'quadrature.k_min'/'quadrature.k_max' need 1 <= k_min, k_min + 5 <= k_max <= 60");
  }
  if (j.contains("inner_mc")) {
    const json& m = j.at("inner_mc");
    detail::check_keys(m, {"rel_se", "max_draws", "seed"}, "inner_mc");
    c.radial.inner.rel_se = number(m, "rel_se", "inner_mc", c.radial.inner.rel_se);
    c.radial.inner.max_draws = detail::unsigned_int(m, "max_draws", "inner_mc", c.radial.inner.max_draws);
    c.radial.inner.seed = detail::unsigned_int(m, "seed", "inner_mc", c.radial.inner.seed);
    if (!(c.radial.inner.rel_se > 0.0)) fail(ErrorCode::InvalidConfig, "key 'inner_mc.rel_se' must be positive");
  }
  if (j.contains("mc")) {
    const json& m = j.at("mc");
    detail::check_keys(m, {"replicates", "resolution", "seed", "levels"}, "mc");
    c.replicates = detail::unsigned_int(m, "replicates", "mc", c.replicates);
    c.resolution = static_cast<int>(detail::unsigned_int(m, "resolution", "mc", static_cast<std::uint64_t>(c.resolution)));
    c.seed = detail::unsigned_int(m, "seed", "mc", c.seed);
    c.levels = static_cast<int>(detail::unsigned_int(m, "levels", "mc", static_cast<std::uint64_t>(c.levels)));
  }
  if (j.contains("embedding")) {
    const json& e = j.at("embedding");
    detail::check_keys(e, {"max_padding", "spectral_fallback", "spectral_terms"}, "embedding");
    c.embedding.max_padding =
        static_cast<int>(detail::unsigned_int(e, "max_padding", "embedding", static_cast<std::uint64_t>(c.embedding.max_padding)));
    c.embedding.spectral_fallback = detail::boolean(e, "spectral_fallback", "embedding", c.embedding.spectral_fallback);
    c.embedding.spectral_terms = static_cast<int>(
        detail::unsigned_int(e, "spectral_terms", "embedding", static_cast<std::uint64_t>(c.embedding.spectral_terms)));
    if (c.embedding.max_padding < 1 || c.embedding.max_padding > 64)
      fail(ErrorCode::InvalidConfig, "key 'embedding.max_padding' must be in 1..64");
    if (c.embedding.spectral_terms < 10000)
      fail(ErrorCode::InvalidConfig, "key 'embedding.spectral_terms' must be at least 10000");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    detail::check_keys(o, {"dir"}, "output");
    c.out_dir = detail::string(o, "dir", "output", c.out_dir);
  }
  return c;
}

/// Range checks shared by config files and flag overrides.
inline void validate_mc(const ExperimentConfig& c) {
  if (c.replicates == 0) fail(ErrorCode::InvalidConfig, "key 'mc.replicates' must be positive");
  if (c.levels < 1 || c.levels > 8) fail(ErrorCode::InvalidConfig, "key 'mc.levels' must be in 1..8");
  if (c.resolution < 2 || c.resolution % (1 << (c.levels - 1)) != 0)
    fail(ErrorCode::InvalidConfig, "key 'mc.resolution' must be >= 2 and divisible by 2^(levels-1)");
}

/// The config with every default filled in.
inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["problem"] = std::string(to_string(c.problem));
  if (c.model) j["model"] = model_to_json(*c.model);
  if (c.field) j["field"] = field_to_json(*c.field);
  j["u"] = c.problem == Problem::Roots ? json{c.u[0], c.u[1]} : json(c.u[0]);
  j["T"] = c.T;
  j["rectangle"] = {c.rect.a, c.rect.b};
  const GemanOptions& g = c.problem == Problem::Crossings ? c.quad.geman : c.radial.geman;
  j["quadrature"] = {{"rel_tol", c.quad.rel_tol},         {"fail_tol", c.quad.fail_tol},
                     {"tau_min_rel", c.quad.tau_min_rel}, {"k_min", g.k_min},
                     {"k_max", g.k_max},                  {"geometric_levels", c.radial.geometric_levels}};
  j["inner_mc"] = {{"rel_se", c.radial.inner.rel_se},
                   {"max_draws", c.radial.inner.max_draws},
                   {"seed", c.radial.inner.seed}};
  j["mc"] = {{"replicates", c.replicates}, {"resolution", c.resolution}, {"seed", c.seed}, {"levels", c.levels}};
  j["embedding"] = {{"max_padding", c.embedding.max_padding},
                    {"spectral_fallback", c.embedding.spectral_fallback},
                    {"spectral_terms", c.embedding.spectral_terms}};
  j["output"] = {{"dir", c.out_dir}};
  return j;
}

inline json load_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config file " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidConfig, "malformed JSON in " + file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json geman_to_json(const GemanSummary& g) {
  return {{"class", std::string(to_string(g.cls))}, {"alpha", detail::num(g.alpha)}, {"alpha_se", detail::num(g.alpha_se)}};
}

/// {mean, second_factorial, second_moment, quad_error, geman, inner_mc_se};
/// an infinite moment is null with "unbounded": true.
inline json report_to_json(const MomentReport& r) {
  json j;
  j["mean"] = detail::num(r.mean);
  j["second_factorial"] = detail::num(r.second_factorial.value);
  j["second_moment"] = detail::num(r.second_moment.value);
  j["quad_error"] = detail::num(r.quad_error);
  j["geman"] = geman_to_json(r.geman);
  j["inner_mc_se"] = detail::num(r.inner_mc_se);
  j["unbounded"] = r.second_factorial.infinite || r.second_moment.infinite;
  return j;
}

inline json fit_to_json(const GemanFit& f) {
  return {{"class", std::string(to_string(f.cls))},
          {"alpha", detail::num(f.alpha)},
          {"alpha_se", detail::num(f.alpha_se)},
          {"loglog_slope", detail::num(f.loglog_slope)},
          {"identically_zero", f.identically_zero}};
}

inline json ensemble_to_json(const SimulationEnsemble& e) {
  json levels = json::array();
  for (const auto& l : e.levels)
    levels.push_back({{"intervals", l.intervals},
                      {"delta", l.delta},
                      {"mean", l.mean},
                      {"variance", l.variance},
                      {"se", l.se},
                      {e.kind == EnsembleKind::Length2D ? "second_moment" : "second_factorial", l.second},
                      {e.kind == EnsembleKind::Length2D ? "second_moment_se" : "second_factorial_se", l.second_se}});
  const auto& f = e.levels.front();
  return {{"statistic", std::string(to_string(e.kind))},
          {"seed", e.seed},
          {"replicates", e.replicates},
          {"resolution", e.resolution},
          {"method", e.method},
          {"padding", e.padding},
          {"min_eigenvalue", detail::num(e.min_eigenvalue)},
          {"mean", f.mean},
          {"variance", f.variance},
          {"se", f.se},
          {"levels", levels},
          {"richardson_mean", e.richardson_mean},
          {"richardson_bias", e.richardson_bias},
          {"failures", e.failures},
          {"newton_stalls", e.newton_stalls},
          {"tangency_candidates", e.tangency_candidates}};
}

}  // namespace crossmoments::io
