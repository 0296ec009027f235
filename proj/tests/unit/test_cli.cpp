#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "crossmoments/io.hpp"

namespace cm = crossmoments;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    cm::io::config_from_json(j);
  } catch (const cm::Error& e) {
    EXPECT_EQ(e.code(), cm::ErrorCode::InvalidConfig) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "config accepted: " << j.dump();
  return {};
}

const json kGauss = {{"kind", "GaussianExp"}, {"params", {{"length_scale", 1.0}}}};

}  // namespace

TEST(Config, UnknownKeysNameThePath) {
  EXPECT_NE(config_error({{"model", kGauss}, {"colour", 1}}).find("'colour'"), std::string::npos);
  EXPECT_NE(config_error({{"model", {{"kind", "GaussianExp"}, {"params", {{"lenght_scale", 1}}}}}})
                .find("'model.params.lenght_scale'"),
            std::string::npos);
  EXPECT_NE(config_error({{"model", kGauss}, {"mc", {{"replicate", 3}}}}).find("'mc.replicate'"), std::string::npos);
  EXPECT_NE(config_error({{"field", {{"coords", {kGauss, {{"kind", "GaussianExp"}, {"foo", 1}}}}}}})
                .find("'field.coords[1].foo'"),
            std::string::npos);
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  EXPECT_NE(config_error({{"model", kGauss}, {"T", "one"}}).find("'T'"), std::string::npos);
  EXPECT_NE(config_error({{"model", kGauss}, {"T", -1.0}}).find("'T'"), std::string::npos);
  EXPECT_NE(config_error({{"model", kGauss}, {"mc", {{"replicates", -3}}}}).find("'mc.replicates'"),
            std::string::npos);
  EXPECT_NE(config_error({{"model", {{"kind", "Bogus"}}}}).find("'model.kind'"), std::string::npos);
  EXPECT_NE(config_error({{"model", {{"kind", "SineCosine"}}}}).find("'model.params.w'"), std::string::npos);
  config_error({{"T", 1.0}});
  config_error({{"model", kGauss}, {"problem", "roots"}});
  EXPECT_THROW(cm::io::config_from_json({{"model", {{"kind", "MaternLike"}, {"params", {{"nu", 0.5}}}}}}),
               cm::Error);
}

TEST(Config, DefaultsAreRecorded) {
  const auto c = cm::io::config_from_json({{"model", kGauss}});
  const json j = cm::io::config_to_json(c);
  EXPECT_EQ(j["problem"], "crossings");
  EXPECT_EQ(j["T"], 1.0);
  EXPECT_EQ(j["mc"]["replicates"], 1000);
  EXPECT_EQ(j["mc"]["resolution"], 1024);
  EXPECT_EQ(j["quadrature"]["k_min"], 4);
  EXPECT_EQ(j["quadrature"]["k_max"], 40);
  EXPECT_EQ(j["embedding"]["max_padding"], 16);
  EXPECT_EQ(j["embedding"]["spectral_fallback"], true);
  EXPECT_EQ(j["output"]["dir"], ".");
  // The resolved config parses back to itself.
  EXPECT_EQ(cm::io::config_to_json(cm::io::config_from_json(j)), j);
}

TEST(Config, FieldProblemsDispatch) {
  const json profile = {{"kind", "Cauchy"}, {"params", {{"alpha", 2.0}, {"length_scale", 0.5}}}};
  auto roots = cm::io::config_from_json({{"field", {{"profile", profile}, {"dim", 2}}}, {"u", {0.5, -0.5}}});
  EXPECT_EQ(roots.problem, cm::io::Problem::Roots);
  EXPECT_EQ(roots.u[1], -0.5);
  auto length = cm::io::config_from_json({{"field", {{"profile", profile}, {"dim", 1}}}});
  EXPECT_EQ(length.problem, cm::io::Problem::Length);
  // SineCosine is not a scale mixture, so it is no isotropic profile.
  const json sine = {{"kind", "SineCosine"}, {"params", {{"w", 1}}}};
  EXPECT_THROW(cm::io::config_from_json({{"field", {{"profile", sine}}}}), cm::Error);
}

TEST(Models, JsonRoundTrip) {
  const std::vector<cm::CovarianceModel1D> models{
      cm::CovarianceModel1D::gaussian_exp(0.7), cm::CovarianceModel1D::sine_cosine(2.0),
      cm::CovarianceModel1D::matern_like(2.5, 0.3), cm::CovarianceModel1D::cauchy(1.5, 2.0),
      cm::CovarianceModel1D::log_tail(3.0, 0.1)};
  for (const auto& m : models) {
    const auto back = cm::io::model_from_json(cm::io::model_to_json(m));
    EXPECT_EQ(back.kind(), m.kind());
    for (double tau : {0.01, 0.3, 1.1}) EXPECT_NEAR(back.eval(tau).r, m.eval(tau).r, 1e-14) << m.name();
  }
}

TEST(Models, SpectralTableFromCsvFile) {
  const fs::path dir = fs::temp_directory_path() / "crossmoments_test_cli_csv";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "table.csv");
    out << "frequency,density\n";
    for (int i = 0; i <= 400; ++i) {
      const double w = 0.05 * i;
      out << w << "," << std::exp(-0.5 * w * w) << "\n";
    }
  }
  const json cfg = {{"kind", "SpectralTable"}, {"params", {{"csv", "table.csv"}, {"tail_exponent", 8.0}}}};
  const auto m = cm::io::model_from_json(cfg, "model", dir);
  EXPECT_EQ(m.kind(), cm::ModelKind::SpectralTable);
  EXPECT_NEAR(m.eval(0.5).r, std::exp(-0.125), 1e-3);
  const auto inline_table = cm::io::model_from_json(cm::io::model_to_json(m));
  EXPECT_NEAR(inline_table.eval(0.5).r, m.eval(0.5).r, 1e-10);
  EXPECT_THROW(cm::io::model_from_json({{"kind", "SpectralTable"}, {"params", {{"csv", "missing.csv"}}}}, "model", dir),
               cm::Error);
  fs::remove_all(dir);
}

TEST(Reports, NonFiniteBecomesNullWithFlag) {
  cm::MomentReport r;
  r.mean = 0.4;
  r.second_factorial = cm::MomentValue::unbounded();
  r.second_moment = cm::MomentValue::unbounded();
  r.geman = {cm::GemanClass::Diverges, 0.02, 0.001};
  const json j = cm::io::report_to_json(r);
  EXPECT_TRUE(j["second_factorial"].is_null());
  EXPECT_TRUE(j["second_moment"].is_null());
  EXPECT_TRUE(j["unbounded"].get<bool>());
  EXPECT_EQ(j["geman"]["class"], "Diverges");
  for (const char* key : {"mean", "second_factorial", "second_moment", "quad_error", "geman", "inner_mc_se"})
    EXPECT_TRUE(j.contains(key)) << key;

  cm::MomentReport len;
  len.second_factorial = len.second_moment = {2.0, false};
  const json k = cm::io::report_to_json(len);
  EXPECT_TRUE(k["geman"]["alpha"].is_null());
  EXPECT_FALSE(k["unbounded"].get<bool>());
}

// ---------------------------------------------------------------------------
// The binary
// ---------------------------------------------------------------------------

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("crossmoments_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  // Exit status of `crossmoments args`, stdout into out.txt.
  int run(const std::string& args) const {
    const std::string cmd = std::string(CROSSMOMENTS_CLI) + " " + args + " > " + (dir_ / "out.txt").string() +
                            " 2> " + (dir_ / "err.txt").string();
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }
  std::string stdout_text() const { return read(dir_ / "out.txt"); }
  std::string stderr_text() const { return read(dir_ / "err.txt"); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GemanGaussianConverges) {
  const auto cfg = write("c.json", R"({"model": {"kind": "GaussianExp", "params": {"length_scale": 1}}})");
  EXPECT_EQ(run("geman --json --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  const json j = json::parse(stdout_text());
  EXPECT_EQ(j["class"], "Converges");
  EXPECT_EQ(j["sigma_form"]["class"], "Converges");
  EXPECT_EQ(j["spectral_form"]["class"], "Converges");
  EXPECT_EQ(j["table"].size(), 37u);
  EXPECT_EQ(read(dir_ / "o" / "geman_table.csv").substr(0, 22), "k,tau,sigma2,spectral\n");
}

TEST_F(Cli, GemanSineCosineHasZeroColumn) {
  const auto cfg = write("c.json", R"({"model": {"kind": "SineCosine", "params": {"w": 1.5}}})");
  EXPECT_EQ(run("geman --json --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  const json j = json::parse(stdout_text());
  EXPECT_EQ(j["class"], "Converges");
  EXPECT_TRUE(j["sigma_form"]["identically_zero"].get<bool>());
  for (const auto& row : j["table"]) EXPECT_EQ(row["sigma2"].get<double>(), 0.0);
}

TEST_F(Cli, GemanLogTailDivergesWithExit4) {
  const auto cfg = write("c.json", R"({"model": {"kind": "LogTail", "params": {"beta": 1.5}}})");
  EXPECT_EQ(run("geman --config " + cfg.string() + " --out " + (dir_ / "o").string()), 4);
}

TEST_F(Cli, ConfigErrorsExit2AndNameTheKey) {
  const auto bad = write("bad.json", R"({"model": {"kind": "GaussianExp", "params": {"lenght_scale": 1}}})");
  EXPECT_EQ(run("geman --config " + bad.string()), 2);
  EXPECT_NE(stderr_text().find("model.params.lenght_scale"), std::string::npos) << stderr_text();

  const auto broken = write("broken.json", R"({"model": {"kind": )");
  EXPECT_EQ(run("moments --config " + broken.string()), 2);
  EXPECT_NE(stderr_text().find("malformed JSON"), std::string::npos);

  EXPECT_EQ(run("geman --config " + (dir_ / "missing.json").string()), 2);
  EXPECT_EQ(run("geman"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, MomentsGaussianFinite) {
  const auto cfg = write("c.json", R"({"model": {"kind": "GaussianExp", "params": {}}, "u": 0, "T": 1})");
  const fs::path out = dir_ / "o";
  EXPECT_EQ(run("moments --config " + cfg.string() + " --out " + out.string()), 0);
  const json j = json::parse(read(out / "moments.json"));
  EXPECT_NEAR(j["report"]["mean"].get<double>(), 1.0 / M_PI, 1e-12);
  EXPECT_GT(j["report"]["second_factorial"].get<double>(), 0.0);
  EXPECT_FALSE(j["report"]["unbounded"].get<bool>());
  EXPECT_EQ(j["config"]["quadrature"]["rel_tol"], 1e-9);
  const std::string trace = read(out / "moments_trace.csv");
  EXPECT_EQ(trace.substr(0, 14), "lag,integrand\n");
  EXPECT_GT(std::count(trace.begin(), trace.end(), '\n'), 30);
}

TEST_F(Cli, MomentsDivergentModelFlagsInfinity) {
  const auto cfg = write("c.json", R"({"model": {"kind": "LogTail", "params": {"beta": 1.2}}, "T": 1})");
  const fs::path out = dir_ / "o";
  EXPECT_EQ(run("moments --json --config " + cfg.string() + " --out " + out.string()), 4);
  const json j = json::parse(stdout_text());
  EXPECT_TRUE(j["report"]["second_factorial"].is_null());
  EXPECT_TRUE(j["report"]["unbounded"].get<bool>());
  EXPECT_TRUE(fs::exists(out / "moments.json"));
}

TEST_F(Cli, MomentsLengthIsFinite) {
  const auto cfg = write("c.json", R"({"problem": "length", "u": 0.5,
    "field": {"profile": {"kind": "GaussianExp", "params": {"length_scale": 0.5}}, "dim": 1}})");
  EXPECT_EQ(run("moments --json --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  const json j = json::parse(stdout_text());
  EXPECT_GT(j["report"]["second_moment"].get<double>(), 0.0);
  EXPECT_EQ(j["report"]["second_moment"], j["report"]["second_factorial"]);
}

TEST_F(Cli, SimulateIsByteIdenticalForFixedSeed) {
  const auto cfg = write("c.json", R"({"model": {"kind": "GaussianExp", "params": {"length_scale": 0.5}},
    "T": 2, "u": 0.3, "mc": {"replicates": 64, "resolution": 512}})");
  const fs::path out = dir_ / "o";
  EXPECT_EQ(run("simulate --seed 17 --config " + cfg.string() + " --out " + out.string()), 0);
  const std::string csv = read(out / "ensemble.csv");
  const std::string agg = read(out / "ensemble.json");
  EXPECT_EQ(run("simulate --seed 17 --config " + cfg.string() + " --out " + out.string()), 0);
  EXPECT_EQ(read(out / "ensemble.csv"), csv);
  EXPECT_EQ(read(out / "ensemble.json"), agg);
  EXPECT_EQ(csv.substr(0, 27), "replicate_id,count,delta\n0,");
  EXPECT_EQ(json::parse(agg)["config"]["mc"]["seed"], 17);
  EXPECT_EQ(run("simulate --seed 18 --config " + cfg.string() + " --out " + out.string()), 0);
  EXPECT_NE(read(out / "ensemble.csv"), csv);
}

TEST_F(Cli, SimulateFlagsOverrideAndZeroReplicatesRejected) {
  const auto cfg = write("c.json", R"({"model": {"kind": "GaussianExp", "params": {}}, "mc": {"replicates": 10}})");
  EXPECT_EQ(run("simulate --replicates 0 --config " + cfg.string() + " --out " + (dir_ / "o").string()), 2);
  EXPECT_FALSE(fs::exists(dir_ / "o" / "ensemble.csv"));
  EXPECT_EQ(run("simulate --json --replicates 6 --resolution 256 --config " + cfg.string() + " --out " +
                (dir_ / "o").string()),
            0);
  const json j = json::parse(stdout_text());
  EXPECT_EQ(j["ensemble"]["replicates"], 6);
  EXPECT_EQ(j["config"]["mc"]["resolution"], 256);
}

TEST_F(Cli, SimulateSineCosineOnePeriod) {
  const auto cfg = write("c.json", R"({"model": {"kind": "SineCosine", "params": {"w": 1}},
    "T": 6.283185307179586, "u": 0, "mc": {"replicates": 200, "resolution": 1000}})");
  EXPECT_EQ(run("simulate --json --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  const json j = json::parse(stdout_text());
  EXPECT_EQ(j["ensemble"]["mean"].get<double>(), 2.0);
  EXPECT_EQ(j["ensemble"]["variance"].get<double>(), 0.0);
}

TEST_F(Cli, ValidateFilterAndToleranceHook) {
  EXPECT_EQ(run("validate --filter geman"), 0);
  const std::string text = stdout_text();
  EXPECT_NE(text.find("PASS 6 geman"), std::string::npos) << text;
  EXPECT_EQ(text.find("regression"), std::string::npos);
  EXPECT_EQ(text.find("mehler"), std::string::npos);

  EXPECT_EQ(run("validate --filter geman --tolerance-scale 0"), 1);
  EXPECT_NE(stdout_text().find("FAIL 6 geman"), std::string::npos);

  EXPECT_EQ(run("validate --filter no_such_check"), 2);
}

TEST_F(Cli, HelpDocumentsCsvColumns) {
  EXPECT_EQ(run("--help"), 0);
  const std::string text = stdout_text();
  for (const char* s : {"replicate_id,count,delta", "replicate_id,length,delta", "lag,integrand", "radius,integrand",
                        "k,tau,sigma2,spectral", "CROSSMOMENTS_THREADS"})
    EXPECT_NE(text.find(s), std::string::npos) << s;
}
