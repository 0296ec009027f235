// One pass/fail line per acceptance criterion. Criteria 1-9 run the full-size
// library checks; criterion 10 runs `crossmoments validate` as a user would.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <sys/wait.h>

#include <CLI11.hpp>

#include "crossmoments/validation.hpp"

namespace v = crossmoments::validation;

namespace {

v::CheckResult run_cli_validate(const std::string& cli) {
  const double budget = 900.0;
  const auto t0 = std::chrono::steady_clock::now();
  const int st = std::system((cli + " validate 1>&2").c_str());
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  v::CheckResult r{10, "validate", code == 0 && s < budget, {}, s};
  r.detail = "exit " + std::to_string(code) + " after " + std::to_string(s) + " s (budget " +
             std::to_string(budget) + " s)";
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int criterion = 0;
  std::string cli = "crossmoments";
  app.add_option("--criterion", criterion, "Run only this criterion (1-10); default all")->check(CLI::Range(0, 10));
  app.add_option("--cli", cli, "Path of the crossmoments binary (criterion 10)");
  CLI11_PARSE(app, argc, argv);

  bool all = true;
  auto report = [&](const v::CheckResult& r) {
    all = all && r.passed;
    std::cout << "criterion " << r.criterion << " (" << r.name << "): " << (r.passed ? "PASS" : "FAIL") << " - "
              << r.detail << std::endl;
  };
  v::ValidationOptions opt;
  for (const auto& c : v::all_checks()) {
    if (criterion != 0 && criterion != c.criterion) continue;
    v::run_checks(opt, c.name, report);
  }
  if (criterion == 0 || criterion == 10) report(run_cli_validate(cli));
  return all ? 0 : 1;
}
