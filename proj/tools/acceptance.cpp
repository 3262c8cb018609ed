// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: dil_acceptance [--quick] [--only N[,N...]] [--scratch DIR]

#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "dil/checks.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool quick = false;
  std::vector<int> only;
  std::string scratch = (std::filesystem::temp_directory_path() / "dil_acceptance").string();
  app.add_flag("--quick", quick, "Shorter generalization run (not the acceptance setting)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--scratch", scratch, "Scratch directory for the end-to-end run");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  struct Criterion {
    int id;
    const char* title;
    double budget_s;  // 0 = none
    std::function<dil::VerifyResult()> run;
  };
  dil::GeneralizationOptions gen;
  if (quick) {
    gen.iters = 300;
    gen.seeds = {1};
    gen.required_seeds = 1;
  }
  gen.log = [](const std::string& line) { std::cerr << "  [7] " << line << "\n"; };

  const std::vector<Criterion> criteria{
      {1, "gradient exactness", 30, [] { return dil::check_gradients(); }},
      {2, "HVP oracle", 30, [] { return dil::check_hvp_oracle(); }},
      {3, "Taylor equivalence slope", 120, [] { return dil::check_taylor_slope(); }},
      {4, "ERM reduction (alpha = 0)", 0, [] { return dil::check_erm_reduction(); }},
      {5, "second-order closed form", 0, [] { return dil::check_second_order_closed_form(); }},
      {6, "sign-convention guard", 0, [] { return dil::check_sign_convention(); }},
      {7, "generalization effect", 900, [&] { return dil::check_generalization(gen); }},
      {8, "metric closed forms", 0, [] { return dil::check_metric_closed_forms(); }},
      {9, "degradation statistics", 0, [] { return dil::check_degradation_statistics(); }},
      {10, "end-to-end determinism", 0, [&] { return dil::check_end_to_end_determinism(scratch); }},
  };

  std::filesystem::create_directories(scratch);
  bool all = true;
  for (const auto& c : criteria) {
    if (!want(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    dil::VerifyResult r = c.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = r.passed;
    std::string timing = std::to_string(secs).substr(0, std::to_string(secs).find('.') + 2) + "s";
    if (c.budget_s > 0 && secs > c.budget_s) {
      ok = false;
      timing += " over the " + std::to_string(static_cast<int>(c.budget_s)) + "s budget";
    }
    all = all && ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.title << ": measured " << r.measured
              << " (threshold " << r.threshold << "), " << timing << "; " << r.detail << std::endl;
  }
  return all ? 0 : 1;
}
