#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clipsim/experiment.hpp"
#include "clipsim/validation.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidationFailure = 1;
constexpr int kExitConfigError = 2;

std::vector<double> parse_eps_list(const std::string& text, bool is_low) {
  std::vector<double> values;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (item == "off") {
      values.push_back(is_low ? clipsim::kClipLowOff : clipsim::kClipHighOff);
    } else {
      values.push_back(std::stod(item));
    }
  }
  if (values.empty()) {
    throw clipsim::ConfigError("empty clip list: " + text);
  }
  return values;
}

void print_run_summary(const clipsim::RunResult& result) {
  std::printf("steps logged:    %lld\n",
              static_cast<long long>(result.steps_logged));
  std::printf("initial entropy: %.6f\n", result.initial_entropy);
  std::printf("final entropy:   %.6f\n", result.final_entropy);
  if (result.final_pass_at_k >= 0.0) {
    std::printf("final pass@k:    %.4f\n", result.final_pass_at_k);
    std::printf("final mean@k:    %.4f\n", result.final_mean_at_k);
  }
  const clipsim::ConditionCheckResult conditions =
      clipsim::summarize_conditions(result.conditions);
  if (conditions.records > 0) {
    std::printf("condition sign rates: q|X %.4f  q|Y %.4f  log|X %.4f  log|Y %.4f\n",
                conditions.qcond_low_frac, conditions.qcond_high_frac,
                conditions.logcond_low_frac, conditions.logcond_high_frac);
  }
  std::printf("artifacts: %s\n", result.out_dir.c_str());
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 bool seed_set, std::uint64_t seed) {
  clipsim::RunConfig config = clipsim::load_run_config(config_path);
  if (seed_set) config.seed = seed;
  const clipsim::RunResult result = clipsim::run_experiment(config, out_dir);
  print_run_summary(result);
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::string& lows_text, const std::string& highs_text) {
  const clipsim::RunConfig base = clipsim::load_run_config(config_path);
  const std::vector<double> lows = parse_eps_list(lows_text, true);
  const std::vector<double> highs = parse_eps_list(highs_text, false);
  const std::vector<clipsim::AblationCell> cells =
      clipsim::ablate_clipping(base, lows, highs, out_dir);
  std::printf("%-10s %-10s %-14s %-14s %-14s\n", "eps_low", "eps_high",
              "final_entropy", "pass@k", "mean@k");
  for (const auto& cell : cells) {
    std::printf("%-10.4g %-10.4g %-14.6f %-14.4f %-14.4f\n", cell.eps_low,
                cell.eps_high, cell.final_entropy, cell.final_pass_at_k,
                cell.final_mean_at_k);
  }
  std::printf("grid written to %s/ablation.csv\n", out_dir.c_str());
  return kExitOk;
}

int cmd_validate(const std::string& what, int instances) {
  if (what == "gradients") {
    const clipsim::GradientCheckResult surrogate =
        clipsim::check_surrogate_gradients(instances, 20240601);
    std::printf("surrogate gradient vs finite differences: %d instances, "
                "max rel err %.3e -> %s\n",
                surrogate.instances_checked, surrogate.max_rel_error,
                surrogate.pass ? "pass" : "FAIL");
    const clipsim::GradientCheckResult entropy =
        clipsim::check_entropy_gradients(instances, 20240602);
    std::printf("entropy gradient vs finite differences: %d rows, "
                "max rel err %.3e -> %s\n",
                entropy.instances_checked, entropy.max_rel_error,
                entropy.pass ? "pass" : "FAIL");
    return surrogate.pass && entropy.pass ? kExitOk : kExitValidationFailure;
  }
  if (what == "residuals") {
    bool all_pass = true;
    for (const auto updater :
         {clipsim::UpdaterKind::kPg, clipsim::UpdaterKind::kNpg}) {
      const clipsim::ResidualCheckResult result =
          clipsim::check_residual_scaling(updater, instances, 20240603);
      std::printf("%s residual log-log slopes >= 1.8: %d of %d -> %s\n",
                  updater == clipsim::UpdaterKind::kPg ? "pg" : "npg",
                  result.passing, result.event_bearing,
                  result.pass ? "pass" : "FAIL");
      all_pass = all_pass && result.pass;
    }
    return all_pass ? kExitOk : kExitValidationFailure;
  }
  if (what == "conditions") {
    const auto scratch =
        std::filesystem::temp_directory_path() / "clipsim-validate-conditions";
    const clipsim::ConditionCheckResult result =
        clipsim::check_conditions(3, 200, scratch.string());
    std::filesystem::remove_all(scratch);
    std::printf("sign-condition rates over %lld records: q|X %.4f  q|Y %.4f  "
                "log|X %.4f  log|Y %.4f -> %s\n",
                static_cast<long long>(result.records), result.qcond_low_frac,
                result.qcond_high_frac, result.logcond_low_frac,
                result.logcond_high_frac, result.pass ? "pass" : "FAIL");
    return result.pass ? kExitOk : kExitValidationFailure;
  }
  std::fprintf(stderr, "unknown validate target: %s\n", what.c_str());
  return kExitConfigError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular simulator for clipped policy-optimization entropy "
               "dynamics"};
  app.require_subcommand(1);

  std::string config_path, out_dir, eps_lows, eps_highs, validate_what;
  std::uint64_t seed = 0;
  int instances = 0;

  CLI::App* simulate = app.add_subcommand("simulate", "Run one experiment");
  simulate->add_option("--config", config_path, "Run config (JSON)")
      ->required();
  simulate->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* seed_opt =
      simulate->add_option("--seed", seed, "Override the config seed");

  CLI::App* validate = app.add_subcommand(
      "validate", "Run built-in numerical validation suites");
  validate
      ->add_option("what", validate_what,
                   "One of: gradients, residuals, conditions")
      ->required();
  validate->add_option("--instances", instances, "Instance count")
      ->default_val(0);

  CLI::App* ablate =
      app.add_subcommand("ablate", "Run a clip-parameter grid");
  ablate->add_option("--config", config_path, "Base run config (JSON)")
      ->required();
  ablate->add_option("--eps-low", eps_lows, "Comma list, e.g. 0.1,0.2,off")
      ->required();
  ablate->add_option("--eps-high", eps_highs, "Comma list, e.g. 0.2,off")
      ->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      return cmd_simulate(config_path, out_dir, seed_opt->count() > 0, seed);
    }
    if (validate->parsed()) {
      if (instances <= 0) {
        instances = validate_what == "residuals" ? 20 : 100;
      }
      return cmd_validate(validate_what, instances);
    }
    if (ablate->parsed()) {
      return cmd_ablate(config_path, out_dir, eps_lows, eps_highs);
    }
  } catch (const clipsim::ConfigError& error) {
    std::fprintf(stderr, "config error: %s\n", error.what());
    return kExitConfigError;
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return kExitValidationFailure;
  }
  return kExitConfigError;
}
