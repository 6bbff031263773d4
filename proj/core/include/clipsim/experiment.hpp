#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clipsim/config.hpp"
#include "clipsim/theory.hpp"

namespace clipsim {

// Batch entropy estimator: mean over trajectories of the mean token-level
// entropy of the current policy at the visited states.
double batch_entropy_estimate(const PolicyTable& policy,
                              const std::vector<Trajectory>& trajectories);

struct EvalReport {
  std::int64_t step = 0;
  double mean_at_k = 0.0;
  double pass_at_k = 0.0;
  double batch_entropy = 0.0;
};

// Samples k responses per listed prompt (repeats allowed) and scores them
// with the verifiable source. pass@k >= mean@k always holds.
EvalReport evaluate_pass_mean(const PolicyTable& policy,
                              const StateSpace& space,
                              const RewardSource& source, int k,
                              const std::vector<int>& prompts, RngStream& rng);

// Per-condition counters over every (state, step) record with a defined
// conditional, for the sign-condition rate checks.
struct ConditionCounters {
  std::int64_t qcond_low_defined = 0, qcond_low_satisfied = 0;
  std::int64_t qcond_high_defined = 0, qcond_high_satisfied = 0;
  std::int64_t logcond_low_defined = 0, logcond_low_satisfied = 0;
  std::int64_t logcond_high_defined = 0, logcond_high_satisfied = 0;
};

struct RunResult {
  double initial_entropy = 0.0;  // d-weighted aggregate at step 0
  double final_entropy = 0.0;    // same aggregate for the trained policy
  double final_pass_at_k = -1.0;  // -1 when the run has no verifiable eval
  double final_mean_at_k = -1.0;
  ConditionCounters conditions;
  std::int64_t steps_logged = 0;
  std::string out_dir;
};

// Executes the configured loop and writes steps.csv, theory.csv, eval.csv
// and config.resolved into out_dir. Identical (config, seed) pairs produce
// byte-identical artifacts.
RunResult run_experiment(const RunConfig& config, const std::string& out_dir);

struct AblationCell {
  double eps_low = 0.0;
  double eps_high = 0.0;
  double final_entropy = 0.0;
  double final_pass_at_k = -1.0;
  double final_mean_at_k = -1.0;
};

// Runs the clip grid (one run directory per cell) and writes ablation.csv.
std::vector<AblationCell> ablate_clipping(const RunConfig& base,
                                          const std::vector<double>& eps_lows,
                                          const std::vector<double>& eps_highs,
                                          const std::string& out_dir);

// Builds the pi_old snapshot for idealized runs: a copy of the policy moved
// by the configured drift model (see DriftConfig).
PolicySnapshot make_drifted_snapshot(const PolicyTable& policy,
                                     const StateSpace& space,
                                     const RewardSource& source,
                                     const DriftConfig& drift, RngStream rng);

PolicyTable init_policy(const RunConfig& config, const StateSpace& space);

}  // namespace clipsim
