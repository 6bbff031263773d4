#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "clipsim/clipping.hpp"
#include "clipsim/reward.hpp"
#include "clipsim/theory.hpp"
#include "clipsim/tree_env.hpp"

namespace clipsim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PolicyInitConfig {
  enum class Kind { kZeros, kNormal } kind = Kind::kNormal;
  double std = 1.3;
};

// How the pi_old snapshot is separated from the current policy in idealized
// runs. The exact pg/npg dynamics are stationary at pi = pi_old (no clip
// events, zero update), so the inner-loop drift of real GRPO is modelled on
// the snapshot side. The default (grpo) runs a real inner loop on a shadow
// copy: momentum-free Adam on the clipped surrogate of one sampled batch,
// braked at its own eps so sampled tokens hold at the brake while unsampled
// ones keep drifting, which is the event structure large-vocabulary runs
// show. Alternatives: unclipped REINFORCE steps, or Gaussian logit noise.
struct DriftConfig {
  enum class Kind { kGrpo, kReinforce, kGaussian } kind = Kind::kGrpo;
  int groups = 16;
  int group_size = 8;
  int steps = 24;
  double learning_rate = 0.04;  // Adam steps, so roughly logit units per step
  double eps = 0.1;             // symmetric brake for the grpo kind
  double gaussian_std = 0.25;
};

struct EvalConfig {
  int k = 8;
  int interval = 50;
  int prompt_repeats = 16;
};

struct RunConfig {
  TreeSpec tree{6, 3, 4, {}};
  PolicyInitConfig policy_init;
  RewardSource reward = RewardSource::bernoulli(0.5);
  ClipConfig clip = ClipConfig::symmetric(0.2);
  UpdaterKind updater = UpdaterKind::kPg;
  AdvantageModel advantage{0.5, 0.5};
  OptimizerConfig optimizer;
  DriftConfig drift;
  std::int64_t steps = 500;
  int snapshot_period = 1;  // idealized updaters; grpo-sgd refreshes per rollout
  double eta = 3.0;
  std::uint64_t seed = 1;
  EvalConfig eval;
  int log_batch = 128;

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

// The default verifiable task: a response is correct when the opening token
// is admissible (t0 < ceil(2V/3)) and the last token states the answer
// (sum of the earlier tokens + prompt) mod V. Intermediate tokens are free
// reasoning steps, so one answer rule admits many solution paths while some
// openings are simply wrong.
std::vector<std::pair<int, std::vector<int>>> default_verifiable_targets(
    const TreeSpec& tree);

// Fully-resolved echo of the config (all defaults materialized); written next
// to the run outputs so a run can be reproduced from its artifacts alone.
std::string resolved_config_json(const RunConfig& config);

}  // namespace clipsim
