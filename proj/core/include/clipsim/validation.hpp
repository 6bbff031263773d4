#pragma once

#include <cstdint>
#include <vector>

#include "clipsim/clipping.hpp"
#include "clipsim/config.hpp"
#include "clipsim/experiment.hpp"
#include "clipsim/theory.hpp"

namespace clipsim {

// A self-contained random test instance: a small tree, a random policy, a
// snapshot displaced from it, and a batch of groups rolled out under the
// snapshot with centered random rewards.
struct RandomInstance {
  TreeSpec tree;
  StateSpace space;
  PolicyTable policy;
  PolicySnapshot snapshot;
  std::vector<RolloutGroup> groups;
  ClipConfig clip;
};

struct InstanceOptions {
  int vocab_size = 5;
  int horizon = 2;
  int groups = 1;
  int group_size = 4;
  double logit_std = 1.0;
  double gap_std = 0.35;  // snapshot logit displacement
  ClipConfig clip = ClipConfig::symmetric(0.2);
};

RandomInstance make_random_instance(const InstanceOptions& options,
                                    RngStream& rng);

// True when any batch-token ratio sits within `margin` of a clip threshold
// (the objective is non-differentiable there).
bool near_clip_boundary(const RandomInstance& instance, double margin);

struct GradientCheckResult {
  int instances_checked = 0;
  int boundary_redraws = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Central finite differences of surrogate_value against surrogate_gradient
// over random instances with mixed clip configs.
GradientCheckResult check_surrogate_gradients(int instances,
                                              std::uint64_t seed);

// Central finite differences of state_entropy against state_entropy_gradient
// over random rows of dimension 2..16.
GradientCheckResult check_entropy_gradients(int rows, std::uint64_t seed);

struct ResidualCheckResult {
  std::vector<double> slopes;
  int event_bearing = 0;
  int passing = 0;  // slope >= 1.8
  bool pass = false;
};

// residual_scan over random event-bearing (policy, snapshot) instances;
// certifies the O(eta^2) remainder of the first-order predictions.
ResidualCheckResult check_residual_scaling(UpdaterKind updater, int instances,
                                           std::uint64_t seed);

struct ConditionCheckResult {
  double qcond_low_frac = 0.0;
  double qcond_high_frac = 0.0;
  double logcond_low_frac = 0.0;
  double logcond_high_frac = 0.0;
  std::int64_t records = 0;
  bool pass = false;  // every fraction >= 0.95
};

ConditionCheckResult summarize_conditions(const ConditionCounters& counters);

// Runs the standard random-reward symmetric-clip idealized-pg setup for a few
// seeds (writing into scratch directories under out_root) and checks that the
// first-order sign conditions hold in at least 95% of (state, step) records.
ConditionCheckResult check_conditions(int seeds, std::int64_t steps,
                                      const std::string& out_root);

// The standard random-reward dynamics config used by the validation commands:
// Bernoulli(0.5) rewards, idealized pg, default desk-scale tree.
RunConfig standard_random_reward_config();

}  // namespace clipsim
