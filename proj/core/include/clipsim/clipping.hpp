#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "clipsim/policy.hpp"
#include "clipsim/reward.hpp"
#include "clipsim/tree_env.hpp"

namespace clipsim {

// eps_low = 1.0 disables the lower clip (threshold 0 is never reached by a
// positive ratio); eps_high = +inf disables the upper clip.
inline constexpr double kClipLowOff = 1.0;
inline constexpr double kClipHighOff = std::numeric_limits<double>::infinity();

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;

  double lower_threshold() const { return 1.0 - eps_low; }
  double upper_threshold() const { return 1.0 + eps_high; }
  void validate() const;

  static ClipConfig symmetric(double eps) { return {eps, eps}; }
};

// Per-state clip events: X = {ratio < 1 - eps_low}, Y = {ratio > 1 + eps_high}
// (strict inequalities, ties count as unclipped). Masses are taken under the
// current policy pi_k.
struct ClipEventReport {
  std::vector<std::int8_t> h;  // h(a) = 1_X(a) - 1_Y(a)
  double p = 0.0;
  double q = 0.0;

  bool in_x(int a) const { return h[a] > 0; }
  bool in_y(int a) const { return h[a] < 0; }
  bool empty() const { return p == 0.0 && q == 0.0; }
};

ClipEventReport detect_clip_events(const PolicyTable& policy,
                                   const PolicySnapshot& snapshot, int state,
                                   const ClipConfig& clip);

// Clipped surrogate over a batch of groups: mean over trajectories of
// (1/T) sum_t min(r_t A, clip(r_t) A), ratios taken against the snapshot.
double surrogate_value(const PolicyTable& policy, const PolicySnapshot& snapshot,
                       const std::vector<RolloutGroup>& groups,
                       const ClipConfig& clip);

// Exact gradient of surrogate_value with respect to every logit. Tokens in
// the flat region of the min contribute nothing.
std::vector<double> surrogate_gradient(const PolicyTable& policy,
                                       const PolicySnapshot& snapshot,
                                       const std::vector<RolloutGroup>& groups,
                                       const ClipConfig& clip);

// REINFORCE estimator on the same normalization as the surrogate:
// mean over trajectories of (1/T) sum_t grad log pi(y_t|s_t) * A.
std::vector<double> reinforce_gradient(const PolicyTable& policy,
                                       const std::vector<RolloutGroup>& groups);

// One exact expected policy-gradient step on the clipped objective under the
// symmetric random-advantage law:
//   dtheta(s,a) = mu nu eta d(s) pi_k(a|s) (h(a) - E_{a'~pi_k}[h(a')]).
PolicyTable pg_step(const PolicyTable& policy, const PolicySnapshot& snapshot,
                    const AdvantageModel& model, const ClipConfig& clip,
                    double eta, const VisitationMeasure& visitation);

// One exact natural-policy-gradient step: per state with delta = mu nu eta d(s),
//   pi_{k+1}(a|s) = pi_k(a|s) exp(delta h(a)) / Z,
//   Z = exp(delta) p + exp(-delta) q + (1 - p - q).
PolicyTable npg_step(const PolicyTable& policy, const PolicySnapshot& snapshot,
                     const AdvantageModel& model, const ClipConfig& clip,
                     double eta, const VisitationMeasure& visitation);

struct OptimizerConfig {
  int group_size = 8;
  int rollout_batch = 512;  // trajectories collected per outer iteration
  int minibatch = 256;      // trajectories per inner update
  int updates_per_rollout = 16;
  double learning_rate = 5e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  void ensure_size(std::size_t n);
};

// One bias-corrected adaptive-moment ascent step on `params`.
void adam_ascent_step(AdamState& state, const std::vector<double>& grad,
                      double learning_rate, double beta1, double beta2,
                      double epsilon, std::vector<double>& params);

struct TrainStepLog {
  std::int64_t step = 0;
  double entropy_estimate = 0.0;
  double clip_frac_low = 0.0;
  double clip_frac_high = 0.0;
  double surrogate = 0.0;
  double grad_norm = 0.0;
  double reward_mean = 0.0;
};

// Called before each inner update with the pre-update policy and the rollout
// snapshot; used by the harness to record theory statistics.
using InnerStepObserver = std::function<void(
    std::int64_t step, const PolicyTable&, const PolicySnapshot&)>;

// One outer GRPO iteration: snapshot the policy, collect groups under it,
// center the rewards, then run the configured number of Adam ascent steps on
// the clipped surrogate over shuffled trajectory minibatches.
std::vector<TrainStepLog> grpo_train_epoch(
    PolicyTable& policy, const StateSpace& space, const RewardSource& source,
    const ClipConfig& clip, const OptimizerConfig& opt, AdamState& adam,
    RngStream& rng, std::int64_t step_offset = 0,
    const InnerStepObserver& observer = {});

std::pair<PolicyTable, std::vector<TrainStepLog>> grpo_train_epoch(
    const PolicyTable& policy, const StateSpace& space,
    const RewardSource& source, const ClipConfig& clip,
    const OptimizerConfig& opt, RngStream& rng);

}  // namespace clipsim
