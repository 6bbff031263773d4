#include "clipsim/validation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "clipsim/experiment.hpp"

namespace clipsim {

namespace {

double max_abs(const std::vector<double>& values) {
  double result = 0.0;
  for (const double v : values) result = std::max(result, std::abs(v));
  return result;
}

}  // namespace

RandomInstance make_random_instance(const InstanceOptions& options,
                                    RngStream& rng) {
  TreeSpec tree{options.vocab_size, options.horizon, 1, {}};
  StateSpace space = enumerate_states(tree);
  PolicyTable policy = PolicyTable::normal_init(
      space.total_states(), tree.vocab_size, options.logit_std, rng);
  PolicyTable old_policy = policy;
  for (auto& logit : old_policy.logits) logit += options.gap_std * rng.normal();
  PolicySnapshot snapshot(old_policy);

  const RewardSource source = RewardSource::bernoulli(0.5);
  std::vector<RolloutGroup> groups;
  groups.reserve(options.groups);
  for (int g = 0; g < options.groups; ++g) {
    groups.push_back(
        sample_group(old_policy, space, source, options.group_size, rng));
  }
  return RandomInstance{tree,     std::move(space), std::move(policy),
                        std::move(snapshot), std::move(groups), options.clip};
}

bool near_clip_boundary(const RandomInstance& instance, double margin) {
  const double lo = instance.clip.lower_threshold();
  const double hi = instance.clip.upper_threshold();
  for (const auto& group : instance.groups) {
    for (const auto& traj : group.trajectories) {
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const double r = ratio(instance.policy, instance.snapshot,
                               traj.state_path[t], traj.tokens[t]);
        if (std::abs(r - lo) < margin) return true;
        if (std::isfinite(hi) && std::abs(r - hi) < margin) return true;
      }
    }
  }
  return false;
}

GradientCheckResult check_surrogate_gradients(int instances,
                                              std::uint64_t seed) {
  const ClipConfig clips[] = {
      ClipConfig::symmetric(0.2), ClipConfig{0.1, 0.3},
      ClipConfig{kClipLowOff, 0.2}, ClipConfig{0.2, kClipHighOff},
      ClipConfig{0.3, 0.1}};
  const double fd_step = 1e-5;
  const double boundary_margin = 1e-6;

  RngStream rng(seed);
  GradientCheckResult result;
  for (int i = 0; i < instances; ++i) {
    InstanceOptions options;
    options.clip = clips[i % (sizeof(clips) / sizeof(clips[0]))];
    RandomInstance instance = make_random_instance(options, rng);
    int redraws = 0;
    while (near_clip_boundary(instance, boundary_margin)) {
      instance = make_random_instance(options, rng);
      if (++redraws > 100) {
        throw std::runtime_error("could not draw a non-boundary instance");
      }
    }
    result.boundary_redraws += redraws;

    const std::vector<double> analytic = surrogate_gradient(
        instance.policy, instance.snapshot, instance.groups, instance.clip);
    PolicyTable probe = instance.policy;
    double max_diff = 0.0;
    for (std::size_t j = 0; j < probe.logits.size(); ++j) {
      const double saved = probe.logits[j];
      probe.logits[j] = saved + fd_step;
      const double up = surrogate_value(probe, instance.snapshot,
                                        instance.groups, instance.clip);
      probe.logits[j] = saved - fd_step;
      const double down = surrogate_value(probe, instance.snapshot,
                                          instance.groups, instance.clip);
      probe.logits[j] = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      max_diff = std::max(max_diff, std::abs(fd - analytic[j]));
    }
    const double scale = std::max(max_abs(analytic), 1e-12);
    result.max_rel_error = std::max(result.max_rel_error, max_diff / scale);
    result.instances_checked += 1;
  }
  result.pass = result.max_rel_error <= 1e-4;
  return result;
}

GradientCheckResult check_entropy_gradients(int rows, std::uint64_t seed) {
  const double fd_step = 1e-6;
  RngStream rng(seed);
  GradientCheckResult result;
  for (int i = 0; i < rows; ++i) {
    const int dim = 2 + static_cast<int>(rng.next_u64() % 15);  // 2..16
    PolicyTable policy = PolicyTable::normal_init(1, dim, 1.5, rng);
    const std::vector<double> analytic = state_entropy_gradient(policy, 0);
    double max_diff = 0.0;
    for (int a = 0; a < dim; ++a) {
      const double saved = policy.logits[a];
      policy.logits[a] = saved + fd_step;
      const double up = state_entropy(policy, 0);
      policy.logits[a] = saved - fd_step;
      const double down = state_entropy(policy, 0);
      policy.logits[a] = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      max_diff = std::max(max_diff, std::abs(fd - analytic[a]));
    }
    const double scale = std::max(max_abs(analytic), 1e-12);
    result.max_rel_error = std::max(result.max_rel_error, max_diff / scale);
    result.instances_checked += 1;
  }
  result.pass = result.max_rel_error <= 1e-6;
  return result;
}

ResidualCheckResult check_residual_scaling(UpdaterKind updater, int instances,
                                           std::uint64_t seed) {
  if (updater == UpdaterKind::kGrpoSgd) {
    throw std::invalid_argument("residual scaling needs an idealized updater");
  }
  const std::vector<double> etas = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  const AdvantageModel model{0.5, 0.5};

  RngStream rng(seed);
  ResidualCheckResult result;
  for (int i = 0; i < instances; ++i) {
    InstanceOptions options;
    options.groups = 0;  // only the policy pair matters here
    int redraws = 0;
    while (true) {
      RandomInstance instance = make_random_instance(options, rng);
      const VisitationMeasure visitation =
          visitation_exact(instance.snapshot, instance.space);
      const ResidualScanResult scan =
          residual_scan(instance.policy, instance.snapshot, visitation, model,
                        instance.clip, etas, updater);
      if (scan.vacuous) {
        if (++redraws > 200) {
          throw std::runtime_error("could not draw an event-bearing instance");
        }
        continue;
      }
      result.event_bearing += 1;
      result.slopes.push_back(scan.loglog_slope);
      if (scan.loglog_slope >= 1.8) result.passing += 1;
      break;
    }
  }
  const int required = (instances * 9 + 9) / 10;  // ceil(0.9 n)
  result.pass = result.passing >= required;
  return result;
}

ConditionCheckResult summarize_conditions(const ConditionCounters& counters) {
  ConditionCheckResult result;
  auto frac = [](std::int64_t satisfied, std::int64_t defined) {
    return defined > 0 ? static_cast<double>(satisfied) /
                             static_cast<double>(defined)
                       : 1.0;
  };
  result.qcond_low_frac =
      frac(counters.qcond_low_satisfied, counters.qcond_low_defined);
  result.qcond_high_frac =
      frac(counters.qcond_high_satisfied, counters.qcond_high_defined);
  result.logcond_low_frac =
      frac(counters.logcond_low_satisfied, counters.logcond_low_defined);
  result.logcond_high_frac =
      frac(counters.logcond_high_satisfied, counters.logcond_high_defined);
  result.records = counters.qcond_low_defined + counters.qcond_high_defined +
                   counters.logcond_low_defined + counters.logcond_high_defined;
  result.pass = result.qcond_low_frac >= 0.95 &&
                result.qcond_high_frac >= 0.95 &&
                result.logcond_low_frac >= 0.95 &&
                result.logcond_high_frac >= 0.95;
  return result;
}

RunConfig standard_random_reward_config() {
  RunConfig config;
  config.tree = TreeSpec{6, 3, 4, {}};
  config.policy_init = {PolicyInitConfig::Kind::kNormal, 1.3};
  config.reward = RewardSource::bernoulli(0.5);
  config.clip = ClipConfig::symmetric(0.2);
  config.updater = UpdaterKind::kPg;
  config.advantage = AdvantageModel{0.5, 0.5};
  config.steps = 500;
  config.snapshot_period = 1;
  config.eta = 3.0;
  config.seed = 1;
  return config;
}

ConditionCheckResult check_conditions(int seeds, std::int64_t steps,
                                      const std::string& out_root) {
  ConditionCounters counters;
  for (int s = 0; s < seeds; ++s) {
    RunConfig config = standard_random_reward_config();
    config.steps = steps;
    config.seed = static_cast<std::uint64_t>(s + 1);
    const RunResult run = run_experiment(
        config, out_root + "/conditions_seed_" + std::to_string(s + 1));
    counters.qcond_low_defined += run.conditions.qcond_low_defined;
    counters.qcond_low_satisfied += run.conditions.qcond_low_satisfied;
    counters.qcond_high_defined += run.conditions.qcond_high_defined;
    counters.qcond_high_satisfied += run.conditions.qcond_high_satisfied;
    counters.logcond_low_defined += run.conditions.logcond_low_defined;
    counters.logcond_low_satisfied += run.conditions.logcond_low_satisfied;
    counters.logcond_high_defined += run.conditions.logcond_high_defined;
    counters.logcond_high_satisfied += run.conditions.logcond_high_satisfied;
  }
  return summarize_conditions(counters);
}

}  // namespace clipsim
