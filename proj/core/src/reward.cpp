#include "clipsim/reward.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace clipsim {

RewardSource RewardSource::bernoulli(double p) {
  RewardSource source;
  source.kind = RewardKind::kBernoulli;
  source.bernoulli_p = p;
  source.validate();
  return source;
}

RewardSource RewardSource::gaussian() {
  RewardSource source;
  source.kind = RewardKind::kGaussian;
  return source;
}

RewardSource RewardSource::verifiable(
    std::vector<std::pair<int, std::vector<int>>> targets) {
  RewardSource source;
  source.kind = RewardKind::kVerifiable;
  source.targets = std::move(targets);
  source.validate();
  return source;
}

void RewardSource::validate() const {
  if (kind == RewardKind::kBernoulli &&
      (bernoulli_p < 0.0 || bernoulli_p > 1.0)) {
    throw std::invalid_argument("bernoulli p must be in [0, 1]");
  }
  if (kind == RewardKind::kVerifiable && targets.empty()) {
    throw std::invalid_argument("verifiable source needs at least one target");
  }
}

double draw_reward(const RewardSource& source, const Trajectory& trajectory,
                   RngStream& rng) {
  switch (source.kind) {
    case RewardKind::kBernoulli:
      return rng.bernoulli(source.bernoulli_p) ? 1.0 : 0.0;
    case RewardKind::kGaussian:
      return rng.normal();
    case RewardKind::kVerifiable:
      for (const auto& [prompt, tokens] : source.targets) {
        if (prompt == trajectory.prompt && tokens == trajectory.tokens) {
          return 1.0;
        }
      }
      return 0.0;
  }
  return 0.0;
}

void AdvantageModel::validate() const {
  if (!(nu > 0.0) || nu > 0.5) {
    throw std::invalid_argument("advantage model nu must be in (0, 1/2]");
  }
  if (!(mu > 0.0)) {
    throw std::invalid_argument("advantage model mu must be positive");
  }
}

double idealized_advantage(const AdvantageModel& model, RngStream& rng) {
  const double u = rng.uniform();
  if (u < model.nu) return model.mu;
  if (u < 2.0 * model.nu) return -model.mu;
  return 0.0;
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument(
        "group advantages need at least 2 rewards per group");
  }
  const double mean =
      std::accumulate(rewards.begin(), rewards.end(), 0.0) /
      static_cast<double>(rewards.size());
  std::vector<double> advantages(rewards.size());
  std::transform(rewards.begin(), rewards.end(), advantages.begin(),
                 [mean](double r) { return r - mean; });
  return advantages;
}

RolloutGroup sample_group(const PolicyTable& policy, const StateSpace& space,
                          const RewardSource& source, int group_size,
                          RngStream& rng) {
  if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
  RolloutGroup group;
  group.prompt = sample_prompt(space, rng);
  group.trajectories.reserve(group_size);
  group.rewards.reserve(group_size);
  for (int i = 0; i < group_size; ++i) {
    group.trajectories.push_back(
        rollout_from_prompt(policy, space, group.prompt, rng));
    group.rewards.push_back(draw_reward(source, group.trajectories.back(), rng));
  }
  group.advantages = group_advantages(group.rewards);
  return group;
}

}  // namespace clipsim
