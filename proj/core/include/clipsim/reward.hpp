#pragma once

#include <vector>

#include "clipsim/rng.hpp"
#include "clipsim/tree_env.hpp"

namespace clipsim {

enum class RewardKind { kBernoulli, kGaussian, kVerifiable };

// Reward oracle: random sources ignore the trajectory entirely, the
// verifiable source scores exact (prompt, token sequence) matches.
struct RewardSource {
  RewardKind kind = RewardKind::kBernoulli;
  double bernoulli_p = 0.5;
  // One entry per target: a prompt index and the full token sequence.
  std::vector<std::pair<int, std::vector<int>>> targets;

  static RewardSource bernoulli(double p);
  static RewardSource gaussian();
  static RewardSource verifiable(
      std::vector<std::pair<int, std::vector<int>>> targets);

  void validate() const;
};

double draw_reward(const RewardSource& source, const Trajectory& trajectory,
                   RngStream& rng);

// Symmetric three-atom advantage law: +mu and -mu with probability nu each,
// zero otherwise. E[A] = 0 by construction.
struct AdvantageModel {
  double mu = 0.5;
  double nu = 0.5;

  void validate() const;
};

double idealized_advantage(const AdvantageModel& model, RngStream& rng);

// Group-mean-centered advantages, no standard-deviation normalization.
std::vector<double> group_advantages(const std::vector<double>& rewards);

// K responses to one prompt with their rewards and centered advantages.
struct RolloutGroup {
  int prompt = 0;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

RolloutGroup sample_group(const PolicyTable& policy, const StateSpace& space,
                          const RewardSource& source, int group_size,
                          RngStream& rng);

}  // namespace clipsim
