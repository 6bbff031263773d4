#pragma once

// Test-side oracles, kept independent of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "clipsim/clipping.hpp"
#include "clipsim/policy.hpp"

namespace oracles {

// Central finite difference of any scalar function of the policy logits.
template <typename F>
double central_diff(clipsim::PolicyTable& policy, std::size_t index, double h,
                    F value) {
  const double saved = policy.logits[index];
  policy.logits[index] = saved + h;
  const double up = value(policy);
  policy.logits[index] = saved - h;
  const double down = value(policy);
  policy.logits[index] = saved;
  return (up - down) / (2.0 * h);
}

// Piecewise form of one clipped term: the min is expanded by advantage sign
// into explicit ratio regions.
inline double piecewise_term(double r, double adv, double lo, double hi) {
  if (adv >= 0.0) {
    return r > hi ? hi * adv : r * adv;
  }
  return r < lo ? lo * adv : r * adv;
}

inline double piecewise_surrogate(const clipsim::PolicyTable& policy,
                                  const clipsim::PolicySnapshot& snapshot,
                                  const std::vector<clipsim::RolloutGroup>& groups,
                                  const clipsim::ClipConfig& clip) {
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      const double adv = group.advantages[i];
      double traj_sum = 0.0;
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const int s = traj.state_path[t];
        const int y = traj.tokens[t];
        const double r = clipsim::softmax_probs(policy, s)[y] /
                         snapshot.prob(s, y);
        traj_sum += piecewise_term(r, adv, lo, hi);
      }
      total += traj_sum / static_cast<double>(traj.tokens.size());
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Gradient of the piecewise form; the active-region test mirrors the
// expansion above (ties fall in the linear arm).
inline std::vector<double> piecewise_surrogate_gradient(
    const clipsim::PolicyTable& policy, const clipsim::PolicySnapshot& snapshot,
    const std::vector<clipsim::RolloutGroup>& groups,
    const clipsim::ClipConfig& clip) {
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  std::vector<double> grad(policy.logits.size(), 0.0);
  std::size_t count = 0;
  for (const auto& group : groups) count += group.trajectories.size();
  const double inv_n = 1.0 / static_cast<double>(count);
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      const double adv = group.advantages[i];
      if (adv == 0.0) continue;
      const double weight = inv_n / static_cast<double>(traj.tokens.size());
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const int s = traj.state_path[t];
        const int y = traj.tokens[t];
        const std::vector<double> probs = clipsim::softmax_probs(policy, s);
        const double r = probs[y] / snapshot.prob(s, y);
        const bool linear_arm = adv >= 0.0 ? !(r > hi) : !(r < lo);
        if (!linear_arm) continue;
        const double coeff = weight * adv * r;
        for (int a = 0; a < policy.action_count; ++a) {
          grad[policy.row_offset(s) + a] +=
              coeff * ((a == y ? 1.0 : 0.0) - probs[a]);
        }
      }
    }
  }
  return grad;
}

inline double max_abs(const std::vector<double>& values) {
  double result = 0.0;
  for (const double v : values) result = std::max(result, std::abs(v));
  return result;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double result = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    result = std::max(result, std::abs(a[i] - b[i]));
  }
  return result;
}

}  // namespace oracles
