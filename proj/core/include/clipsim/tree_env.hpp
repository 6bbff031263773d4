#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clipsim/policy.hpp"
#include "clipsim/rng.hpp"

namespace clipsim {

// Prefix-tree token-generation MDP: each prompt roots a complete V-ary tree,
// responses are fixed-length token sequences, transitions append the token.
struct TreeSpec {
  int vocab_size = 2;
  int horizon = 1;
  int prompt_count = 1;
  std::vector<double> prompt_weights;  // empty means uniform

  void validate() const;
};

// Bijection between (prompt, prefix) and dense state indices. Ordering is
// prompt-major, then breadth-first by prefix length, then lexicographic by
// tokens: within a prompt, the prefix (t0..t{L-1}) sits at
// level_start(L) + sum_i t_i * V^(L-1-i).
class StateSpace {
 public:
  StateSpace(const TreeSpec& spec, std::int64_t exact_budget);

  const TreeSpec& spec() const { return spec_; }
  int total_states() const { return total_states_; }
  int states_per_prompt() const { return states_per_prompt_; }

  int root_state(int prompt) const { return prompt * states_per_prompt_; }
  // State reached from `state` by emitting `action`; only valid below the
  // last generation level (depth < horizon - 1).
  int child_state(int state, int action) const;
  int depth_of(int state) const;
  int prompt_of(int state) const { return state / states_per_prompt_; }

  std::vector<int> prefix_of(int state) const;  // tokens along the path
  int state_of_prefix(int prompt, std::span<const int> tokens) const;

  double prompt_weight(int prompt) const { return prompt_weights_[prompt]; }
  const std::vector<double>& prompt_weights() const { return prompt_weights_; }

 private:
  TreeSpec spec_;
  std::vector<double> prompt_weights_;
  std::vector<std::int64_t> level_start_;  // horizon + 1 entries
  int states_per_prompt_ = 0;
  int total_states_ = 0;
};

constexpr std::int64_t kDefaultExactBudget = 200000;

// Throws if the enumeration exceeds the exact-mode budget (use Monte Carlo
// visitation instead in that regime).
StateSpace enumerate_states(const TreeSpec& spec,
                            std::int64_t exact_budget = kDefaultExactBudget);

struct Trajectory {
  int prompt = 0;
  std::vector<int> tokens;        // length horizon
  std::vector<int> state_path;    // generation state before each token
  std::vector<double> old_logprobs;  // log prob of each token under the actor
};

Trajectory rollout(const PolicyTable& policy, const StateSpace& space,
                   RngStream& rng);
Trajectory rollout_from_prompt(const PolicyTable& policy,
                               const StateSpace& space, int prompt,
                               RngStream& rng);
int sample_prompt(const StateSpace& space, RngStream& rng);

// d^pi(s): expected visit count per generation state; sums to `horizon`.
struct VisitationMeasure {
  std::vector<double> mass;
  double total() const;
};

VisitationMeasure visitation_exact(const PolicyTable& policy,
                                   const StateSpace& space);
VisitationMeasure visitation_exact(const PolicySnapshot& snapshot,
                                   const StateSpace& space);
VisitationMeasure visitation_mc(const PolicyTable& policy,
                                const StateSpace& space, std::int64_t samples,
                                RngStream& rng);

}  // namespace clipsim
