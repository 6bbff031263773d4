#pragma once

#include <span>
#include <vector>

#include "clipsim/rng.hpp"

namespace clipsim {

// Tabular softmax policy: one logit row per enumerated state. Probabilities
// are always derived through max-subtracted softmax, entropy is in nats.
struct PolicyTable {
  int state_count = 0;
  int action_count = 0;
  std::vector<double> logits;  // row-major, state_count x action_count

  PolicyTable() = default;
  PolicyTable(int states, int actions);

  static PolicyTable normal_init(int states, int actions, double std,
                                 RngStream& rng);

  double logit(int s, int a) const { return logits[row_offset(s) + a]; }
  void add_to_logit(int s, int a, double delta) {
    logits[row_offset(s) + a] += delta;
  }
  std::span<const double> row(int s) const {
    return {logits.data() + row_offset(s), static_cast<size_t>(action_count)};
  }
  std::span<double> row(int s) {
    return {logits.data() + row_offset(s), static_cast<size_t>(action_count)};
  }

  std::size_t row_offset(int s) const {
    return static_cast<std::size_t>(s) * action_count;
  }
};

// Frozen probabilities of an older policy; only ratios against it are ever
// needed, so probabilities (not logits) are stored.
struct PolicySnapshot {
  int state_count = 0;
  int action_count = 0;
  std::vector<double> probs;  // row-major

  PolicySnapshot() = default;
  explicit PolicySnapshot(const PolicyTable& policy);

  double prob(int s, int a) const {
    return probs[static_cast<std::size_t>(s) * action_count + a];
  }
  std::span<const double> row(int s) const {
    return {probs.data() + static_cast<std::size_t>(s) * action_count,
            static_cast<size_t>(action_count)};
  }
};

std::vector<double> softmax_probs(const PolicyTable& policy, int state);

// Writes the softmax of `row` into `out` (both length n). No allocation.
void softmax_into(std::span<const double> row, std::span<double> out);

double state_entropy(const PolicyTable& policy, int state);
double entropy_of_probs(std::span<const double> probs);

// d entropy / d logit for one state row; entries sum to zero.
std::vector<double> state_entropy_gradient(const PolicyTable& policy,
                                           int state);

int sample_action(const PolicyTable& policy, int state, RngStream& rng);
int sample_from_probs(std::span<const double> probs, RngStream& rng);

// pi(a|s) / pi_old(a|s); throws if the snapshot probability has degenerated.
double ratio(const PolicyTable& policy, const PolicySnapshot& snapshot,
             int state, int action);

}  // namespace clipsim
