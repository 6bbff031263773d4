#include "clipsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace clipsim {

namespace {

constexpr double kProbFloor = 1e-300;  // below this, p*log(p) is treated as 0

void check_state(int state, int state_count) {
  if (state < 0 || state >= state_count) {
    throw std::out_of_range("state index " + std::to_string(state) +
                            " out of range [0, " + std::to_string(state_count) +
                            ")");
  }
}

}  // namespace

PolicyTable::PolicyTable(int states, int actions)
    : state_count(states),
      action_count(actions),
      logits(static_cast<std::size_t>(states) * actions, 0.0) {
  if (states <= 0 || actions <= 0) {
    throw std::invalid_argument("PolicyTable dimensions must be positive");
  }
}

PolicyTable PolicyTable::normal_init(int states, int actions, double std,
                                     RngStream& rng) {
  PolicyTable policy(states, actions);
  for (auto& logit : policy.logits) logit = std * rng.normal();
  return policy;
}

PolicySnapshot::PolicySnapshot(const PolicyTable& policy)
    : state_count(policy.state_count),
      action_count(policy.action_count),
      probs(policy.logits.size()) {
  for (int s = 0; s < state_count; ++s) {
    softmax_into(policy.row(s),
                 {probs.data() + static_cast<std::size_t>(s) * action_count,
                  static_cast<std::size_t>(action_count)});
  }
}

void softmax_into(std::span<const double> row, std::span<double> out) {
  const double max_logit = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (std::size_t a = 0; a < row.size(); ++a) {
    out[a] = std::exp(row[a] - max_logit);
    sum += out[a];
  }
  for (std::size_t a = 0; a < row.size(); ++a) out[a] /= sum;
}

std::vector<double> softmax_probs(const PolicyTable& policy, int state) {
  check_state(state, policy.state_count);
  std::vector<double> probs(policy.action_count);
  softmax_into(policy.row(state), probs);
  return probs;
}

double entropy_of_probs(std::span<const double> probs) {
  double entropy = 0.0;
  for (const double p : probs) {
    if (p > kProbFloor) entropy -= p * std::log(p);
  }
  return entropy;
}

double state_entropy(const PolicyTable& policy, int state) {
  return entropy_of_probs(softmax_probs(policy, state));
}

std::vector<double> state_entropy_gradient(const PolicyTable& policy,
                                           int state) {
  const std::vector<double> probs = softmax_probs(policy, state);
  double mean_log = 0.0;
  std::vector<double> logs(probs.size());
  for (std::size_t a = 0; a < probs.size(); ++a) {
    logs[a] = probs[a] > kProbFloor ? std::log(probs[a]) : 0.0;
    mean_log += probs[a] * logs[a];
  }
  std::vector<double> grad(probs.size());
  for (std::size_t a = 0; a < probs.size(); ++a) {
    grad[a] = -probs[a] * (logs[a] - mean_log);
  }
  return grad;
}

int sample_from_probs(std::span<const double> probs, RngStream& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
    cdf += probs[a];
    if (u < cdf) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size()) - 1;
}

int sample_action(const PolicyTable& policy, int state, RngStream& rng) {
  return sample_from_probs(softmax_probs(policy, state), rng);
}

double ratio(const PolicyTable& policy, const PolicySnapshot& snapshot,
             int state, int action) {
  check_state(state, policy.state_count);
  const double old_prob = snapshot.prob(state, action);
  if (old_prob < kProbFloor) {
    throw std::domain_error("degenerate snapshot probability at state " +
                            std::to_string(state) + ", action " +
                            std::to_string(action));
  }
  return softmax_probs(policy, state)[action] / old_prob;
}

}  // namespace clipsim
