#include "clipsim/tree_env.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace clipsim {

void TreeSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (prompt_count < 1) {
    throw std::invalid_argument("prompt_count must be >= 1");
  }
  if (!prompt_weights.empty()) {
    if (static_cast<int>(prompt_weights.size()) != prompt_count) {
      throw std::invalid_argument("prompt_weights size != prompt_count");
    }
    double sum = 0.0;
    for (const double w : prompt_weights) {
      if (w < 0.0) throw std::invalid_argument("negative prompt weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("prompt_weights must sum to 1");
    }
  }
}

StateSpace::StateSpace(const TreeSpec& spec, std::int64_t exact_budget)
    : spec_(spec) {
  spec_.validate();
  level_start_.assign(spec_.horizon + 1, 0);
  std::int64_t level_size = 1;
  for (int level = 0; level < spec_.horizon; ++level) {
    level_start_[level + 1] = level_start_[level] + level_size;
    level_size *= spec_.vocab_size;
  }
  const std::int64_t per_prompt = level_start_[spec_.horizon];
  const std::int64_t total = per_prompt * spec_.prompt_count;
  if (total > exact_budget) {
    throw std::length_error(
        "exact-mode state enumeration needs " + std::to_string(total) +
        " states, over the budget of " + std::to_string(exact_budget) +
        "; use Monte Carlo visitation for trees of this size");
  }
  states_per_prompt_ = static_cast<int>(per_prompt);
  total_states_ = static_cast<int>(total);
  prompt_weights_ = spec_.prompt_weights;
  if (prompt_weights_.empty()) {
    prompt_weights_.assign(spec_.prompt_count, 1.0 / spec_.prompt_count);
  }
}

int StateSpace::child_state(int state, int action) const {
  const int prompt = prompt_of(state);
  const std::int64_t local = state - root_state(prompt);
  const int depth = depth_of(state);
  const std::int64_t rank_in_level = local - level_start_[depth];
  const std::int64_t child_local =
      level_start_[depth + 1] + rank_in_level * spec_.vocab_size + action;
  return root_state(prompt) + static_cast<int>(child_local);
}

int StateSpace::depth_of(int state) const {
  const std::int64_t local = state - root_state(prompt_of(state));
  int depth = 0;
  while (depth + 1 < spec_.horizon && local >= level_start_[depth + 1]) {
    ++depth;
  }
  return depth;
}

std::vector<int> StateSpace::prefix_of(int state) const {
  const int depth = depth_of(state);
  std::int64_t rank =
      state - root_state(prompt_of(state)) - level_start_[depth];
  std::vector<int> tokens(depth);
  for (int i = depth - 1; i >= 0; --i) {
    tokens[i] = static_cast<int>(rank % spec_.vocab_size);
    rank /= spec_.vocab_size;
  }
  return tokens;
}

int StateSpace::state_of_prefix(int prompt, std::span<const int> tokens) const {
  if (prompt < 0 || prompt >= spec_.prompt_count) {
    throw std::out_of_range("prompt index out of range");
  }
  const int depth = static_cast<int>(tokens.size());
  if (depth >= spec_.horizon) {
    throw std::out_of_range("prefix length must be < horizon");
  }
  std::int64_t rank = 0;
  for (const int token : tokens) {
    if (token < 0 || token >= spec_.vocab_size) {
      throw std::out_of_range("token out of range");
    }
    rank = rank * spec_.vocab_size + token;
  }
  return root_state(prompt) + static_cast<int>(level_start_[depth] + rank);
}

StateSpace enumerate_states(const TreeSpec& spec, std::int64_t exact_budget) {
  return StateSpace(spec, exact_budget);
}

namespace {

void check_policy_matches(const PolicyTable& policy, const StateSpace& space) {
  if (policy.state_count != space.total_states() ||
      policy.action_count != space.spec().vocab_size) {
    throw std::invalid_argument(
        "policy dimensions do not match the tree state space");
  }
}

}  // namespace

int sample_prompt(const StateSpace& space, RngStream& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  const auto& weights = space.prompt_weights();
  for (std::size_t x = 0; x + 1 < weights.size(); ++x) {
    cdf += weights[x];
    if (u < cdf) return static_cast<int>(x);
  }
  return static_cast<int>(weights.size()) - 1;
}

Trajectory rollout_from_prompt(const PolicyTable& policy,
                               const StateSpace& space, int prompt,
                               RngStream& rng) {
  check_policy_matches(policy, space);
  const int horizon = space.spec().horizon;
  Trajectory traj;
  traj.prompt = prompt;
  traj.tokens.resize(horizon);
  traj.state_path.resize(horizon);
  traj.old_logprobs.resize(horizon);

  std::vector<double> probs(policy.action_count);
  int state = space.root_state(traj.prompt);
  for (int t = 0; t < horizon; ++t) {
    softmax_into(policy.row(state), probs);
    const int action = sample_from_probs(probs, rng);
    traj.state_path[t] = state;
    traj.tokens[t] = action;
    traj.old_logprobs[t] = std::log(probs[action]);
    if (t + 1 < horizon) state = space.child_state(state, action);
  }
  return traj;
}

Trajectory rollout(const PolicyTable& policy, const StateSpace& space,
                   RngStream& rng) {
  check_policy_matches(policy, space);
  return rollout_from_prompt(policy, space, sample_prompt(space, rng), rng);
}

double VisitationMeasure::total() const {
  return std::accumulate(mass.begin(), mass.end(), 0.0);
}

namespace {

template <typename ProbRow>
VisitationMeasure visitation_exact_impl(const StateSpace& space,
                                        ProbRow probs_of_state) {
  VisitationMeasure d;
  d.mass.assign(space.total_states(), 0.0);
  const int horizon = space.spec().horizon;
  const int vocab = space.spec().vocab_size;
  for (int prompt = 0; prompt < space.spec().prompt_count; ++prompt) {
    d.mass[space.root_state(prompt)] = space.prompt_weight(prompt);
  }
  if (horizon == 1) return d;
  // One forward pass in index order: parents always precede children.
  for (int s = 0; s < space.total_states(); ++s) {
    if (d.mass[s] == 0.0 || space.depth_of(s) + 1 >= horizon) continue;
    const auto probs = probs_of_state(s);
    for (int a = 0; a < vocab; ++a) {
      d.mass[space.child_state(s, a)] += d.mass[s] * probs[a];
    }
  }
  return d;
}

}  // namespace

VisitationMeasure visitation_exact(const PolicyTable& policy,
                                   const StateSpace& space) {
  check_policy_matches(policy, space);
  return visitation_exact_impl(
      space, [&](int s) { return softmax_probs(policy, s); });
}

VisitationMeasure visitation_exact(const PolicySnapshot& snapshot,
                                   const StateSpace& space) {
  if (snapshot.state_count != space.total_states() ||
      snapshot.action_count != space.spec().vocab_size) {
    throw std::invalid_argument(
        "snapshot dimensions do not match the tree state space");
  }
  return visitation_exact_impl(space, [&](int s) { return snapshot.row(s); });
}

VisitationMeasure visitation_mc(const PolicyTable& policy,
                                const StateSpace& space, std::int64_t samples,
                                RngStream& rng) {
  check_policy_matches(policy, space);
  if (samples < 1) throw std::invalid_argument("samples must be >= 1");
  std::vector<std::int64_t> counts(space.total_states(), 0);
  for (std::int64_t i = 0; i < samples; ++i) {
    const Trajectory traj = rollout(policy, space, rng);
    for (const int s : traj.state_path) ++counts[s];
  }
  VisitationMeasure d;
  d.mass.resize(counts.size());
  for (std::size_t s = 0; s < counts.size(); ++s) {
    d.mass[s] = static_cast<double>(counts[s]) / static_cast<double>(samples);
  }
  return d;
}

}  // namespace clipsim
