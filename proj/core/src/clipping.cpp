#include "clipsim/clipping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace clipsim {

namespace {

// Lazily-softmaxed probability rows for the states a batch actually visits.
class ProbCache {
 public:
  explicit ProbCache(const PolicyTable& policy)
      : policy_(policy),
        cache_(policy.logits.size()),
        ready_(policy.state_count, 0) {}

  std::span<const double> row(int s) {
    if (!ready_[s]) {
      softmax_into(policy_.row(s),
                   {cache_.data() + policy_.row_offset(s),
                    static_cast<std::size_t>(policy_.action_count)});
      ready_[s] = 1;
    }
    return {cache_.data() + policy_.row_offset(s),
            static_cast<std::size_t>(policy_.action_count)};
  }

 private:
  const PolicyTable& policy_;
  std::vector<double> cache_;
  std::vector<char> ready_;
};

struct BatchItem {
  const Trajectory* trajectory;
  double advantage;
};

std::vector<BatchItem> flatten(const std::vector<RolloutGroup>& groups) {
  std::vector<BatchItem> items;
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      items.push_back({&group.trajectories[i], group.advantages[i]});
    }
  }
  return items;
}

ClipEventReport detect_from_probs(std::span<const double> probs,
                                  const PolicySnapshot& snapshot, int state,
                                  const ClipConfig& clip) {
  ClipEventReport report;
  report.h.assign(probs.size(), 0);
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const double r = probs[a] / snapshot.prob(state, static_cast<int>(a));
    if (r < lo) {
      report.h[a] = 1;
      report.p += probs[a];
    } else if (r > hi) {
      report.h[a] = -1;
      report.q += probs[a];
    }
  }
  return report;
}

double surrogate_value_items(ProbCache& probs, const PolicySnapshot& snapshot,
                             const std::vector<BatchItem>& items,
                             const ClipConfig& clip) {
  if (items.empty()) throw std::invalid_argument("empty batch");
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  double total = 0.0;
  for (const auto& item : items) {
    const Trajectory& traj = *item.trajectory;
    const double adv = item.advantage;
    double traj_sum = 0.0;
    for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
      const int s = traj.state_path[t];
      const int y = traj.tokens[t];
      const double r = probs.row(s)[y] / snapshot.prob(s, y);
      traj_sum += std::min(r * adv, std::clamp(r, lo, hi) * adv);
    }
    total += traj_sum / static_cast<double>(traj.tokens.size());
  }
  return total / static_cast<double>(items.size());
}

std::vector<double> surrogate_gradient_items(
    ProbCache& probs, const PolicyTable& policy,
    const PolicySnapshot& snapshot, const std::vector<BatchItem>& items,
    const ClipConfig& clip) {
  if (items.empty()) throw std::invalid_argument("empty batch");
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  std::vector<double> grad(policy.logits.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    const Trajectory& traj = *item.trajectory;
    const double adv = item.advantage;
    if (adv == 0.0) continue;
    const double token_weight =
        inv_n / static_cast<double>(traj.tokens.size());
    for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
      const int s = traj.state_path[t];
      const int y = traj.tokens[t];
      const auto row = probs.row(s);
      const double r = row[y] / snapshot.prob(s, y);
      // Flat arm of the min: clipped tokens contribute no gradient.
      if ((adv > 0.0 && r > hi) || (adv < 0.0 && r < lo)) continue;
      const double coeff = token_weight * adv * r;
      double* grad_row = grad.data() + policy.row_offset(s);
      grad_row[y] += coeff;
      for (int a = 0; a < policy.action_count; ++a) {
        grad_row[a] -= coeff * row[a];
      }
    }
  }
  return grad;
}

std::vector<double> reinforce_gradient_items(
    ProbCache& probs, const PolicyTable& policy,
    const std::vector<BatchItem>& items) {
  if (items.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> grad(policy.logits.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    const Trajectory& traj = *item.trajectory;
    const double adv = item.advantage;
    if (adv == 0.0) continue;
    const double coeff = inv_n * adv / static_cast<double>(traj.tokens.size());
    for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
      const int s = traj.state_path[t];
      const int y = traj.tokens[t];
      const auto row = probs.row(s);
      double* grad_row = grad.data() + policy.row_offset(s);
      grad_row[y] += coeff;
      for (int a = 0; a < policy.action_count; ++a) {
        grad_row[a] -= coeff * row[a];
      }
    }
  }
  return grad;
}

}  // namespace

void ClipConfig::validate() const {
  if (!(eps_low > 0.0) || eps_low > 1.0) {
    throw std::invalid_argument("eps_low must be in (0, 1]");
  }
  if (!(eps_high > 0.0)) {
    throw std::invalid_argument("eps_high must be positive");
  }
}

ClipEventReport detect_clip_events(const PolicyTable& policy,
                                   const PolicySnapshot& snapshot, int state,
                                   const ClipConfig& clip) {
  const std::vector<double> probs = softmax_probs(policy, state);
  return detect_from_probs(probs, snapshot, state, clip);
}

double surrogate_value(const PolicyTable& policy,
                       const PolicySnapshot& snapshot,
                       const std::vector<RolloutGroup>& groups,
                       const ClipConfig& clip) {
  ProbCache probs(policy);
  return surrogate_value_items(probs, snapshot, flatten(groups), clip);
}

std::vector<double> surrogate_gradient(const PolicyTable& policy,
                                       const PolicySnapshot& snapshot,
                                       const std::vector<RolloutGroup>& groups,
                                       const ClipConfig& clip) {
  ProbCache probs(policy);
  return surrogate_gradient_items(probs, policy, snapshot, flatten(groups),
                                  clip);
}

std::vector<double> reinforce_gradient(
    const PolicyTable& policy, const std::vector<RolloutGroup>& groups) {
  ProbCache probs(policy);
  return reinforce_gradient_items(probs, policy, flatten(groups));
}

PolicyTable pg_step(const PolicyTable& policy, const PolicySnapshot& snapshot,
                    const AdvantageModel& model, const ClipConfig& clip,
                    double eta, const VisitationMeasure& visitation) {
  model.validate();
  clip.validate();
  PolicyTable out = policy;
  std::vector<double> probs(policy.action_count);
  for (int s = 0; s < policy.state_count; ++s) {
    const double d = visitation.mass[s];
    if (d == 0.0) continue;
    softmax_into(policy.row(s), probs);
    const ClipEventReport events = detect_from_probs(probs, snapshot, s, clip);
    if (events.empty()) continue;
    const double mean_h = events.p - events.q;
    const double scale = model.mu * model.nu * eta * d;
    for (int a = 0; a < policy.action_count; ++a) {
      out.add_to_logit(s, a, scale * probs[a] * (events.h[a] - mean_h));
    }
  }
  return out;
}

PolicyTable npg_step(const PolicyTable& policy, const PolicySnapshot& snapshot,
                     const AdvantageModel& model, const ClipConfig& clip,
                     double eta, const VisitationMeasure& visitation) {
  model.validate();
  clip.validate();
  PolicyTable out = policy;
  std::vector<double> probs(policy.action_count);
  for (int s = 0; s < policy.state_count; ++s) {
    const double d = visitation.mass[s];
    if (d == 0.0) continue;
    softmax_into(policy.row(s), probs);
    const ClipEventReport events = detect_from_probs(probs, snapshot, s, clip);
    if (events.empty()) continue;
    const double delta = model.mu * model.nu * eta * d;
    const double z = std::exp(delta) * events.p + std::exp(-delta) * events.q +
                     (1.0 - events.p - events.q);
    auto out_row = out.row(s);
    for (int a = 0; a < policy.action_count; ++a) {
      const double next_prob = probs[a] * std::exp(delta * events.h[a]) / z;
      out_row[a] = std::log(next_prob);
    }
  }
  return out;
}

void OptimizerConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (rollout_batch < group_size || rollout_batch % group_size != 0) {
    throw std::invalid_argument(
        "rollout_batch must be a positive multiple of group_size");
  }
  if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
  if (updates_per_rollout < 1) {
    throw std::invalid_argument("updates_per_rollout must be >= 1");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  }
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("adam decay rates must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) {
    throw std::invalid_argument("adam_epsilon must be positive");
  }
}

void AdamState::ensure_size(std::size_t n) {
  if (m.size() != n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
}

void adam_ascent_step(AdamState& state, const std::vector<double>& grad,
                      double learning_rate, double beta1, double beta2,
                      double epsilon, std::vector<double>& params) {
  state.ensure_size(params.size());
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] += learning_rate * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

std::vector<TrainStepLog> grpo_train_epoch(
    PolicyTable& policy, const StateSpace& space, const RewardSource& source,
    const ClipConfig& clip, const OptimizerConfig& opt, AdamState& adam,
    RngStream& rng, std::int64_t step_offset,
    const InnerStepObserver& observer) {
  opt.validate();
  clip.validate();
  const int num_groups = opt.rollout_batch / opt.group_size;
  if (num_groups == 0) throw std::invalid_argument("empty rollout batch");

  const PolicySnapshot snapshot(policy);
  std::vector<RolloutGroup> groups;
  groups.reserve(num_groups);
  for (int g = 0; g < num_groups; ++g) {
    groups.push_back(
        sample_group(policy, space, source, opt.group_size, rng));
  }
  const std::vector<BatchItem> all_items = flatten(groups);
  const int batch_size = static_cast<int>(all_items.size());
  const int minibatch = std::min(opt.minibatch, batch_size);

  std::vector<int> order(batch_size);
  std::iota(order.begin(), order.end(), 0);
  int cursor = batch_size;  // exhausted: first use reshuffles

  adam.ensure_size(policy.logits.size());
  std::vector<TrainStepLog> logs;
  logs.reserve(opt.updates_per_rollout);
  std::vector<BatchItem> minibatch_items(minibatch);

  for (int j = 0; j < opt.updates_per_rollout; ++j) {
    if (cursor + minibatch > batch_size) {
      for (int i = batch_size - 1; i > 0; --i) {
        const int k = static_cast<int>(rng.next_u64() % (i + 1));
        std::swap(order[i], order[k]);
      }
      cursor = 0;
    }
    for (int i = 0; i < minibatch; ++i) {
      minibatch_items[i] = all_items[order[cursor + i]];
    }
    cursor += minibatch;

    const std::int64_t step = step_offset + j;
    if (observer) observer(step, policy, snapshot);

    ProbCache probs(policy);
    TrainStepLog log;
    log.step = step;
    log.surrogate =
        surrogate_value_items(probs, snapshot, minibatch_items, clip);
    const std::vector<double> grad = surrogate_gradient_items(
        probs, policy, snapshot, minibatch_items, clip);

    double grad_sq = 0.0;
    for (const double g : grad) grad_sq += g * g;
    log.grad_norm = std::sqrt(grad_sq);
    if (!std::isfinite(log.grad_norm) || !std::isfinite(log.surrogate)) {
      throw std::runtime_error("non-finite gradient at inner step " +
                               std::to_string(step));
    }

    // Batch entropy estimate and clip fractions at the pre-update policy.
    double entropy_sum = 0.0;
    double reward_sum = 0.0;
    std::int64_t tokens = 0, low = 0, high = 0;
    const double lo = clip.lower_threshold();
    const double hi = clip.upper_threshold();
    for (const auto& item : minibatch_items) {
      const Trajectory& traj = *item.trajectory;
      double traj_entropy = 0.0;
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const int s = traj.state_path[t];
        const auto row = probs.row(s);
        traj_entropy += entropy_of_probs(row);
        const double r = row[traj.tokens[t]] / snapshot.prob(s, traj.tokens[t]);
        ++tokens;
        if (r < lo) ++low;
        if (r > hi) ++high;
      }
      entropy_sum += traj_entropy / static_cast<double>(traj.tokens.size());
    }
    for (const auto& group : groups) {
      for (const double r : group.rewards) reward_sum += r;
    }
    log.entropy_estimate = entropy_sum / static_cast<double>(minibatch);
    log.clip_frac_low = static_cast<double>(low) / static_cast<double>(tokens);
    log.clip_frac_high =
        static_cast<double>(high) / static_cast<double>(tokens);
    log.reward_mean = reward_sum / static_cast<double>(batch_size);

    adam_ascent_step(adam, grad, opt.learning_rate, opt.beta1, opt.beta2,
                     opt.adam_epsilon, policy.logits);
    logs.push_back(log);
  }
  return logs;
}

std::pair<PolicyTable, std::vector<TrainStepLog>> grpo_train_epoch(
    const PolicyTable& policy, const StateSpace& space,
    const RewardSource& source, const ClipConfig& clip,
    const OptimizerConfig& opt, RngStream& rng) {
  PolicyTable updated = policy;
  AdamState adam;
  std::vector<TrainStepLog> logs =
      grpo_train_epoch(updated, space, source, clip, opt, adam, rng);
  return {std::move(updated), std::move(logs)};
}

}  // namespace clipsim
