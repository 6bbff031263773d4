#include <cmath>
#include <numeric>
#include <stdexcept>

#include "clipsim/clipping.hpp"
#include "clipsim/validation.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace clipsim;

namespace {

PolicyTable from_probs(std::vector<double> probs) {
  PolicyTable policy(1, static_cast<int>(probs.size()));
  for (std::size_t a = 0; a < probs.size(); ++a) {
    policy.logits[a] = std::log(probs[a]);
  }
  return policy;
}

// Single-state instance: one "trajectory" per (token, advantage) pair, all at
// state 0 with horizon 1.
RolloutGroup one_state_group(const std::vector<std::pair<int, double>>& items) {
  RolloutGroup group;
  for (const auto& [token, advantage] : items) {
    Trajectory traj;
    traj.prompt = 0;
    traj.tokens = {token};
    traj.state_path = {0};
    traj.old_logprobs = {0.0};
    group.trajectories.push_back(traj);
    group.rewards.push_back(0.0);
    group.advantages.push_back(advantage);
  }
  return group;
}

}  // namespace

TEST_SUITE_BEGIN("clipping");

TEST_CASE("no clip events when the policy equals its snapshot") {
  RngStream rng(1);
  PolicyTable policy = PolicyTable::normal_init(3, 4, 1.0, rng);
  const PolicySnapshot snapshot(policy);
  for (int s = 0; s < 3; ++s) {
    const auto events = detect_clip_events(policy, snapshot, s, {0.2, 0.2});
    CHECK(events.p == 0.0);
    CHECK(events.q == 0.0);
    for (const auto h : events.h) CHECK(h == 0);
  }
}

TEST_CASE("a ratio of 0.7 under eps_low 0.2 is a clip-low event") {
  const PolicyTable policy = from_probs({0.35, 0.65});
  const PolicySnapshot snapshot(from_probs({0.5, 0.5}));
  const auto events = detect_clip_events(policy, snapshot, 0, {0.2, 0.2});
  CHECK(events.in_x(0));       // ratio 0.7 < 0.8
  CHECK(events.in_y(1));       // ratio 1.3 > 1.2
  CHECK(events.p == doctest::Approx(0.35));
  CHECK(events.q == doctest::Approx(0.65));
}

TEST_CASE("clip-high off leaves Y empty for any pair") {
  RngStream rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyTable policy = PolicyTable::normal_init(2, 5, 2.0, rng);
    PolicyTable old_policy = PolicyTable::normal_init(2, 5, 2.0, rng);
    const PolicySnapshot snapshot(old_policy);
    for (int s = 0; s < 2; ++s) {
      const auto events =
          detect_clip_events(policy, snapshot, s, {0.2, kClipHighOff});
      CHECK(events.q == 0.0);
    }
  }
}

TEST_CASE("boundary ties count as unclipped") {
  // ratio exactly 0.8 and exactly 1.2 with eps 0.2
  const PolicyTable policy = from_probs({0.4, 0.6});
  const PolicySnapshot snapshot(from_probs({0.5, 0.5}));
  const auto events = detect_clip_events(policy, snapshot, 0, {0.2, 0.2});
  CHECK(events.p == 0.0);
  CHECK(events.q == 0.0);
}

TEST_CASE("surrogate at the snapshot equals the mean advantage") {
  InstanceOptions options;
  RngStream rng(3);
  RandomInstance instance = make_random_instance(options, rng);
  // identical policy: all ratios are exactly one
  PolicyTable policy(instance.snapshot.state_count,
                     instance.snapshot.action_count);
  for (std::size_t i = 0; i < policy.logits.size(); ++i) {
    policy.logits[i] = std::log(instance.snapshot.probs[i]);
  }
  const double value =
      surrogate_value(policy, instance.snapshot, instance.groups, instance.clip);
  // centered group advantages: the mean advantage is zero
  CHECK(std::abs(value) <= 1e-12);
}

TEST_CASE("zero advantages give a zero surrogate") {
  const PolicyTable policy = from_probs({0.3, 0.7});
  const PolicySnapshot snapshot(from_probs({0.5, 0.5}));
  const auto groups =
      std::vector<RolloutGroup>{one_state_group({{0, 0.0}, {1, 0.0}})};
  CHECK(surrogate_value(policy, snapshot, groups, {0.2, 0.2}) == 0.0);
}

TEST_CASE("min form equals the piecewise decomposition exactly") {
  RngStream rng(4);
  InstanceOptions options;
  for (int trial = 0; trial < 50; ++trial) {
    const RandomInstance instance = make_random_instance(options, rng);
    const double min_form = surrogate_value(instance.policy, instance.snapshot,
                                            instance.groups, instance.clip);
    const double piecewise = oracles::piecewise_surrogate(
        instance.policy, instance.snapshot, instance.groups, instance.clip);
    CHECK(min_form == piecewise);
  }
}

TEST_CASE("fully clipped batches have zero gradient") {
  const PolicyTable policy = from_probs({0.9, 0.1});
  const PolicySnapshot snapshot(from_probs({0.5, 0.5}));
  // token 0: ratio 1.8 with positive advantage (flat above 1.2)
  // token 1: ratio 0.2 with negative advantage (flat below 0.8)
  const auto groups =
      std::vector<RolloutGroup>{one_state_group({{0, 0.5}, {1, -0.5}})};
  for (const double g : surrogate_gradient(policy, snapshot, groups, {0.2, 0.2})) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("at the snapshot the surrogate gradient is the REINFORCE gradient") {
  InstanceOptions options;
  options.gap_std = 0.0;  // snapshot equals the policy
  RngStream rng(5);
  const RandomInstance instance = make_random_instance(options, rng);
  const auto surrogate = surrogate_gradient(instance.policy, instance.snapshot,
                                            instance.groups, instance.clip);
  const auto reinforce = reinforce_gradient(instance.policy, instance.groups);
  CHECK(oracles::max_abs_diff(surrogate, reinforce) <= 1e-12);
}

TEST_CASE("surrogate gradient matches finite differences off boundaries") {
  const GradientCheckResult result = check_surrogate_gradients(30, 991);
  CHECK(result.instances_checked == 30);
  CHECK(result.max_rel_error <= 1e-4);
}

TEST_CASE("surrogate gradient equals the piecewise-form gradient exactly") {
  RngStream rng(6);
  InstanceOptions options;
  for (int trial = 0; trial < 30; ++trial) {
    RandomInstance instance = make_random_instance(options, rng);
    if (near_clip_boundary(instance, 1e-9)) continue;
    const auto min_form = surrogate_gradient(instance.policy, instance.snapshot,
                                             instance.groups, instance.clip);
    const auto piecewise = oracles::piecewise_surrogate_gradient(
        instance.policy, instance.snapshot, instance.groups, instance.clip);
    CHECK(oracles::max_abs_diff(min_form, piecewise) <= 1e-15);
  }
}

TEST_CASE("clipped tokens contribute only through softmax coupling") {
  // Two tokens at one state; token 0 is deep in the clipped region, token 1
  // is not. The gradient must equal token 1's term alone.
  const PolicyTable policy = from_probs({0.8, 0.1, 0.1});
  const PolicySnapshot snapshot(from_probs({0.4, 0.3, 0.3}));
  const ClipConfig clip{0.2, 0.2};
  // token 0: ratio 2.0, A > 0 -> flat; token 1: ratio 1/3, A > 0 -> active
  const auto groups =
      std::vector<RolloutGroup>{one_state_group({{0, 0.5}, {1, 0.5}})};
  const auto grad = surrogate_gradient(policy, snapshot, groups, clip);
  const auto probs = softmax_probs(policy, 0);
  const double r1 = probs[1] / snapshot.prob(0, 1);
  const double coeff = 0.5 * r1 / 2.0;  // advantage * ratio / (N*T)
  const std::vector<double> expected = {
      -coeff * probs[0], coeff * (1.0 - probs[1]), -coeff * probs[2]};
  CHECK(oracles::max_abs_diff(grad, expected) <= 1e-12);
}

TEST_CASE("pg step is the identity without clip events") {
  RngStream rng(7);
  PolicyTable policy = PolicyTable::normal_init(4, 3, 1.0, rng);
  const PolicySnapshot snapshot(policy);
  VisitationMeasure d;
  d.mass.assign(4, 0.25);
  const PolicyTable updated =
      pg_step(policy, snapshot, {0.5, 0.5}, {0.2, 0.2}, 0.1, d);
  CHECK(updated.logits == policy.logits);
}

TEST_CASE("pg step logit deltas sum to zero per state") {
  RngStream rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyTable policy = PolicyTable::normal_init(3, 5, 1.0, rng);
    PolicyTable old_policy = policy;
    for (auto& l : old_policy.logits) l += 0.4 * rng.normal();
    const PolicySnapshot snapshot(old_policy);
    VisitationMeasure d;
    d.mass.assign(3, 1.0 / 3.0);
    const PolicyTable updated =
        pg_step(policy, snapshot, {0.5, 0.5}, {0.2, 0.2}, 0.3, d);
    for (int s = 0; s < 3; ++s) {
      double sum = 0.0;
      for (int a = 0; a < 5; ++a) sum += updated.logit(s, a) - policy.logit(s, a);
      CHECK(std::abs(sum) <= 1e-12);
    }
  }
}

TEST_CASE("pg step matches the termwise logit-change formula") {
  // pi_k = (0.2, 0.3, 0.5), action 0 in X, Y empty, mu=nu=0.5, eta=0.1, d=1.
  const PolicyTable policy = from_probs({0.2, 0.3, 0.5});
  const PolicySnapshot snapshot(from_probs({0.3, 0.3, 0.4}));
  const ClipConfig clip{0.2, 0.3};  // ratios (0.667, 1.0, 1.25): X={0}, Y={}
  VisitationMeasure d;
  d.mass = {1.0};
  const PolicyTable updated =
      pg_step(policy, snapshot, {0.5, 0.5}, clip, 0.1, d);

  const auto events = detect_clip_events(policy, snapshot, 0, clip);
  REQUIRE(events.in_x(0));
  REQUIRE(events.q == 0.0);
  const auto probs = softmax_probs(policy, 0);
  const double mean_h = events.p;  // q = 0
  for (int a = 0; a < 3; ++a) {
    const double expected =
        0.5 * 0.5 * 0.1 * 1.0 * probs[a] * ((a == 0 ? 1.0 : 0.0) - mean_h);
    CHECK(std::abs((updated.logit(0, a) - policy.logit(0, a)) - expected) <=
          1e-12);
  }
}

TEST_CASE("npg step is the identity without clip events") {
  RngStream rng(9);
  PolicyTable policy = PolicyTable::normal_init(2, 4, 1.0, rng);
  const PolicySnapshot snapshot(policy);
  VisitationMeasure d;
  d.mass.assign(2, 0.5);
  const PolicyTable updated =
      npg_step(policy, snapshot, {0.5, 0.5}, {0.2, 0.2}, 0.1, d);
  CHECK(updated.logits == policy.logits);
}

TEST_CASE("npg step preserves the simplex") {
  RngStream rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyTable policy = PolicyTable::normal_init(3, 6, 1.0, rng);
    PolicyTable old_policy = policy;
    for (auto& l : old_policy.logits) l += 0.4 * rng.normal();
    const PolicySnapshot snapshot(old_policy);
    VisitationMeasure d;
    d.mass.assign(3, 1.0 / 3.0);
    const PolicyTable updated =
        npg_step(policy, snapshot, {0.5, 0.5}, {0.2, 0.2}, 0.5, d);
    for (int s = 0; s < 3; ++s) {
      const auto probs = softmax_probs(updated, s);
      const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("npg step matches the exponentiated-update formula") {
  // pi_k = (0.3, 0.7) with action 0 in X and action 1 in Y, delta = 0.05.
  const PolicyTable policy = from_probs({0.3, 0.7});
  const PolicySnapshot snapshot(from_probs({0.5, 0.5}));
  const ClipConfig clip{0.2, 0.2};  // ratios (0.6, 1.4)
  VisitationMeasure d;
  d.mass = {1.0};
  const double eta = 0.2;  // delta = 0.5 * 0.5 * 0.2 * 1 = 0.05
  const PolicyTable updated =
      npg_step(policy, snapshot, {0.5, 0.5}, clip, eta, d);

  const double delta = 0.05;
  const double z = std::exp(delta) * 0.3 + std::exp(-delta) * 0.7;
  const std::vector<double> expected = {0.3 * std::exp(delta) / z,
                                        0.7 * std::exp(-delta) / z};
  const auto probs = softmax_probs(updated, 0);
  CHECK(std::abs(probs[0] - expected[0]) <= 1e-12);
  CHECK(std::abs(probs[1] - expected[1]) <= 1e-12);
  // mass moved toward the minority action: entropy goes up
  CHECK(state_entropy(updated, 0) > state_entropy(policy, 0));
}

TEST_CASE("idealized updates are permutation equivariant") {
  RngStream rng(11);
  const std::vector<int> perm = {2, 0, 3, 1};
  PolicyTable policy = PolicyTable::normal_init(1, 4, 1.0, rng);
  PolicyTable old_policy = policy;
  for (auto& l : old_policy.logits) l += 0.5 * rng.normal();
  const PolicySnapshot snapshot(old_policy);

  PolicyTable policy_p(1, 4);
  PolicyTable old_p(1, 4);
  for (int a = 0; a < 4; ++a) {
    policy_p.logits[perm[a]] = policy.logits[a];
    old_p.logits[perm[a]] = old_policy.logits[a];
  }
  const PolicySnapshot snapshot_p(old_p);
  VisitationMeasure d;
  d.mass = {1.0};

  const AdvantageModel model{0.5, 0.5};
  const ClipConfig clip{0.2, 0.2};
  const PolicyTable pg = pg_step(policy, snapshot, model, clip, 0.3, d);
  const PolicyTable pg_p = pg_step(policy_p, snapshot_p, model, clip, 0.3, d);
  const PolicyTable npg = npg_step(policy, snapshot, model, clip, 0.3, d);
  const PolicyTable npg_p = npg_step(policy_p, snapshot_p, model, clip, 0.3, d);
  for (int a = 0; a < 4; ++a) {
    CHECK(std::abs((pg_p.logits[perm[a]] - policy_p.logits[perm[a]]) -
                   (pg.logits[a] - policy.logits[a])) <= 1e-12);
    CHECK(std::abs(softmax_probs(npg_p, 0)[perm[a]] -
                   softmax_probs(npg, 0)[a]) <= 1e-12);
  }
}

TEST_CASE("weakening a clip never enlarges its event set") {
  RngStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyTable policy = PolicyTable::normal_init(2, 6, 1.2, rng);
    PolicyTable old_policy = policy;
    for (auto& l : old_policy.logits) l += 0.5 * rng.normal();
    const PolicySnapshot snapshot(old_policy);
    for (int s = 0; s < 2; ++s) {
      const auto strong = detect_clip_events(policy, snapshot, s, {0.1, 0.1});
      const auto weak = detect_clip_events(policy, snapshot, s, {0.3, 0.3});
      for (int a = 0; a < 6; ++a) {
        if (weak.in_x(a)) CHECK(strong.in_x(a));
        if (weak.in_y(a)) CHECK(strong.in_y(a));
      }
    }
  }
}

TEST_CASE("reinforce gradient is zero for zero advantages") {
  const PolicyTable policy = from_probs({0.3, 0.7});
  const auto groups =
      std::vector<RolloutGroup>{one_state_group({{0, 0.0}, {1, 0.0}})};
  for (const double g : reinforce_gradient(policy, groups)) CHECK(g == 0.0);
}

TEST_CASE("reinforce gradient has zero mean under random rewards") {
  const TreeSpec tree{5, 2, 1, {}};
  const StateSpace space = enumerate_states(tree);
  RngStream init(13);
  const PolicyTable policy =
      PolicyTable::normal_init(space.total_states(), 5, 1.0, init);
  const RewardSource source = RewardSource::bernoulli(0.5);
  RngStream rng(14);
  const int batches = 20000;
  std::vector<double> sum(policy.logits.size(), 0.0);
  std::vector<double> sum_sq(policy.logits.size(), 0.0);
  for (int b = 0; b < batches; ++b) {
    std::vector<RolloutGroup> groups;
    groups.push_back(sample_group(policy, space, source, 4, rng));
    groups.push_back(sample_group(policy, space, source, 4, rng));
    const auto grad = reinforce_gradient(policy, groups);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      sum[i] += grad[i];
      sum_sq[i] += grad[i] * grad[i];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / batches;
    const double var =
        (sum_sq[i] / batches - mean * mean) / static_cast<double>(batches - 1);
    const double se = std::sqrt(std::max(var, 0.0));
    CHECK(std::abs(mean) <= 4.0 * se + 1e-15);
  }
}

TEST_CASE("train epoch with zero learning rate leaves the policy unchanged") {
  const StateSpace space = enumerate_states(TreeSpec{4, 2, 2, {}});
  RngStream init(15);
  PolicyTable policy =
      PolicyTable::normal_init(space.total_states(), 4, 1.0, init);
  const std::vector<double> before = policy.logits;
  OptimizerConfig opt;
  opt.group_size = 4;
  opt.rollout_batch = 32;
  opt.minibatch = 16;
  opt.updates_per_rollout = 4;
  opt.learning_rate = 0.0;
  AdamState adam;
  RngStream rng(16);
  const auto logs = grpo_train_epoch(policy, space, RewardSource::bernoulli(0.5),
                                     {0.2, 0.2}, opt, adam, rng);
  CHECK(policy.logits == before);
  CHECK(logs.size() == 4);
  for (const auto& log : logs) {
    CHECK(std::isfinite(log.entropy_estimate));
    CHECK(log.clip_frac_low >= 0.0);
    CHECK(log.clip_frac_high <= 1.0);
  }
}

TEST_CASE("table-1 defaults are the optimizer defaults") {
  const OptimizerConfig opt;
  CHECK(opt.group_size == 8);
  CHECK(opt.rollout_batch == 512);
  CHECK(opt.minibatch == 256);
  CHECK(opt.updates_per_rollout == 16);
  CHECK(opt.learning_rate == 5e-7);
  CHECK(opt.beta1 == 0.9);
  CHECK(opt.beta2 == 0.999);
  CHECK(opt.adam_epsilon == 1e-8);
}

TEST_CASE("train epoch logs are well formed and the policy moves") {
  const StateSpace space = enumerate_states(TreeSpec{4, 2, 2, {}});
  PolicyTable policy(space.total_states(), 4);
  const std::vector<double> before = policy.logits;
  OptimizerConfig opt;
  opt.group_size = 4;
  opt.rollout_batch = 64;
  opt.minibatch = 32;
  opt.updates_per_rollout = 8;
  opt.learning_rate = 0.05;
  AdamState adam;
  RngStream rng(17);
  const auto logs = grpo_train_epoch(policy, space, RewardSource::bernoulli(0.5),
                                     {0.2, 0.2}, opt, adam, rng, 100);
  CHECK(logs.size() == 8);
  CHECK(logs.front().step == 100);
  CHECK(logs.back().step == 107);
  CHECK(policy.logits != before);
  for (const auto& log : logs) {
    CHECK(std::isfinite(log.surrogate));
    CHECK(std::isfinite(log.grad_norm));
    CHECK(log.reward_mean >= 0.0);
    CHECK(log.reward_mean <= 1.0);
  }
}

TEST_CASE("train epoch with both clips off never reports clip events") {
  const StateSpace space = enumerate_states(TreeSpec{4, 2, 2, {}});
  PolicyTable policy(space.total_states(), 4);
  OptimizerConfig opt;
  opt.group_size = 4;
  opt.rollout_batch = 32;
  opt.minibatch = 32;
  opt.updates_per_rollout = 6;
  opt.learning_rate = 0.1;
  AdamState adam;
  RngStream rng(18);
  const auto logs =
      grpo_train_epoch(policy, space, RewardSource::bernoulli(0.5),
                       {kClipLowOff, kClipHighOff}, opt, adam, rng);
  for (const auto& log : logs) {
    CHECK(log.clip_frac_low == 0.0);
    CHECK(log.clip_frac_high == 0.0);
  }
}

TEST_CASE("invalid optimizer configs are rejected") {
  OptimizerConfig opt;
  opt.rollout_batch = 100;  // not a multiple of group_size 8
  CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
  opt = OptimizerConfig{};
  opt.group_size = 1;
  CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
  opt = OptimizerConfig{};
  opt.learning_rate = -1.0;
  CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
}

TEST_CASE("invalid clip configs are rejected") {
  CHECK_THROWS_AS((ClipConfig{0.0, 0.2}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ClipConfig{1.2, 0.2}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ClipConfig{0.2, 0.0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((ClipConfig{kClipLowOff, kClipHighOff}.validate()));
}

TEST_SUITE_END();
