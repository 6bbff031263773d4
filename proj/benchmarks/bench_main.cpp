#include <benchmark/benchmark.h>

#include "clipsim/clipping.hpp"
#include "clipsim/experiment.hpp"
#include "clipsim/theory.hpp"
#include "clipsim/validation.hpp"

namespace {

using namespace clipsim;

StateSpace default_space() { return enumerate_states(TreeSpec{6, 3, 4, {}}); }

PolicyTable default_policy(const StateSpace& space) {
  RngStream rng(1);
  return PolicyTable::normal_init(space.total_states(), 6, 1.3, rng);
}

void BM_SoftmaxRow(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  int s = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax_probs(policy, s));
    s = (s + 1) % policy.state_count;
  }
}
BENCHMARK(BM_SoftmaxRow);

void BM_StateEntropyGradient(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  int s = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(state_entropy_gradient(policy, s));
    s = (s + 1) % policy.state_count;
  }
}
BENCHMARK(BM_StateEntropyGradient);

void BM_Rollout(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  RngStream rng(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rollout(policy, space, rng));
  }
}
BENCHMARK(BM_Rollout);

void BM_VisitationExact(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  for (auto _ : state) {
    benchmark::DoNotOptimize(visitation_exact(policy, space));
  }
}
BENCHMARK(BM_VisitationExact);

void BM_SurrogateGradient(benchmark::State& state) {
  InstanceOptions options;
  options.groups = 16;
  options.group_size = 8;
  RngStream rng(3);
  const RandomInstance instance = make_random_instance(options, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(surrogate_gradient(
        instance.policy, instance.snapshot, instance.groups, instance.clip));
  }
}
BENCHMARK(BM_SurrogateGradient);

void BM_PgStep(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  RngStream rng(4);
  PolicyTable shadow = policy;
  for (auto& logit : shadow.logits) logit += 0.3 * rng.normal();
  const PolicySnapshot snapshot(shadow);
  const VisitationMeasure visitation = visitation_exact(snapshot, space);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pg_step(policy, snapshot, {0.5, 0.5}, {0.2, 0.2},
                                     0.1, visitation));
  }
}
BENCHMARK(BM_PgStep);

void BM_TheoryReport(benchmark::State& state) {
  const StateSpace space = default_space();
  const PolicyTable policy = default_policy(space);
  RngStream rng(5);
  PolicyTable shadow = policy;
  for (auto& logit : shadow.logits) logit += 0.3 * rng.normal();
  const PolicySnapshot snapshot(shadow);
  const VisitationMeasure visitation = visitation_exact(snapshot, space);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_theory_report(
        policy, snapshot, visitation, 3, {0.5, 0.5}, {0.2, 0.2}, 0.1));
  }
}
BENCHMARK(BM_TheoryReport);

void BM_GrpoTrainEpoch(benchmark::State& state) {
  const StateSpace space = default_space();
  OptimizerConfig opt;
  opt.group_size = 8;
  opt.rollout_batch = 64;
  opt.minibatch = 32;
  opt.updates_per_rollout = 4;
  opt.learning_rate = 0.01;
  const RewardSource source = RewardSource::bernoulli(0.5);
  PolicyTable policy = default_policy(space);
  AdamState adam;
  RngStream rng(6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        grpo_train_epoch(policy, space, source, {0.2, 0.2}, opt, adam, rng));
  }
}
BENCHMARK(BM_GrpoTrainEpoch);

}  // namespace

BENCHMARK_MAIN();
