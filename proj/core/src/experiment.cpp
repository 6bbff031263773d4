#include "clipsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

namespace clipsim {

namespace {

// Fixed stream tags keep every stochastic component on its own lane, so runs
// reproduce exactly regardless of scheduling.
constexpr std::uint64_t kStreamPolicyInit = 1;
constexpr std::uint64_t kStreamDrift = 2;
constexpr std::uint64_t kStreamLogBatch = 3;
constexpr std::uint64_t kStreamTrain = 4;
constexpr std::uint64_t kStreamEval = 5;

std::string format_field(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.12g", value);
  return buffer;
}

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& header) {
    out_.open(path);
    if (!out_) {
      throw std::runtime_error("cannot open output file: " + path.string());
    }
    out_ << header << "\n";
  }

  void row(std::int64_t step, std::initializer_list<double> fields) {
    out_ << step;
    for (const double field : fields) out_ << "," << format_field(field);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

PolicyTable snapshot_to_policy(const PolicySnapshot& snapshot) {
  PolicyTable policy(snapshot.state_count, snapshot.action_count);
  for (std::size_t i = 0; i < snapshot.probs.size(); ++i) {
    policy.logits[i] = std::log(snapshot.probs[i]);
  }
  return policy;
}

void accumulate_conditions(const TheoryStepReport& report,
                           ConditionCounters& counters) {
  counters.qcond_low_defined += report.qcond_low.defined;
  counters.qcond_low_satisfied += report.qcond_low.satisfied;
  counters.qcond_high_defined += report.qcond_high.defined;
  counters.qcond_high_satisfied += report.qcond_high.satisfied;
  counters.logcond_low_defined += report.logcond_low.defined;
  counters.logcond_low_satisfied += report.logcond_low.satisfied;
  counters.logcond_high_defined += report.logcond_high.defined;
  counters.logcond_high_satisfied += report.logcond_high.satisfied;
}

double cond_field(const ConditionStat& stat) {
  return stat.any() ? stat.weighted_mean
                    : std::numeric_limits<double>::quiet_NaN();
}

void write_theory_row(CsvFile& file, std::int64_t step,
                      const TheoryStepReport& report, double dh_actual,
                      double dh_pred) {
  file.row(step, {report.d_weighted_entropy, dh_actual, dh_pred,
                  report.p_mean, report.q_mean, cond_field(report.qcond_low),
                  cond_field(report.qcond_high),
                  cond_field(report.logcond_low),
                  cond_field(report.logcond_high)});
}

struct LogBatchStats {
  double entropy = 0.0;
  double clip_frac_low = 0.0;
  double clip_frac_high = 0.0;
  double surrogate = 0.0;
  double reward_mean = 0.0;
};

LogBatchStats log_batch_stats(const PolicyTable& policy,
                              const PolicySnapshot& snapshot,
                              const std::vector<RolloutGroup>& groups,
                              const ClipConfig& clip) {
  LogBatchStats stats;
  std::vector<Trajectory> trajectories;
  std::int64_t tokens = 0, low = 0, high = 0;
  double reward_sum = 0.0;
  std::int64_t rewards = 0;
  const double lo = clip.lower_threshold();
  const double hi = clip.upper_threshold();
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) {
      trajectories.push_back(traj);
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const double r = ratio(policy, snapshot, traj.state_path[t],
                               traj.tokens[t]);
        ++tokens;
        if (r < lo) ++low;
        if (r > hi) ++high;
      }
    }
    for (const double reward : group.rewards) {
      reward_sum += reward;
      ++rewards;
    }
  }
  stats.entropy = batch_entropy_estimate(policy, trajectories);
  stats.clip_frac_low = static_cast<double>(low) / static_cast<double>(tokens);
  stats.clip_frac_high =
      static_cast<double>(high) / static_cast<double>(tokens);
  stats.surrogate = surrogate_value(policy, snapshot, groups, clip);
  stats.reward_mean = reward_sum / static_cast<double>(rewards);
  return stats;
}

std::vector<int> eval_prompt_list(const TreeSpec& tree, int repeats) {
  std::vector<int> prompts;
  prompts.reserve(static_cast<std::size_t>(tree.prompt_count) * repeats);
  for (int r = 0; r < repeats; ++r) {
    for (int p = 0; p < tree.prompt_count; ++p) prompts.push_back(p);
  }
  return prompts;
}

}  // namespace

double batch_entropy_estimate(const PolicyTable& policy,
                              const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) {
    throw std::invalid_argument("entropy estimate needs a nonempty batch");
  }
  double total = 0.0;
  for (const auto& traj : trajectories) {
    double traj_entropy = 0.0;
    for (const int s : traj.state_path) traj_entropy += state_entropy(policy, s);
    total += traj_entropy / static_cast<double>(traj.state_path.size());
  }
  return total / static_cast<double>(trajectories.size());
}

EvalReport evaluate_pass_mean(const PolicyTable& policy,
                              const StateSpace& space,
                              const RewardSource& source, int k,
                              const std::vector<int>& prompts,
                              RngStream& rng) {
  if (source.kind != RewardKind::kVerifiable) {
    throw std::invalid_argument("pass@k evaluation needs a verifiable source");
  }
  if (k < 1) throw std::invalid_argument("eval k must be >= 1");
  if (prompts.empty()) throw std::invalid_argument("eval prompt list is empty");

  EvalReport report;
  std::vector<Trajectory> all;
  std::int64_t hits = 0, prompts_with_hit = 0;
  for (const int prompt : prompts) {
    bool any_hit = false;
    for (int i = 0; i < k; ++i) {
      Trajectory traj = rollout_from_prompt(policy, space, prompt, rng);
      if (draw_reward(source, traj, rng) > 0.5) {
        ++hits;
        any_hit = true;
      }
      all.push_back(std::move(traj));
    }
    if (any_hit) ++prompts_with_hit;
  }
  report.mean_at_k = static_cast<double>(hits) /
                     static_cast<double>(static_cast<std::int64_t>(k) *
                                         prompts.size());
  report.pass_at_k = static_cast<double>(prompts_with_hit) /
                     static_cast<double>(prompts.size());
  report.batch_entropy = batch_entropy_estimate(policy, all);
  if (report.pass_at_k < report.mean_at_k) {
    throw std::logic_error("pass@k fell below mean@k");
  }
  return report;
}

PolicySnapshot make_drifted_snapshot(const PolicyTable& policy,
                                     const StateSpace& space,
                                     const RewardSource& source,
                                     const DriftConfig& drift, RngStream rng) {
  if (drift.kind == DriftConfig::Kind::kGaussian) {
    PolicyTable shadow = policy;
    for (auto& logit : shadow.logits) logit += drift.gaussian_std * rng.normal();
    return PolicySnapshot(shadow);
  }
  // Inner-loop-structured drift: one random-reward batch collected at the
  // current policy, then ascent steps on it. Mirrors where an inner GRPO
  // loop leaves pi relative to pi_old, with the roles swapped. The grpo kind
  // ascends the clipped surrogate with a brake tighter than the run's clip
  // band, so batch tokens hold at the brake and only normalization drift of
  // unsampled actions reaches the event thresholds; momentum is disabled so
  // the brake is not overshot. The reinforce kind leaves the objective
  // unclipped.
  std::vector<RolloutGroup> groups;
  groups.reserve(drift.groups);
  for (int g = 0; g < drift.groups; ++g) {
    groups.push_back(
        sample_group(policy, space, source, drift.group_size, rng));
  }
  const ClipConfig brake = ClipConfig::symmetric(drift.eps);
  const PolicySnapshot origin(policy);
  PolicyTable shadow = policy;
  AdamState adam;
  for (int step = 0; step < drift.steps; ++step) {
    const std::vector<double> grad =
        drift.kind == DriftConfig::Kind::kGrpo
            ? surrogate_gradient(shadow, origin, groups, brake)
            : reinforce_gradient(shadow, groups);
    adam_ascent_step(adam, grad, drift.learning_rate,
                     drift.kind == DriftConfig::Kind::kGrpo ? 0.0 : 0.9, 0.999,
                     1e-8, shadow.logits);
  }
  return PolicySnapshot(shadow);
}

PolicyTable init_policy(const RunConfig& config, const StateSpace& space) {
  if (config.policy_init.kind == PolicyInitConfig::Kind::kZeros) {
    return PolicyTable(space.total_states(), space.spec().vocab_size);
  }
  RngStream rng = RngStream(config.seed).derive(kStreamPolicyInit);
  return PolicyTable::normal_init(space.total_states(),
                                  space.spec().vocab_size,
                                  config.policy_init.std, rng);
}

namespace {

RunResult run_idealized(const RunConfig& config, const StateSpace& space,
                        const std::filesystem::path& dir) {
  RunResult result;
  const RngStream root(config.seed);
  PolicyTable policy = init_policy(config, space);
  const int horizon = space.spec().horizon;

  CsvFile steps_csv(dir / "steps.csv",
                    "step,entropy_est,clip_frac_low,clip_frac_high,surrogate,"
                    "grad_norm,reward_mean");
  CsvFile theory_csv(dir / "theory.csv",
                     "step,d_weighted_H,dH_actual,dH_pred,p_mean,q_mean,"
                     "qcond_low,qcond_high,logcond_low,logcond_high");
  CsvFile eval_csv(dir / "eval.csv", "step,mean_at_k,pass_at_k");

  const bool has_eval = config.reward.kind == RewardKind::kVerifiable;
  const std::vector<int> eval_prompts =
      eval_prompt_list(space.spec(), config.eval.prompt_repeats);
  int eval_index = 0;
  auto run_eval = [&](std::int64_t step, const PolicyTable& p) {
    RngStream rng = root.derive(kStreamEval, eval_index++);
    const EvalReport report = evaluate_pass_mean(
        p, space, config.reward, config.eval.k, eval_prompts, rng);
    eval_csv.row(step, {report.mean_at_k, report.pass_at_k});
    result.final_pass_at_k = report.pass_at_k;
    result.final_mean_at_k = report.mean_at_k;
  };

  PolicySnapshot snapshot;
  PolicyTable snapshot_policy;
  VisitationMeasure visitation;

  for (std::int64_t step = 0; step < config.steps; ++step) {
    if (step % config.snapshot_period == 0) {
      snapshot =
          make_drifted_snapshot(policy, space, config.reward, config.drift,
                                root.derive(kStreamDrift, step));
      snapshot_policy = snapshot_to_policy(snapshot);
      visitation = visitation_exact(snapshot, space);
    }

    const TheoryStepReport report =
        build_theory_report(policy, snapshot, visitation, horizon,
                            config.advantage, config.clip, config.eta);
    if (!std::isfinite(report.d_weighted_entropy)) {
      throw std::runtime_error("non-finite entropy at step " +
                               std::to_string(step));
    }
    if (step == 0) result.initial_entropy = report.d_weighted_entropy;
    accumulate_conditions(report, result.conditions);

    // Log batch sampled under pi_old, scored with the configured rewards.
    RngStream log_rng = root.derive(kStreamLogBatch, step);
    std::vector<RolloutGroup> log_groups;
    const int num_groups =
        std::max(1, config.log_batch / config.drift.group_size);
    log_groups.reserve(num_groups);
    for (int g = 0; g < num_groups; ++g) {
      log_groups.push_back(sample_group(snapshot_policy, space, config.reward,
                                        config.drift.group_size, log_rng));
    }
    const LogBatchStats stats =
        log_batch_stats(policy, snapshot, log_groups, config.clip);

    if (has_eval && step % config.eval.interval == 0) run_eval(step, policy);

    const PolicyTable updated =
        config.updater == UpdaterKind::kPg
            ? pg_step(policy, snapshot, config.advantage, config.clip,
                      config.eta, visitation)
            : npg_step(policy, snapshot, config.advantage, config.clip,
                       config.eta, visitation);

    const double h_after = d_weighted_entropy(updated, visitation, horizon);
    const double dh_actual = h_after - report.d_weighted_entropy;
    if (!std::isfinite(dh_actual)) {
      throw std::runtime_error("non-finite entropy change at step " +
                               std::to_string(step));
    }

    double delta_sq = 0.0;
    for (std::size_t i = 0; i < policy.logits.size(); ++i) {
      const double delta = updated.logits[i] - policy.logits[i];
      delta_sq += delta * delta;
    }
    const double grad_norm = std::sqrt(delta_sq) / config.eta;

    steps_csv.row(step,
                  {stats.entropy, stats.clip_frac_low, stats.clip_frac_high,
                   stats.surrogate, grad_norm, stats.reward_mean});
    write_theory_row(theory_csv, step, report, dh_actual,
                     config.updater == UpdaterKind::kPg ? report.dh_pred_pg
                                                        : report.dh_pred_npg);
    policy = updated;
    result.steps_logged += 1;
  }

  result.final_entropy = d_weighted_entropy(policy, visitation, horizon);
  if (has_eval) run_eval(config.steps, policy);
  return result;
}

RunResult run_grpo_sgd(const RunConfig& config, const StateSpace& space,
                       const std::filesystem::path& dir) {
  RunResult result;
  const RngStream root(config.seed);
  PolicyTable policy = init_policy(config, space);
  const int horizon = space.spec().horizon;
  const OptimizerConfig& opt = config.optimizer;

  CsvFile steps_csv(dir / "steps.csv",
                    "step,entropy_est,clip_frac_low,clip_frac_high,surrogate,"
                    "grad_norm,reward_mean");
  CsvFile theory_csv(dir / "theory.csv",
                     "step,d_weighted_H,dH_actual,dH_pred,p_mean,q_mean,"
                     "qcond_low,qcond_high,logcond_low,logcond_high");
  CsvFile eval_csv(dir / "eval.csv", "step,mean_at_k,pass_at_k");

  const bool has_eval = config.reward.kind == RewardKind::kVerifiable;
  const std::vector<int> eval_prompts =
      eval_prompt_list(space.spec(), config.eval.prompt_repeats);
  int eval_index = 0;
  auto run_eval = [&](std::int64_t step, const PolicyTable& p) {
    RngStream rng = root.derive(kStreamEval, eval_index++);
    const EvalReport report = evaluate_pass_mean(
        p, space, config.reward, config.eval.k, eval_prompts, rng);
    eval_csv.row(step, {report.mean_at_k, report.pass_at_k});
    result.final_pass_at_k = report.pass_at_k;
    result.final_mean_at_k = report.mean_at_k;
  };

  AdamState adam;
  auto visitation = std::make_shared<VisitationMeasure>();
  struct Pending {
    std::int64_t step;
    TheoryStepReport report;
    std::shared_ptr<VisitationMeasure> visitation;
  };
  std::unique_ptr<Pending> pending;

  auto flush_pending = [&](const PolicyTable& now) {
    if (!pending) return;
    const double h_now =
        d_weighted_entropy(now, *pending->visitation, horizon);
    const double dh_actual = h_now - pending->report.d_weighted_entropy;
    write_theory_row(theory_csv, pending->step, pending->report, dh_actual,
                     pending->report.dh_pred_pg);
    pending.reset();
  };

  InnerStepObserver observer = [&](std::int64_t step, const PolicyTable& p,
                                   const PolicySnapshot& snapshot) {
    if (step % opt.updates_per_rollout == 0) {
      visitation =
          std::make_shared<VisitationMeasure>(visitation_exact(snapshot, space));
    }
    flush_pending(p);
    TheoryStepReport report =
        build_theory_report(p, snapshot, *visitation, horizon,
                            config.advantage, config.clip, opt.learning_rate);
    if (!std::isfinite(report.d_weighted_entropy)) {
      throw std::runtime_error("non-finite entropy at step " +
                               std::to_string(step));
    }
    if (step == 0) result.initial_entropy = report.d_weighted_entropy;
    accumulate_conditions(report, result.conditions);
    pending = std::make_unique<Pending>(
        Pending{step, std::move(report), visitation});
  };

  for (std::int64_t outer = 0; outer < config.steps; ++outer) {
    if (has_eval && outer % config.eval.interval == 0) {
      run_eval(outer * opt.updates_per_rollout, policy);
    }
    RngStream epoch_rng = root.derive(kStreamTrain, outer);
    const std::vector<TrainStepLog> logs =
        grpo_train_epoch(policy, space, config.reward, config.clip, opt, adam,
                         epoch_rng, outer * opt.updates_per_rollout, observer);
    for (const auto& log : logs) {
      steps_csv.row(log.step,
                    {log.entropy_estimate, log.clip_frac_low,
                     log.clip_frac_high, log.surrogate, log.grad_norm,
                     log.reward_mean});
      result.steps_logged += 1;
    }
  }
  flush_pending(policy);
  result.final_entropy = d_weighted_entropy(policy, *visitation, horizon);
  if (has_eval) run_eval(config.steps * opt.updates_per_rollout, policy);
  return result;
}

}  // namespace

RunResult run_experiment(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  const StateSpace space = enumerate_states(config.tree);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream resolved(dir / "config.resolved");
    if (!resolved) {
      throw std::runtime_error("cannot write to output directory: " + out_dir);
    }
    resolved << resolved_config_json(config);
  }
  RunResult result = config.updater == UpdaterKind::kGrpoSgd
                         ? run_grpo_sgd(config, space, dir)
                         : run_idealized(config, space, dir);
  result.out_dir = out_dir;
  return result;
}

std::vector<AblationCell> ablate_clipping(const RunConfig& base,
                                          const std::vector<double>& eps_lows,
                                          const std::vector<double>& eps_highs,
                                          const std::string& out_dir) {
  if (eps_lows.empty() || eps_highs.empty()) {
    throw std::invalid_argument("ablation grids must be nonempty");
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream table(dir / "ablation.csv");
  if (!table) {
    throw std::runtime_error("cannot write to output directory: " + out_dir);
  }
  table << "eps_low,eps_high,final_entropy,final_pass_at_k,final_mean_at_k\n";

  std::vector<AblationCell> cells;
  for (const double lo : eps_lows) {
    for (const double hi : eps_highs) {
      RunConfig config = base;
      config.clip = ClipConfig{lo, hi};
      config.clip.validate();
      const std::string cell_name =
          "eps_low_" + (lo == kClipLowOff ? "off" : format_field(lo)) +
          "_eps_high_" + (std::isinf(hi) ? "off" : format_field(hi));
      const RunResult run =
          run_experiment(config, (dir / cell_name).string());
      AblationCell cell{lo, hi, run.final_entropy, run.final_pass_at_k,
                        run.final_mean_at_k};
      cells.push_back(cell);
      table << format_field(lo) << "," << format_field(hi) << ","
            << format_field(cell.final_entropy) << ","
            << format_field(cell.final_pass_at_k) << ","
            << format_field(cell.final_mean_at_k) << "\n";
    }
  }
  return cells;
}

}  // namespace clipsim
