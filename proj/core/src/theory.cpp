#include "clipsim/theory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace clipsim {

namespace {

constexpr double kProbFloor = 1e-300;

double safe_log(double p) { return p > kProbFloor ? std::log(p) : 0.0; }

}  // namespace

QStatistics q_statistics(const PolicyTable& policy,
                         const ClipEventReport& events, int state) {
  const std::vector<double> probs = softmax_probs(policy, state);
  const double entropy = entropy_of_probs(probs);
  QStatistics stats;
  double sum_x = 0.0, sum_y = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const double qa =
        probs[a] > kProbFloor ? probs[a] * (std::log(probs[a]) + entropy) : 0.0;
    stats.eq += probs[a] * qa;
    if (events.h[a] > 0) sum_x += probs[a] * qa;
    if (events.h[a] < 0) sum_y += probs[a] * qa;
  }
  if (events.p > 0.0) stats.eq_x = sum_x / events.p;
  if (events.q > 0.0) stats.eq_y = sum_y / events.q;
  return stats;
}

LogStatistics log_statistics(const PolicyTable& policy,
                             const ClipEventReport& events, int state) {
  const std::vector<double> probs = softmax_probs(policy, state);
  LogStatistics stats;
  stats.entropy = entropy_of_probs(probs);
  double sum_x = 0.0, sum_y = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const double surprisal = -probs[a] * safe_log(probs[a]);
    if (events.h[a] > 0) sum_x += surprisal;
    if (events.h[a] < 0) sum_y += surprisal;
  }
  if (events.p > 0.0) stats.el_x = sum_x / events.p;
  if (events.q > 0.0) stats.el_y = sum_y / events.q;
  return stats;
}

double predict_dh_pg(double d, double p, double q, const QStatistics& stats,
                     const AdvantageModel& model, double eta) {
  double low_term = 0.0, high_term = 0.0;
  if (p > 0.0) {
    if (!stats.eq_x) {
      throw std::logic_error("clip-low mass positive but EQ|X undefined");
    }
    low_term = p * (stats.eq - *stats.eq_x);
  }
  if (q > 0.0) {
    if (!stats.eq_y) {
      throw std::logic_error("clip-high mass positive but EQ|Y undefined");
    }
    high_term = q * (stats.eq - *stats.eq_y);
  }
  return model.mu * model.nu * eta * d * (low_term - high_term);
}

double predict_dh_npg(double d, double p, double q, const LogStatistics& stats,
                      const AdvantageModel& model, double eta) {
  double low_term = 0.0, high_term = 0.0;
  if (p > 0.0) {
    if (!stats.el_x) {
      throw std::logic_error("clip-low mass positive but E[-log pi|X] undefined");
    }
    low_term = p * (*stats.el_x - stats.entropy);
  }
  if (q > 0.0) {
    if (!stats.el_y) {
      throw std::logic_error("clip-high mass positive but E[-log pi|Y] undefined");
    }
    high_term = q * (*stats.el_y - stats.entropy);
  }
  return model.mu * model.nu * eta * d * (low_term - high_term);
}

TheoryStepReport build_theory_report(const PolicyTable& policy,
                                     const PolicySnapshot& snapshot,
                                     const VisitationMeasure& visitation,
                                     int horizon, const AdvantageModel& model,
                                     const ClipConfig& clip, double eta) {
  TheoryStepReport report;
  double d_total = 0.0;
  double weighted[4] = {0.0, 0.0, 0.0, 0.0};
  double weights[4] = {0.0, 0.0, 0.0, 0.0};
  ConditionStat* conds[4] = {&report.qcond_low, &report.qcond_high,
                             &report.logcond_low, &report.logcond_high};

  for (int s = 0; s < policy.state_count; ++s) {
    const double d = visitation.mass[s];
    if (d == 0.0) continue;
    StateTheoryRow row;
    row.state = s;
    row.d = d;
    const ClipEventReport events = detect_clip_events(policy, snapshot, s, clip);
    row.p = events.p;
    row.q = events.q;
    row.q_stats = q_statistics(policy, events, s);
    row.log_stats = log_statistics(policy, events, s);
    row.dh_pred_pg = predict_dh_pg(d, row.p, row.q, row.q_stats, model, eta);
    row.dh_pred_npg =
        predict_dh_npg(d, row.p, row.q, row.log_stats, model, eta);

    d_total += d;
    report.d_weighted_entropy += d * row.log_stats.entropy;
    // Both sides of the dH comparison aggregate as d-weighted sums of the
    // per-state quantities (the per-state prediction already carries its d).
    report.dh_pred_pg += d * row.dh_pred_pg;
    report.dh_pred_npg += d * row.dh_pred_npg;
    report.p_mean += d * row.p;
    report.q_mean += d * row.q;

    const std::optional<double> brackets[4] = {
        row.q_stats.eq_x ? std::optional(row.q_stats.eq - *row.q_stats.eq_x)
                         : std::nullopt,
        row.q_stats.eq_y ? std::optional(row.q_stats.eq - *row.q_stats.eq_y)
                         : std::nullopt,
        row.log_stats.el_x
            ? std::optional(*row.log_stats.el_x - row.log_stats.entropy)
            : std::nullopt,
        row.log_stats.el_y
            ? std::optional(*row.log_stats.el_y - row.log_stats.entropy)
            : std::nullopt};
    for (int c = 0; c < 4; ++c) {
      if (!brackets[c]) continue;
      conds[c]->defined += 1;
      if (*brackets[c] >= 0.0) conds[c]->satisfied += 1;
      conds[c]->simple_mean += *brackets[c];
      weighted[c] += d * *brackets[c];
      weights[c] += d;
    }
    report.states.push_back(std::move(row));
  }

  const double horizon_d = static_cast<double>(horizon);
  report.d_weighted_entropy /= horizon_d;
  report.dh_pred_pg /= horizon_d;
  report.dh_pred_npg /= horizon_d;
  if (d_total > 0.0) {
    report.p_mean /= d_total;
    report.q_mean /= d_total;
  }
  for (int c = 0; c < 4; ++c) {
    if (conds[c]->defined > 0) {
      conds[c]->simple_mean /= static_cast<double>(conds[c]->defined);
      conds[c]->weighted_mean = weighted[c] / weights[c];
    }
  }
  return report;
}

double d_weighted_entropy(const PolicyTable& policy,
                          const VisitationMeasure& visitation, int horizon) {
  double sum = 0.0;
  for (int s = 0; s < policy.state_count; ++s) {
    if (visitation.mass[s] > 0.0) {
      sum += visitation.mass[s] * state_entropy(policy, s);
    }
  }
  return sum / static_cast<double>(horizon);
}

ResidualScanResult residual_scan(const PolicyTable& policy,
                                 const PolicySnapshot& snapshot,
                                 const VisitationMeasure& visitation,
                                 const AdvantageModel& model,
                                 const ClipConfig& clip,
                                 const std::vector<double>& etas,
                                 UpdaterKind updater) {
  if (updater == UpdaterKind::kGrpoSgd) {
    throw std::invalid_argument("residual scan needs an idealized updater");
  }
  for (const double eta : etas) {
    if (!(eta > 0.0)) throw std::invalid_argument("etas must be positive");
  }

  ResidualScanResult result;
  result.vacuous = true;
  for (int s = 0; s < policy.state_count && result.vacuous; ++s) {
    if (visitation.mass[s] == 0.0) continue;
    if (!detect_clip_events(policy, snapshot, s, clip).empty()) {
      result.vacuous = false;
    }
  }

  const double h_before_total = [&] {
    double sum = 0.0;
    for (int s = 0; s < policy.state_count; ++s) {
      if (visitation.mass[s] > 0.0) {
        sum += visitation.mass[s] * state_entropy(policy, s);
      }
    }
    return sum;
  }();

  for (const double eta : etas) {
    ResidualScanRow row;
    row.eta = eta;
    const PolicyTable updated =
        updater == UpdaterKind::kPg
            ? pg_step(policy, snapshot, model, clip, eta, visitation)
            : npg_step(policy, snapshot, model, clip, eta, visitation);
    double h_after_total = 0.0;
    double pred_total = 0.0;
    for (int s = 0; s < policy.state_count; ++s) {
      const double d = visitation.mass[s];
      if (d == 0.0) continue;
      h_after_total += d * state_entropy(updated, s);
      const ClipEventReport events =
          detect_clip_events(policy, snapshot, s, clip);
      if (updater == UpdaterKind::kPg) {
        pred_total += d * predict_dh_pg(d, events.p, events.q,
                                        q_statistics(policy, events, s), model,
                                        eta);
      } else {
        pred_total += d * predict_dh_npg(
                              d, events.p, events.q,
                              log_statistics(policy, events, s), model, eta);
      }
    }
    row.dh_actual = h_after_total - h_before_total;
    row.dh_pred = pred_total;
    row.residual = std::abs(row.dh_actual - row.dh_pred);
    result.rows.push_back(row);
  }

  // Least-squares slope of log residual against log eta.
  if (!result.vacuous) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int n = 0;
    for (const auto& row : result.rows) {
      if (row.residual < 1e-300) continue;
      const double x = std::log(row.eta);
      const double y = std::log(row.residual);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++n;
    }
    result.loglog_slope =
        n >= 2 ? (n * sxy - sx * sy) / (n * sxx - sx * sx)
               : std::numeric_limits<double>::quiet_NaN();
  } else {
    result.loglog_slope = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

}  // namespace clipsim
