#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "clipsim/clipping.hpp"
#include "clipsim/policy.hpp"
#include "clipsim/reward.hpp"
#include "clipsim/tree_env.hpp"

namespace clipsim {

// Q(a) = pi_k(a|s) (log pi_k(a|s) + H(s)); conditional means over the clip
// sets are absent (not NaN) when the corresponding mass is zero.
struct QStatistics {
  double eq = 0.0;
  std::optional<double> eq_x;
  std::optional<double> eq_y;
};

struct LogStatistics {
  std::optional<double> el_x;  // E[-log pi | X]
  std::optional<double> el_y;  // E[-log pi | Y]
  double entropy = 0.0;
};

QStatistics q_statistics(const PolicyTable& policy,
                         const ClipEventReport& events, int state);
LogStatistics log_statistics(const PolicyTable& policy,
                             const ClipEventReport& events, int state);

// First-order entropy-change predictions:
//   pg:  mu nu eta d ( p (EQ - EQ_X) - q (EQ - EQ_Y) )
//   npg: mu nu eta d ( p (ELx - H)  - q (ELy - H) )
// A defined-ness violation (mass > 0 but conditional absent) throws.
double predict_dh_pg(double d, double p, double q, const QStatistics& stats,
                     const AdvantageModel& model, double eta);
double predict_dh_npg(double d, double p, double q, const LogStatistics& stats,
                      const AdvantageModel& model, double eta);

struct StateTheoryRow {
  int state = 0;
  double d = 0.0;
  double p = 0.0;
  double q = 0.0;
  QStatistics q_stats;
  LogStatistics log_stats;
  double dh_pred_pg = 0.0;
  double dh_pred_npg = 0.0;
};

// One sign-condition bracket (conditional mean against its unconditional
// counterpart), aggregated over the states where it is defined; both
// d-weighted and unweighted means are kept.
struct ConditionStat {
  double weighted_mean = 0.0;
  double simple_mean = 0.0;
  std::int64_t defined = 0;
  std::int64_t satisfied = 0;  // bracket >= 0

  bool any() const { return defined > 0; }
};

struct TheoryStepReport {
  std::vector<StateTheoryRow> states;  // states with d > 0
  double d_weighted_entropy = 0.0;     // sum_s d(s) H(s) / horizon
  double dh_pred_pg = 0.0;             // sum_s d(s) pred(s) / horizon
  double dh_pred_npg = 0.0;
  double p_mean = 0.0;  // d-weighted
  double q_mean = 0.0;
  ConditionStat qcond_low;    // EQ - EQ_X
  ConditionStat qcond_high;   // EQ - EQ_Y
  ConditionStat logcond_low;  // ELx - H
  ConditionStat logcond_high; // ELy - H
};

TheoryStepReport build_theory_report(const PolicyTable& policy,
                                     const PolicySnapshot& snapshot,
                                     const VisitationMeasure& visitation,
                                     int horizon, const AdvantageModel& model,
                                     const ClipConfig& clip, double eta);

// Visitation-weighted entropy of the policy under a frozen d (same
// aggregation the theory report uses).
double d_weighted_entropy(const PolicyTable& policy,
                          const VisitationMeasure& visitation, int horizon);

enum class UpdaterKind { kPg, kNpg, kGrpoSgd };

struct ResidualScanRow {
  double eta = 0.0;
  double dh_actual = 0.0;
  double dh_pred = 0.0;
  double residual = 0.0;
};

struct ResidualScanResult {
  std::vector<ResidualScanRow> rows;
  double loglog_slope = 0.0;
  bool vacuous = false;  // no clip events anywhere: excluded from fits
};

// Applies one idealized update per eta from the same (policy, snapshot),
// measures the d-weighted actual entropy change against the first-order
// prediction, and fits log-residual against log-eta.
ResidualScanResult residual_scan(const PolicyTable& policy,
                                 const PolicySnapshot& snapshot,
                                 const VisitationMeasure& visitation,
                                 const AdvantageModel& model,
                                 const ClipConfig& clip,
                                 const std::vector<double>& etas,
                                 UpdaterKind updater);

}  // namespace clipsim
