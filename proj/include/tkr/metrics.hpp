#pragma once

// Evaluation suite: Harrell's C, IPCW cumulative/dynamic AUC, IPCW Brier and
// integrated Brier scores, +/-1 year accuracy with a confusion matrix, and the
// Wilcoxon signed-rank test.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkr/dataio.hpp"
#include "tkr/survcore.hpp"

namespace tkr {

/// Harrell's C over pairs with time_i < time_j and event_i; concordant when
/// risk_i > risk_j, half credit for tied risks. Throws without comparable pairs.
double concordance_index(std::span<const double> risks, std::span<const SurvivalRecord> records);

/// Kaplan-Meier estimate of the censoring distribution G(t) = P(C > t).
class CensoringDistribution {
 public:
  explicit CensoringDistribution(std::span<const SurvivalRecord> records);

  /// G(t-): probability of remaining uncensored strictly before t.
  double before(double t) const;

 private:
  std::vector<double> times_;
  std::vector<double> survival_;  // G at times_[k] (after the step)
};

struct AucResult {
  std::map<double, double> per_time;
  double mean = 0.0;
  /// Cases dropped because their censoring weight was zero.
  std::size_t excluded = 0;
  /// Requested times without any case or any control.
  std::vector<double> undefined_times;
};

/// Cases at t: event by t. Controls at t: known event-free at t (time > t, or
/// censored exactly at t). Cases weighted by 1 / G(T_i-); risk = 1 - S_i(t).
AucResult cumulative_dynamic_auc(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records,
                                 std::span<const double> times);

/// IPCW Brier score at t. Events by t weigh 1 / G(T_i-) against S = 0,
/// records known event-free at t weigh 1 / G(t-) against S = 1, records
/// censored before t weigh 0. The mean runs over all records.
double brier_score(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records, double t);

/// Trapezoidal integral of brier_score over `grid`, divided by its span.
double integrated_brier(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records,
                        std::span<const double> grid);

/// Rows: true event year class; columns: predicted class. The last class is
/// "beyond_horizon".
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  void write_csv(std::ostream& out) const;
};

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  ConfusionMatrix confusion;
};

/// Nearest grid point to t (ties go to the later point).
std::size_t nearest_grid_index(const TimeGrid& grid, double t);

/// Event records are correct when a year is predicted within 1 of the event
/// year (rounded to the grid). Censored records are correct when the
/// prediction is beyond the horizon or later than the censoring time.
AccuracyResult accuracy_pm1(std::span<const TimePrediction> predictions, std::span<const SurvivalRecord> records,
                            const TimeGrid& grid);

struct WilcoxonResult {
  /// Sum of ranks of the positive differences a - b.
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_used = 0;
  bool exact = false;
  bool degenerate = false;
};

inline constexpr std::size_t kWilcoxonExactLimit = 25;

/// Two-sided paired test. Zero differences are dropped; exact null
/// distribution for up to 25 pairs, tie-corrected normal approximation above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Midranks of |d| for nonzero differences.
std::vector<double> signed_rank_midranks(std::span<const double> differences);
double wilcoxon_exact_p(std::span<const double> ranks, double statistic);
double wilcoxon_normal_p(std::span<const double> ranks, double statistic);

struct EvaluationReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double c_index = 0.0;
  double mean_auc = 0.0;
  double ibs = 0.0;
  std::map<double, double> per_time_auc;
  std::size_t auc_excluded = 0;
  std::vector<double> auc_undefined_times;
  ConfusionMatrix confusion;
  std::optional<WilcoxonResult> comparison;

  nlohmann::json to_json() const;
  void write_table(std::ostream& out) const;
};

/// Runs the full suite. AUC uses grid times after the origin; IBS integrates
/// over the whole grid.
EvaluationReport evaluate(std::span<const SurvivalCurve> curves, std::span<const double> risks,
                          std::span<const TimePrediction> predictions, std::span<const SurvivalRecord> records,
                          const TimeGrid& grid);

}  // namespace tkr
