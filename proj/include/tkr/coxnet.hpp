#pragma once

// Lasso-penalized Cox regression (Breslow ties, cyclic coordinate descent) for
// feature selection, and the discrete-time logistic hazard model used as an
// ablation baseline.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkr/common.hpp"
#include "tkr/dataio.hpp"
#include "tkr/survcore.hpp"

namespace tkr {

/// Column centering and scaling. Zero-variance columns get scale 1, so their
/// standardized values are all zero.
struct Standardizer {
  Vector means;
  Vector scales;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  Vector apply_row(std::span<const double> row) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

struct CoxObjective {
  double value = 0.0;
  Vector gradient;
};

/// Negative log partial likelihood (Breslow) of `beta` on the rows of `x`,
/// with its exact gradient. Not scaled by n.
CoxObjective cox_neg_log_partial_likelihood(const Vector& beta, const Matrix& x,
                                            std::span<const SurvivalRecord> records);

struct LassoOptions {
  double tolerance = 1e-7;
  int max_sweeps = 10000;
};

struct CoxModel {
  /// On the standardized scale.
  Vector coefficients;
  Standardizer standardizer;
  /// Breslow baseline cumulative hazard at zero standardized linear predictor.
  HazardCurve baseline_chf;
  double lambda = 0.0;
  int sweeps = 0;
  bool converged = false;
  /// Penalized objective after each sweep (nonincreasing).
  std::vector<double> objective_trace;

  std::size_t feature_count() const { return static_cast<std::size_t>(coefficients.size()); }

  /// Standardized linear predictor. Throws on a length mismatch.
  double predict_risk(std::span<const double> row) const;
  SurvivalCurve predict_survival(std::span<const double> row) const;

  nlohmann::json to_json() const;
  static CoxModel from_json(const nlohmann::json& j);
};

/// Minimizes NLL(beta) + lambda * |beta|_1 over standardized columns of `x`.
/// `warm_start`, when given, is a standardized-scale starting point.
CoxModel fit_lasso_cox(const Matrix& x, std::span<const SurvivalRecord> records, double lambda,
                       const TimeGrid& grid, const LassoOptions& options = {},
                       const Vector* warm_start = nullptr);

/// Indices j with |beta_j| > tolerance.
std::vector<std::size_t> select_features(const CoxModel& model, double tolerance = 1e-8);

/// Smallest lambda whose solution is all zeros: max_j |dNLL/dbeta_j (0)|.
double lambda_max(const Matrix& x, std::span<const SurvivalRecord> records);

/// `count` log-spaced values from lambda_max down to lambda_max * ratio.
std::vector<double> lambda_path(const Matrix& x, std::span<const SurvivalRecord> records, int count = 50,
                                double ratio = 1e-3);

enum class LambdaRule {
  /// Highest validation C-index; exact ties go to the larger lambda.
  max_c_index,
  /// Largest lambda whose validation C-index is within one jackknife standard
  /// error of the highest.
  one_se,
};

std::string_view to_string(LambdaRule rule);
LambdaRule parse_lambda_rule(std::string_view text);

struct LambdaChoice {
  double lambda = 0.0;
  LambdaRule rule = LambdaRule::one_se;
  std::vector<double> path;
  std::vector<double> validation_c_index;
  std::vector<std::size_t> selected_counts;
  double best_c_index = 0.0;
  /// Jackknife standard error of the validation C-index at the best lambda
  /// (0 under max_c_index).
  double c_index_se = 0.0;
};

/// Jackknife standard error of the C-index; leave-one-out sets without a
/// comparable pair are skipped.
double c_index_jackknife_se(std::span<const double> risks, std::span<const SurvivalRecord> records);

/// Fits every lambda on the training rows (warm-started from the largest) and
/// picks one from the validation C-index according to `rule`.
LambdaChoice choose_lambda(const Matrix& train_x, std::span<const SurvivalRecord> train_records,
                           const Matrix& validation_x, std::span<const SurvivalRecord> validation_records,
                           std::span<const double> path, const TimeGrid& grid, const LassoOptions& options = {},
                           LambdaRule rule = LambdaRule::one_se);

enum class IntervalStatus {
  estimated,
  no_at_risk,  // hazard fixed at 0
  no_events,   // hazard fixed at 0
  all_events,  // hazard fixed at 1
};

std::string_view to_string(IntervalStatus status);

struct GlmModel {
  TimeGrid grid;
  /// One per interval (grid[k-1], grid[k]]; -inf / +inf for fixed intervals.
  std::vector<double> interval_intercepts;
  std::vector<IntervalStatus> interval_status;
  /// On the standardized scale.
  Vector coefficients;
  Standardizer standardizer;
  int iterations = 0;
  bool converged = false;
  /// Deviance after each accepted Newton step (nonincreasing).
  std::vector<double> deviance_trace;

  std::size_t interval_count() const { return interval_intercepts.size(); }
  double predict_risk(std::span<const double> row) const;
  /// S(grid[k]) = prod_{j <= k} (1 - hazard_j), S(grid[0]) = 1.
  SurvivalCurve predict_survival(std::span<const double> row) const;

  nlohmann::json to_json() const;
  static GlmModel from_json(const nlohmann::json& j);
};

/// Person-period logistic hazard model fitted by damped Newton iterations.
/// Events count in the interval containing them; censored records contribute
/// only the intervals they survive completely. `x` may have zero columns.
GlmModel fit_discrete_glm(const Matrix& x, std::span<const SurvivalRecord> records, const TimeGrid& grid);

}  // namespace tkr
