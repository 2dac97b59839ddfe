#include "tkr/coxnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/QR>

#include "tkr/metrics.hpp"

namespace tkr {

namespace {

using ColMatrix = Eigen::MatrixXd;

void check_rows(const Matrix& x, std::span<const SurvivalRecord> records) {
  if (static_cast<std::size_t>(x.rows()) != records.size()) {
    throw Error(ErrorCode::invalid_argument, "feature rows and records are not aligned");
  }
  if (!x.allFinite()) throw Error(ErrorCode::numerical, "features contain non-finite values");
  const bool any_event = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.event; });
  if (!any_event) throw Error(ErrorCode::validation, "no events: the partial likelihood is undefined");
}

// Records sorted by ascending time, grouped into blocks of equal time. Under
// Breslow ties every event in a block shares the risk set "this block and all
// later blocks".
class RiskSets {
 public:
  RiskSets(const Matrix& x, std::span<const SurvivalRecord> records) {
    const std::size_t n = records.size();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(),
                     [&](auto a, auto b) { return records[a].time < records[b].time; });
    x_.resize(static_cast<Eigen::Index>(n), x.cols());
    event_.resize(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
      x_.row(static_cast<Eigen::Index>(pos)) = x.row(static_cast<Eigen::Index>(order_[pos]));
      event_[pos] = records[order_[pos]].event ? 1 : 0;
    }
    for (std::size_t pos = 0; pos < n;) {
      std::size_t end = pos;
      double deaths = 0.0;
      while (end < n && records[order_[end]].time == records[order_[pos]].time) {
        deaths += event_[end];
        ++end;
      }
      blocks_.push_back({pos, end, deaths, records[order_[pos]].time});
      pos = end;
    }
    event_sums_ = Vector::Zero(x.cols());
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (event_[pos]) event_sums_ += x_.row(static_cast<Eigen::Index>(pos)).transpose();
    }
  }

  struct Block {
    std::size_t begin, end;
    double deaths;
    double time;
  };

  std::size_t size() const { return order_.size(); }
  const ColMatrix& x() const { return x_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Vector& event_sums() const { return event_sums_; }
  bool event(std::size_t pos) const { return event_[pos] != 0; }

 private:
  std::vector<std::size_t> order_;
  ColMatrix x_;
  std::vector<std::uint8_t> event_;
  std::vector<Block> blocks_;
  Vector event_sums_;
};

// Negative log partial likelihood given linear predictors in sorted order.
double neg_log_likelihood(const RiskSets& sets, const Vector& eta) {
  const double shift = eta.maxCoeff();
  double value = 0.0;
  double risk_sum = 0.0;
  for (auto it = sets.blocks().rbegin(); it != sets.blocks().rend(); ++it) {
    for (std::size_t pos = it->begin; pos < it->end; ++pos) {
      risk_sum += std::exp(eta[static_cast<Eigen::Index>(pos)] - shift);
      if (sets.event(pos)) value -= eta[static_cast<Eigen::Index>(pos)];
    }
    if (it->deaths > 0.0) value += it->deaths * (std::log(risk_sum) + shift);
  }
  return value;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Coordinate descent state on standardized, time-sorted data.
class CoordinateDescent {
 public:
  CoordinateDescent(const RiskSets& sets, Vector beta, double lambda)
      : sets_(sets), beta_(std::move(beta)), lambda_(lambda) {
    eta_ = sets_.x() * beta_;
    refresh_weights();
    nll_ = neg_log_likelihood(sets_, eta_);
  }

  double objective() const { return nll_ + lambda_ * beta_.lpNorm<1>(); }
  const Vector& beta() const { return beta_; }

  // One cyclic pass; returns the largest coefficient change.
  double sweep() {
    refresh_weights();
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < beta_.size(); ++j) max_change = std::max(max_change, update(j));
    return max_change;
  }

 private:
  void refresh_weights() {
    shift_ = eta_.maxCoeff();
    weights_ = (eta_.array() - shift_).exp().matrix();
  }

  // Gradient and curvature of the NLL along coordinate j.
  std::pair<double, double> derivatives(Eigen::Index j) const {
    const auto& x = sets_.x();
    double a = 0.0, b = 0.0, c = 0.0;
    double grad = -sets_.event_sums()[j];
    double hess = 0.0;
    for (auto it = sets_.blocks().rbegin(); it != sets_.blocks().rend(); ++it) {
      for (std::size_t pos = it->begin; pos < it->end; ++pos) {
        const auto p = static_cast<Eigen::Index>(pos);
        const double w = weights_[p];
        const double v = x(p, j);
        a += w;
        b += w * v;
        c += w * v * v;
      }
      if (it->deaths > 0.0) {
        const double mean = b / a;
        grad += it->deaths * mean;
        hess += it->deaths * std::max(0.0, c / a - mean * mean);
      }
    }
    return {grad, hess};
  }

  double update(Eigen::Index j) {
    const auto [grad, hess] = derivatives(j);
    if (!(hess > 1e-300)) return 0.0;
    const double current = beta_[j];
    const double target = soft_threshold(hess * current - grad, lambda_) / hess;
    double step = target - current;
    if (step == 0.0) return 0.0;

    const auto column = sets_.x().col(j);
    const double before = objective();
    for (int halving = 0; halving < 40; ++halving) {
      Vector trial_eta = eta_ + step * column;
      const double trial_nll = neg_log_likelihood(sets_, trial_eta);
      const double trial_objective =
          trial_nll + lambda_ * (beta_.lpNorm<1>() - std::abs(current) + std::abs(current + step));
      if (trial_objective <= before) {
        beta_[j] = current + step;
        eta_ = std::move(trial_eta);
        nll_ = trial_nll;
        weights_ = (eta_.array() - shift_).exp().matrix();
        return std::abs(step);
      }
      step *= 0.5;
    }
    return 0.0;
  }

  const RiskSets& sets_;
  Vector beta_;
  double lambda_;
  Vector eta_;
  Vector weights_;
  double shift_ = 0.0;
  double nll_ = 0.0;
};

HazardCurve breslow_baseline(const RiskSets& sets, const Vector& beta, const TimeGrid& grid) {
  const Vector eta = sets.x() * beta;
  const double shift = sets.size() > 0 ? eta.maxCoeff() : 0.0;
  std::vector<double> jump_times, jumps;
  double risk_sum = 0.0;
  for (auto it = sets.blocks().rbegin(); it != sets.blocks().rend(); ++it) {
    for (std::size_t pos = it->begin; pos < it->end; ++pos) {
      risk_sum += std::exp(eta[static_cast<Eigen::Index>(pos)] - shift);
    }
    if (it->deaths > 0.0) {
      jump_times.push_back(it->time);
      jumps.push_back(it->deaths / risk_sum * std::exp(-shift));
    }
  }
  std::reverse(jump_times.begin(), jump_times.end());
  std::reverse(jumps.begin(), jumps.end());
  std::vector<double> values(grid.size());
  double h = 0.0;
  std::size_t k = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    while (k < jump_times.size() && jump_times[k] <= grid[g]) h += jumps[k++];
    values[g] = h;
  }
  return HazardCurve(grid, std::move(values));
}

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vector(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  const auto n = static_cast<double>(x.rows());
  s.means = Vector::Zero(x.cols());
  s.scales = Vector::Ones(x.cols());
  if (x.rows() == 0) return s;
  s.means = x.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt((x.col(j).array() - s.means[j]).square().sum() / n);
    if (sd > 1e-12 * std::max(1.0, std::abs(s.means[j]))) {
      s.scales[j] = sd;
    } else {
      // Constant column: centring on a member makes it exactly zero.
      s.means[j] = x(0, j);
    }
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != means.size()) throw Error(ErrorCode::invalid_argument, "standardizer width mismatch");
  Matrix out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    out.col(j) = ((x.col(j).array() - means[j]) / scales[j]).matrix();
  }
  return out;
}

Vector Standardizer::apply_row(std::span<const double> row) const {
  if (static_cast<Eigen::Index>(row.size()) != means.size()) {
    throw Error(ErrorCode::invalid_argument, "row has " + std::to_string(row.size()) + " features, model expects " +
                                                 std::to_string(means.size()));
  }
  Vector out(means.size());
  for (Eigen::Index j = 0; j < means.size(); ++j) out[j] = (row[static_cast<std::size_t>(j)] - means[j]) / scales[j];
  return out;
}

nlohmann::json Standardizer::to_json() const {
  return {{"means", vector_json(means)}, {"scales", vector_json(scales)}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  return {json_vector(j.at("means")), json_vector(j.at("scales"))};
}

// ---------------------------------------------------------------------------
// Cox partial likelihood

CoxObjective cox_neg_log_partial_likelihood(const Vector& beta, const Matrix& x,
                                            std::span<const SurvivalRecord> records) {
  check_rows(x, records);
  if (beta.size() != x.cols()) throw Error(ErrorCode::invalid_argument, "beta length does not match features");
  const RiskSets sets(x, records);
  const Vector eta = sets.x() * beta;
  const double shift = eta.size() > 0 ? eta.maxCoeff() : 0.0;

  CoxObjective out;
  out.value = neg_log_likelihood(sets, eta);
  out.gradient = -sets.event_sums();
  double a = 0.0;
  Vector b = Vector::Zero(x.cols());
  for (auto it = sets.blocks().rbegin(); it != sets.blocks().rend(); ++it) {
    for (std::size_t pos = it->begin; pos < it->end; ++pos) {
      const auto p = static_cast<Eigen::Index>(pos);
      const double w = std::exp(eta[p] - shift);
      a += w;
      b += w * sets.x().row(p).transpose();
    }
    if (it->deaths > 0.0) out.gradient += it->deaths * b / a;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lasso Cox

double CoxModel::predict_risk(std::span<const double> row) const {
  return standardizer.apply_row(row).dot(coefficients);
}

SurvivalCurve CoxModel::predict_survival(std::span<const double> row) const {
  const double relative = std::exp(predict_risk(row));
  std::vector<double> values(baseline_chf.size());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = std::exp(-baseline_chf.values()[k] * relative);
  return SurvivalCurve(baseline_chf.grid(), std::move(values));
}

nlohmann::json CoxModel::to_json() const {
  return {{"coefficients", vector_json(coefficients)},
          {"standardizer", standardizer.to_json()},
          {"baseline_grid", baseline_chf.grid()},
          {"baseline_chf", baseline_chf.values()},
          {"lambda", lambda},
          {"sweeps", sweeps},
          {"converged", converged}};
}

CoxModel CoxModel::from_json(const nlohmann::json& j) {
  CoxModel m;
  m.coefficients = json_vector(j.at("coefficients"));
  m.standardizer = Standardizer::from_json(j.at("standardizer"));
  m.baseline_chf = HazardCurve(j.at("baseline_grid").get<TimeGrid>(), j.at("baseline_chf").get<std::vector<double>>());
  m.lambda = j.at("lambda").get<double>();
  m.sweeps = j.at("sweeps").get<int>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

CoxModel fit_lasso_cox(const Matrix& x, std::span<const SurvivalRecord> records, double lambda,
                       const TimeGrid& grid, const LassoOptions& options, const Vector* warm_start) {
  check_rows(x, records);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::invalid_argument, "lambda must be >= 0");

  CoxModel model;
  model.standardizer = Standardizer::fit(x);
  model.lambda = lambda;
  const RiskSets sets(model.standardizer.apply(x), records);

  Vector start = Vector::Zero(x.cols());
  if (warm_start) {
    if (warm_start->size() != x.cols()) throw Error(ErrorCode::invalid_argument, "warm start length mismatch");
    start = *warm_start;
  }
  CoordinateDescent solver(sets, start, lambda);
  model.objective_trace.push_back(solver.objective());
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    const double change = solver.sweep();
    model.sweeps = sweep;
    model.objective_trace.push_back(solver.objective());
    if (change < options.tolerance) {
      model.converged = true;
      break;
    }
  }
  model.coefficients = solver.beta();
  model.baseline_chf = breslow_baseline(sets, model.coefficients, grid);
  return model;
}

std::vector<std::size_t> select_features(const CoxModel& model, double tolerance) {
  std::vector<std::size_t> selected;
  for (Eigen::Index j = 0; j < model.coefficients.size(); ++j) {
    if (std::abs(model.coefficients[j]) > tolerance) selected.push_back(static_cast<std::size_t>(j));
  }
  return selected;
}

double lambda_max(const Matrix& x, std::span<const SurvivalRecord> records) {
  check_rows(x, records);
  const Matrix z = Standardizer::fit(x).apply(x);
  const auto at_zero = cox_neg_log_partial_likelihood(Vector::Zero(x.cols()), z, records);
  return at_zero.gradient.size() > 0 ? at_zero.gradient.cwiseAbs().maxCoeff() : 0.0;
}

std::vector<double> lambda_path(const Matrix& x, std::span<const SurvivalRecord> records, int count,
                                double ratio) {
  if (count < 1) throw Error(ErrorCode::invalid_argument, "lambda path needs at least one value");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorCode::invalid_argument, "lambda ratio must be in (0, 1]");
  const double top = lambda_max(x, records);
  std::vector<double> path(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double fraction = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
    path[static_cast<std::size_t>(k)] = top * std::pow(ratio, fraction);
  }
  return path;
}

std::string_view to_string(LambdaRule rule) {
  return rule == LambdaRule::one_se ? "one_se" : "max_c_index";
}

LambdaRule parse_lambda_rule(std::string_view text) {
  if (text == "one_se") return LambdaRule::one_se;
  if (text == "max_c_index") return LambdaRule::max_c_index;
  throw Error(ErrorCode::invalid_argument, "lambda rule must be one_se or max_c_index");
}

double c_index_jackknife_se(std::span<const double> risks, std::span<const SurvivalRecord> records) {
  const std::size_t n = records.size();
  std::vector<double> loo;
  std::vector<double> r;
  std::vector<SurvivalRecord> rec;
  for (std::size_t drop = 0; drop < n; ++drop) {
    r.clear();
    rec.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (i == drop) continue;
      r.push_back(risks[i]);
      rec.push_back(records[i]);
    }
    try {
      loo.push_back(concordance_index(r, rec));
    } catch (const Error&) {
    }
  }
  if (loo.size() < 2) return 0.0;
  const double m = static_cast<double>(loo.size());
  const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / m;
  double ss = 0.0;
  for (double c : loo) ss += (c - mean) * (c - mean);
  return std::sqrt((m - 1.0) / m * ss);
}

LambdaChoice choose_lambda(const Matrix& train_x, std::span<const SurvivalRecord> train_records,
                           const Matrix& validation_x, std::span<const SurvivalRecord> validation_records,
                           std::span<const double> path, const TimeGrid& grid, const LassoOptions& options,
                           LambdaRule rule) {
  if (path.empty()) throw Error(ErrorCode::invalid_argument, "empty lambda path");
  if (validation_x.cols() != train_x.cols()) {
    throw Error(ErrorCode::invalid_argument, "train and validation widths differ");
  }
  // Warm starts follow decreasing lambda; the result does not depend on the
  // order the caller listed the path in.
  std::vector<std::size_t> order(path.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return path[a] > path[b]; });

  LambdaChoice choice;
  choice.rule = rule;
  choice.path.assign(path.begin(), path.end());
  choice.validation_c_index.assign(path.size(), 0.0);
  choice.selected_counts.assign(path.size(), 0);
  std::vector<double> risks(static_cast<std::size_t>(validation_x.rows()));
  std::vector<std::vector<double>> all_risks(path.size());
  Vector warm = Vector::Zero(train_x.cols());
  for (const auto k : order) {
    const auto model = fit_lasso_cox(train_x, train_records, path[k], grid, options, &warm);
    warm = model.coefficients;
    for (Eigen::Index i = 0; i < validation_x.rows(); ++i) {
      const auto row = validation_x.row(i);
      risks[static_cast<std::size_t>(i)] = model.predict_risk(std::span<const double>(row.data(), row.size()));
    }
    choice.validation_c_index[k] = concordance_index(risks, validation_records);
    choice.selected_counts[k] = select_features(model).size();
    all_risks[k] = risks;
  }
  std::size_t best = order.front();
  for (const auto k : order) {
    const double c = choice.validation_c_index[k];
    const double best_c = choice.validation_c_index[best];
    if (c > best_c || (c == best_c && path[k] > path[best])) best = k;
  }
  choice.best_c_index = choice.validation_c_index[best];
  if (rule == LambdaRule::one_se) {
    choice.c_index_se = c_index_jackknife_se(all_risks[best], validation_records);
    const double floor = choice.best_c_index - choice.c_index_se;
    for (const auto k : order) {
      if (choice.validation_c_index[k] >= floor && path[k] > path[best]) best = k;
    }
  }
  choice.lambda = path[best];
  return choice;
}

// ---------------------------------------------------------------------------
// Discrete-time GLM

std::string_view to_string(IntervalStatus status) {
  switch (status) {
    case IntervalStatus::estimated: return "estimated";
    case IntervalStatus::no_at_risk: return "no_at_risk";
    case IntervalStatus::no_events: return "no_events";
    case IntervalStatus::all_events: return "all_events";
  }
  return "estimated";
}

namespace {

IntervalStatus parse_interval_status(const std::string& text) {
  for (auto s : {IntervalStatus::estimated, IntervalStatus::no_at_risk, IntervalStatus::no_events,
                 IntervalStatus::all_events}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::parse, "unknown interval status '" + text + "'");
}

// Interval k (1-based) is (grid[k-1], grid[k]]; the first one also takes
// grid[0] itself.
struct PersonPeriods {
  std::vector<std::size_t> last_interval;  // number of intervals at risk
  std::vector<std::uint8_t> event_in_last;
};

PersonPeriods expand(std::span<const SurvivalRecord> records, const TimeGrid& grid) {
  PersonPeriods periods;
  const std::size_t intervals = grid.size() - 1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.time < grid.front() || r.time > grid.back()) {
      throw Error(ErrorCode::invalid_argument, "record " + std::to_string(i + 1) + " time " + std::to_string(r.time) +
                                                   " lies outside the grid");
    }
    std::size_t at_risk = 0;
    bool event = false;
    if (r.event) {
      at_risk = 1;
      while (at_risk < intervals && r.time > grid[at_risk]) ++at_risk;
      event = true;
    } else {
      while (at_risk < intervals && grid[at_risk + 1] <= r.time) ++at_risk;
    }
    periods.last_interval.push_back(at_risk);
    periods.event_in_last.push_back(event ? 1 : 0);
  }
  return periods;
}

}  // namespace

double GlmModel::predict_risk(std::span<const double> row) const {
  return standardizer.apply_row(row).dot(coefficients);
}

SurvivalCurve GlmModel::predict_survival(std::span<const double> row) const {
  const double lp = predict_risk(row);
  std::vector<double> values(grid.size());
  values[0] = 1.0;
  for (std::size_t k = 0; k < interval_count(); ++k) {
    double hazard = 0.0;
    switch (interval_status[k]) {
      case IntervalStatus::estimated: hazard = sigmoid(interval_intercepts[k] + lp); break;
      case IntervalStatus::all_events: hazard = 1.0; break;
      default: hazard = 0.0; break;
    }
    values[k + 1] = values[k] * (1.0 - hazard);
  }
  return SurvivalCurve(grid, std::move(values));
}

nlohmann::json GlmModel::to_json() const {
  auto intercepts = nlohmann::json::array();
  auto status = nlohmann::json::array();
  for (std::size_t k = 0; k < interval_count(); ++k) {
    intercepts.push_back(std::isfinite(interval_intercepts[k]) ? nlohmann::json(interval_intercepts[k])
                                                               : nlohmann::json(nullptr));
    status.push_back(to_string(interval_status[k]));
  }
  return {{"grid", grid},
          {"interval_intercepts", intercepts},
          {"interval_status", status},
          {"coefficients", vector_json(coefficients)},
          {"standardizer", standardizer.to_json()},
          {"iterations", iterations},
          {"converged", converged}};
}

GlmModel GlmModel::from_json(const nlohmann::json& j) {
  GlmModel m;
  m.grid = j.at("grid").get<TimeGrid>();
  for (const auto& s : j.at("interval_status")) m.interval_status.push_back(parse_interval_status(s.get<std::string>()));
  const auto& intercepts = j.at("interval_intercepts");
  for (std::size_t k = 0; k < intercepts.size(); ++k) {
    if (intercepts[k].is_null()) {
      m.interval_intercepts.push_back(m.interval_status[k] == IntervalStatus::all_events
                                          ? std::numeric_limits<double>::infinity()
                                          : -std::numeric_limits<double>::infinity());
    } else {
      m.interval_intercepts.push_back(intercepts[k].get<double>());
    }
  }
  m.coefficients = json_vector(j.at("coefficients"));
  m.standardizer = Standardizer::from_json(j.at("standardizer"));
  m.iterations = j.at("iterations").get<int>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

GlmModel fit_discrete_glm(const Matrix& x, std::span<const SurvivalRecord> records, const TimeGrid& grid) {
  validate_grid(grid);
  if (grid.size() < 2) throw Error(ErrorCode::invalid_argument, "grid needs at least one interval");
  if (static_cast<std::size_t>(x.rows()) != records.size()) {
    throw Error(ErrorCode::invalid_argument, "feature rows and records are not aligned");
  }
  if (!x.allFinite()) throw Error(ErrorCode::numerical, "features contain non-finite values");

  const std::size_t intervals = grid.size() - 1;
  const auto periods = expand(records, grid);
  GlmModel model;
  model.grid = grid;
  model.standardizer = Standardizer::fit(x);
  const Matrix z = model.standardizer.apply(x);
  const auto p = z.cols();
  const auto n = records.size();

  std::vector<double> at_risk(intervals, 0.0), events(intervals, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < periods.last_interval[i]; ++k) at_risk[k] += 1.0;
    if (periods.event_in_last[i]) events[periods.last_interval[i] - 1] += 1.0;
  }

  // Intervals whose MLE hazard sits on the boundary are fixed; only the others
  // enter the Newton system.
  model.interval_status.assign(intervals, IntervalStatus::estimated);
  model.interval_intercepts.assign(intervals, 0.0);
  std::vector<Eigen::Index> free_index(intervals, -1);
  Eigen::Index free_count = 0;
  for (std::size_t k = 0; k < intervals; ++k) {
    if (at_risk[k] == 0.0) {
      model.interval_status[k] = IntervalStatus::no_at_risk;
    } else if (events[k] == 0.0) {
      model.interval_status[k] = IntervalStatus::no_events;
    } else if (events[k] == at_risk[k]) {
      model.interval_status[k] = IntervalStatus::all_events;
    }
    if (model.interval_status[k] == IntervalStatus::estimated) {
      const double rate = events[k] / at_risk[k];
      model.interval_intercepts[k] = std::log(rate / (1.0 - rate));
      free_index[k] = free_count++;
    } else {
      model.interval_intercepts[k] = model.interval_status[k] == IntervalStatus::all_events
                                         ? std::numeric_limits<double>::infinity()
                                         : -std::numeric_limits<double>::infinity();
    }
  }
  model.coefficients = Vector::Zero(p);

  const Eigen::Index dim = free_count + p;
  Vector theta(dim);
  for (std::size_t k = 0; k < intervals; ++k) {
    if (free_index[k] >= 0) theta[free_index[k]] = model.interval_intercepts[k];
  }
  theta.tail(p).setZero();

  auto deviance = [&](const Vector& th) {
    const Vector lp = z * th.tail(p);
    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < periods.last_interval[i]; ++k) {
        if (free_index[k] < 0) continue;
        const double eta = th[free_index[k]] + lp[static_cast<Eigen::Index>(i)];
        const bool y = periods.event_in_last[i] && k + 1 == periods.last_interval[i];
        dev += 2.0 * (y ? softplus(-eta) : softplus(eta));
      }
    }
    return dev;
  };

  double current = deviance(theta);
  model.deviance_trace.push_back(current);
  constexpr int kMaxIterations = 100;
  constexpr int kMaxHalvings = 20;
  for (int iter = 1; iter <= kMaxIterations && dim > 0; ++iter) {
    model.iterations = iter;
    const Vector lp = z * theta.tail(p);
    Vector score = Vector::Zero(dim);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(dim, dim);
    Vector row_weight = Vector::Zero(static_cast<Eigen::Index>(n));
    Vector row_residual = Vector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t k = 0; k < periods.last_interval[i]; ++k) {
        const auto f = free_index[k];
        if (f < 0) continue;
        const double mu = sigmoid(theta[f] + lp[ii]);
        const double y = (periods.event_in_last[i] && k + 1 == periods.last_interval[i]) ? 1.0 : 0.0;
        const double w = mu * (1.0 - mu);
        score[f] += y - mu;
        info(f, f) += w;
        if (p > 0) info.block(f, free_count, 1, p) += w * z.row(ii);
        row_weight[ii] += w;
        row_residual[ii] += y - mu;
      }
    }
    if (p > 0) {
      score.tail(p) = z.transpose() * row_residual;
      info.bottomRightCorner(p, p) = z.transpose() * row_weight.asDiagonal() * z;
      info.block(free_count, 0, p, free_count) = info.block(0, free_count, free_count, p).transpose();
    }
    const Vector step = info.completeOrthogonalDecomposition().solve(score);
    if (!step.allFinite()) throw Error(ErrorCode::numerical, "GLM Newton step is not finite");

    double scale = 1.0;
    bool accepted = false;
    double next = current;
    Vector candidate;
    for (int halving = 0; halving <= kMaxHalvings; ++halving) {
      candidate = theta + scale * step;
      next = deviance(candidate);
      if (std::isfinite(next) && next <= current) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      model.converged = true;
      break;
    }
    const double improvement = current - next;
    theta = candidate;
    current = next;
    model.deviance_trace.push_back(current);
    if ((scale * step).cwiseAbs().maxCoeff() < 1e-10 || improvement < 1e-12 * (1.0 + std::abs(current))) {
      model.converged = true;
      break;
    }
  }
  if (dim == 0) model.converged = true;

  for (std::size_t k = 0; k < intervals; ++k) {
    if (free_index[k] >= 0) model.interval_intercepts[k] = theta[free_index[k]];
  }
  model.coefficients = theta.tail(p);
  return model;
}

}  // namespace tkr
