#include "tkr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "tkr/csv.hpp"

namespace tkr {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + ": " + std::to_string(a) + " values for " +
                                                 std::to_string(b) + " records");
  }
}

// Known event-free at t: followed past t, or censored exactly at t.
bool event_free_at(const SurvivalRecord& r, double t) { return r.time > t || (r.time == t && !r.event); }

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t index) {
    for (std::size_t i = index + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted indices < index.
  std::size_t count_below(std::size_t index) const {
    std::size_t total = 0;
    for (std::size_t i = index; i > 0; i -= i & (~i + 1)) total += tree_[i];
    return total;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Concordance

double concordance_index(std::span<const double> risks, std::span<const SurvivalRecord> records) {
  check_aligned(risks.size(), records.size(), "concordance_index");
  const std::size_t n = records.size();
  std::vector<double> levels(risks.begin(), risks.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), risks[i]) - levels.begin());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return records[a].time > records[b].time; });

  // Walk times from latest to earliest; the tree holds every record with a
  // strictly later time than the current block.
  Fenwick later(levels.size());
  std::size_t inserted = 0;
  double concordant = 0.0, tied = 0.0, comparable = 0.0;
  for (std::size_t begin = 0; begin < n;) {
    std::size_t end = begin;
    while (end < n && records[order[end]].time == records[order[begin]].time) ++end;
    for (std::size_t k = begin; k < end; ++k) {
      const auto i = order[k];
      if (!records[i].event) continue;
      const auto below = later.count_below(rank[i]);
      const auto at_or_below = later.count_below(rank[i] + 1);
      concordant += static_cast<double>(below);
      tied += static_cast<double>(at_or_below - below);
      comparable += static_cast<double>(inserted);
    }
    for (std::size_t k = begin; k < end; ++k) later.add(rank[order[k]]);
    inserted += end - begin;
    begin = end;
  }
  if (comparable == 0.0) throw Error(ErrorCode::validation, "no comparable pairs for the concordance index");
  return (concordant + 0.5 * tied) / comparable;
}

// ---------------------------------------------------------------------------
// Censoring weights

CensoringDistribution::CensoringDistribution(std::span<const SurvivalRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return records[a].time < records[b].time; });
  double at_risk = static_cast<double>(records.size());
  double g = 1.0;
  for (std::size_t begin = 0; begin < order.size();) {
    std::size_t end = begin;
    double censored = 0.0;
    while (end < order.size() && records[order[end]].time == records[order[begin]].time) {
      if (!records[order[end]].event) censored += 1.0;
      ++end;
    }
    if (censored > 0.0) {
      g *= 1.0 - censored / at_risk;
      times_.push_back(records[order[begin]].time);
      survival_.push_back(g);
    }
    at_risk -= static_cast<double>(end - begin);
    begin = end;
  }
}

double CensoringDistribution::before(double t) const {
  const auto k = static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t) - times_.begin());
  return k == 0 ? 1.0 : survival_[k - 1];
}

// ---------------------------------------------------------------------------
// Time-dependent AUC

AucResult cumulative_dynamic_auc(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records,
                                 std::span<const double> times) {
  check_aligned(curves.size(), records.size(), "cumulative_dynamic_auc");
  if (times.empty()) throw Error(ErrorCode::invalid_argument, "no evaluation times");
  const CensoringDistribution censoring(records);
  AucResult result;
  std::vector<std::uint8_t> excluded(records.size(), 0);
  double sum = 0.0;
  for (const double t : times) {
    std::vector<double> control_risk;
    std::vector<std::pair<double, double>> cases;  // (risk, weight)
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (!curves[i].grid().empty() && (t < curves[i].grid().front() || t > curves[i].grid().back())) {
        throw Error(ErrorCode::invalid_argument, "evaluation time outside the prediction grid");
      }
      const double risk = 1.0 - curves[i].value_at(t);
      if (r.event && r.time <= t) {
        const double g = censoring.before(r.time);
        if (g <= 0.0) {
          excluded[i] = 1;
          continue;
        }
        cases.emplace_back(risk, 1.0 / g);
      } else if (event_free_at(r, t)) {
        control_risk.push_back(risk);
      }
    }
    if (cases.empty() || control_risk.empty()) {
      result.undefined_times.push_back(t);
      continue;
    }
    std::sort(control_risk.begin(), control_risk.end());
    double numerator = 0.0, weight_sum = 0.0;
    for (const auto& [risk, w] : cases) {
      const auto lower = std::lower_bound(control_risk.begin(), control_risk.end(), risk);
      const auto upper = std::upper_bound(lower, control_risk.end(), risk);
      const auto below = static_cast<double>(lower - control_risk.begin());
      const auto ties = static_cast<double>(upper - lower);
      numerator += w * (below + 0.5 * ties);
      weight_sum += w;
    }
    const double auc = numerator / (weight_sum * static_cast<double>(control_risk.size()));
    result.per_time[t] = auc;
    sum += auc;
  }
  result.excluded = static_cast<std::size_t>(std::count(excluded.begin(), excluded.end(), 1));
  if (result.per_time.empty()) {
    throw Error(ErrorCode::validation, "AUC undefined at every evaluation time (no cases or no controls)");
  }
  result.mean = sum / static_cast<double>(result.per_time.size());
  return result;
}

// ---------------------------------------------------------------------------
// Brier scores

double brier_score(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records, double t) {
  check_aligned(curves.size(), records.size(), "brier_score");
  if (records.empty()) throw Error(ErrorCode::invalid_argument, "no records");
  const CensoringDistribution censoring(records);
  const double g_t = censoring.before(t);
  double total = 0.0;
  double weight_mass = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const double s = curves[i].value_at(t);
    if (r.event && r.time <= t) {
      const double g = censoring.before(r.time);
      if (g > 0.0) {
        total += s * s / g;
        weight_mass += 1.0 / g;
      }
    } else if (event_free_at(r, t) && g_t > 0.0) {
      total += (1.0 - s) * (1.0 - s) / g_t;
      weight_mass += 1.0 / g_t;
    }
  }
  if (weight_mass == 0.0) throw Error(ErrorCode::validation, "all censoring weights are zero at this time");
  return total / static_cast<double>(records.size());
}

double integrated_brier(std::span<const SurvivalCurve> curves, std::span<const SurvivalRecord> records,
                        std::span<const double> grid) {
  if (grid.size() < 2) throw Error(ErrorCode::invalid_argument, "integrated Brier score needs >= 2 grid points");
  double area = 0.0;
  double previous = brier_score(curves, records, grid[0]);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double current = brier_score(curves, records, grid[k]);
    area += 0.5 * (previous + current) * (grid[k] - grid[k - 1]);
    previous = current;
  }
  return area / (grid.back() - grid.front());
}

// ---------------------------------------------------------------------------
// Accuracy

void ConfusionMatrix::write_csv(std::ostream& out) const {
  out << "true\\predicted";
  for (const auto& label : labels) out << ',' << label;
  out << '\n';
  for (std::size_t r = 0; r < counts.size(); ++r) {
    out << labels[r];
    for (auto c : counts[r]) out << ',' << c;
    out << '\n';
  }
}

std::size_t nearest_grid_index(const TimeGrid& grid, double t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (std::abs(grid[k] - t) <= std::abs(grid[best] - t)) best = k;
  }
  return best;
}

AccuracyResult accuracy_pm1(std::span<const TimePrediction> predictions, std::span<const SurvivalRecord> records,
                            const TimeGrid& grid) {
  check_aligned(predictions.size(), records.size(), "accuracy_pm1");
  validate_grid(grid);
  AccuracyResult result;
  const std::size_t classes = grid.size() + 1;
  for (double g : grid) result.confusion.labels.push_back(csv::format_double(g));
  result.confusion.labels.emplace_back("beyond_horizon");
  result.confusion.counts.assign(classes, std::vector<std::size_t>(classes, 0));

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto& pred = predictions[i];
    bool correct = false;
    if (r.event) {
      const auto truth = nearest_grid_index(grid, r.time);
      const auto column = pred.is_beyond_horizon() ? grid.size() : nearest_grid_index(grid, pred.year());
      ++result.confusion.counts[truth][column];
      correct = !pred.is_beyond_horizon() && std::abs(grid[truth] - pred.year()) <= 1.0 + 1e-12;
    } else {
      correct = pred.is_beyond_horizon() || pred.year() > r.time;
    }
    if (correct) ++result.correct;
  }
  result.total = records.size();
  result.accuracy = result.total > 0 ? static_cast<double>(result.correct) / static_cast<double>(result.total) : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

std::vector<double> signed_rank_midranks(std::span<const double> differences) {
  std::vector<std::size_t> order(differences.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return std::abs(differences[a]) < std::abs(differences[b]); });
  std::vector<double> ranks(differences.size());
  for (std::size_t begin = 0; begin < order.size();) {
    std::size_t end = begin;
    while (end < order.size() && std::abs(differences[order[end]]) == std::abs(differences[order[begin]])) ++end;
    const double midrank = 0.5 * static_cast<double>(begin + 1 + end);
    for (std::size_t k = begin; k < end; ++k) ranks[order[k]] = midrank;
    begin = end;
  }
  return ranks;
}

double wilcoxon_exact_p(std::span<const double> ranks, double statistic) {
  // Midranks are multiples of 1/2, so doubled ranks index an integer
  // distribution of the positive-rank sum.
  std::vector<long> doubled(ranks.size());
  long max_sum = 0;
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    doubled[k] = std::lround(2.0 * ranks[k]);
    max_sum += doubled[k];
  }
  std::vector<double> ways(static_cast<std::size_t>(max_sum) + 1, 0.0);
  ways[0] = 1.0;
  long reach = 0;
  for (long r : doubled) {
    for (long s = reach; s >= 0; --s) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
    reach += r;
  }
  const long observed = std::lround(2.0 * statistic);
  double lower = 0.0, upper = 0.0, total = 0.0;
  for (long s = 0; s <= max_sum; ++s) {
    const double w = ways[static_cast<std::size_t>(s)];
    total += w;
    if (s <= observed) lower += w;
    if (s >= observed) upper += w;
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

double wilcoxon_normal_p(std::span<const double> ranks, double statistic) {
  const auto n = static_cast<double>(ranks.size());
  const double mean = n * (n + 1.0) / 4.0;
  double variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  std::vector<double> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t begin = 0; begin < sorted.size();) {
    std::size_t end = begin;
    while (end < sorted.size() && sorted[end] == sorted[begin]) ++end;
    const auto t = static_cast<double>(end - begin);
    variance -= (t * t * t - t) / 48.0;
    begin = end;
  }
  if (!(variance > 0.0)) return 1.0;
  const double z = std::max(0.0, std::abs(statistic - mean) - 0.5) / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::invalid_argument, "paired samples differ in length");
  std::vector<double> differences;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d)) throw Error(ErrorCode::numerical, "non-finite paired difference");
    if (d != 0.0) differences.push_back(d);
  }
  WilcoxonResult result;
  result.n_used = differences.size();
  if (differences.empty()) {
    result.degenerate = true;
    result.p_value = 1.0;
    return result;
  }
  if (differences.size() < 5) {
    throw Error(ErrorCode::invalid_argument, "Wilcoxon test needs at least 5 nonzero differences, found " +
                                                 std::to_string(differences.size()));
  }
  const auto ranks = signed_rank_midranks(differences);
  for (std::size_t k = 0; k < differences.size(); ++k) {
    if (differences[k] > 0.0) result.statistic += ranks[k];
  }
  result.exact = differences.size() <= kWilcoxonExactLimit;
  result.p_value = result.exact ? wilcoxon_exact_p(ranks, result.statistic) : wilcoxon_normal_p(ranks, result.statistic);
  return result;
}

// ---------------------------------------------------------------------------
// Report

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json per_time = nlohmann::json::object();
  for (const auto& [t, auc] : per_time_auc) per_time[csv::format_double(t)] = auc;
  nlohmann::json j = {{"accuracy", accuracy},
                      {"correct", correct},
                      {"total", total},
                      {"c_index", c_index},
                      {"mean_auc", mean_auc},
                      {"ibs", ibs},
                      {"per_time_auc", per_time},
                      {"auc_excluded", auc_excluded},
                      {"auc_undefined_times", auc_undefined_times},
                      {"confusion", {{"labels", confusion.labels}, {"counts", confusion.counts}}}};
  if (comparison) {
    j["wilcoxon"] = {{"statistic", comparison->statistic},
                     {"p_value", comparison->p_value},
                     {"n_used", comparison->n_used},
                     {"exact", comparison->exact},
                     {"degenerate", comparison->degenerate}};
  }
  return j;
}

void EvaluationReport::write_table(std::ostream& out) const {
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(4);
  out << "metric          value\n";
  out << "accuracy        " << accuracy << "  (" << correct << "/" << total << ")\n";
  out << "c_index         " << c_index << '\n';
  out << "mean_auc        " << mean_auc << '\n';
  out << "ibs             " << ibs << '\n';
  for (const auto& [t, auc] : per_time_auc) out << "auc@" << std::setw(11) << std::left << t << ' ' << auc << '\n';
  if (comparison) {
    out << "wilcoxon_W+     " << comparison->statistic << '\n';
    out << "wilcoxon_p      " << comparison->p_value << (comparison->degenerate ? "  (degenerate)" : "") << '\n';
  }
  out.flags(flags);
}

EvaluationReport evaluate(std::span<const SurvivalCurve> curves, std::span<const double> risks,
                          std::span<const TimePrediction> predictions, std::span<const SurvivalRecord> records,
                          const TimeGrid& grid) {
  EvaluationReport report;
  const auto acc = accuracy_pm1(predictions, records, grid);
  report.accuracy = acc.accuracy;
  report.correct = acc.correct;
  report.total = acc.total;
  report.confusion = acc.confusion;
  report.c_index = concordance_index(risks, records);
  const std::vector<double> auc_times(grid.begin() + 1, grid.end());
  const auto auc = cumulative_dynamic_auc(curves, records, auc_times);
  report.mean_auc = auc.mean;
  report.per_time_auc = auc.per_time;
  report.auc_excluded = auc.excluded;
  report.auc_undefined_times = auc.undefined_times;
  report.ibs = integrated_brier(curves, records, grid);
  return report;
}

}  // namespace tkr
