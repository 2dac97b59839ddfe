#include "tkr/survcore.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "tkr/csv.hpp"

namespace tkr {

namespace {

constexpr double kMonotoneSlack = 1e-12;

// Distinct event times with their event counts and at-risk counts.
struct EventTable {
  std::vector<double> times;
  std::vector<double> events;
  std::vector<double> at_risk;
};

EventTable tabulate(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw Error(ErrorCode::invalid_argument, "no records to estimate from");
  std::map<double, std::pair<double, double>> by_time;  // time -> (events, leaving)
  for (const auto& r : records) {
    auto& slot = by_time[r.time];
    slot.first += r.event ? 1.0 : 0.0;
    slot.second += 1.0;
  }
  EventTable table;
  double at_risk = static_cast<double>(records.size());
  for (const auto& [time, counts] : by_time) {
    if (counts.first > 0.0) {
      table.times.push_back(time);
      table.events.push_back(counts.first);
      table.at_risk.push_back(at_risk);
    }
    at_risk -= counts.second;
  }
  return table;
}

template <class Step>
std::vector<double> sample_on_grid(const EventTable& table, const TimeGrid& grid, double start, Step step) {
  std::vector<double> values(grid.size());
  double current = start;
  std::size_t k = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    while (k < table.times.size() && table.times[k] <= grid[g]) {
      current = step(current, table.events[k], table.at_risk[k]);
      ++k;
    }
    values[g] = current;
  }
  return values;
}

std::size_t last_index_at_or_before(const TimeGrid& grid, double t) {
  return static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), t) - grid.begin());
}

}  // namespace

TimeGrid yearly_grid(int horizon) {
  if (horizon < 1) throw Error(ErrorCode::invalid_argument, "horizon must be at least 1 year");
  TimeGrid grid(static_cast<std::size_t>(horizon) + 1);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = static_cast<double>(k);
  return grid;
}

void validate_grid(const TimeGrid& grid) {
  if (grid.empty()) throw Error(ErrorCode::invalid_argument, "empty time grid");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!std::isfinite(grid[k])) throw Error(ErrorCode::invalid_argument, "non-finite grid time");
    if (k > 0 && !(grid[k] > grid[k - 1])) {
      throw Error(ErrorCode::invalid_argument, "time grid must be strictly increasing");
    }
  }
}

SurvivalCurve::SurvivalCurve(TimeGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  validate_grid(grid_);
  if (values_.size() != grid_.size()) throw Error(ErrorCode::invalid_argument, "curve/grid length mismatch");
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const double v = values_[k];
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::validation, "survival value outside [0, 1]");
    if (k > 0 && v > values_[k - 1] + kMonotoneSlack) {
      throw Error(ErrorCode::validation, "survival curve is increasing");
    }
  }
}

double SurvivalCurve::value_at(double t) const {
  const auto k = last_index_at_or_before(grid_, t);
  return k == 0 ? 1.0 : values_[k - 1];
}

HazardCurve::HazardCurve(TimeGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  validate_grid(grid_);
  if (values_.size() != grid_.size()) throw Error(ErrorCode::invalid_argument, "curve/grid length mismatch");
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const double v = values_[k];
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::validation, "cumulative hazard must be >= 0");
    if (k > 0 && v + kMonotoneSlack < values_[k - 1]) {
      throw Error(ErrorCode::validation, "cumulative hazard is decreasing");
    }
  }
}

double HazardCurve::value_at(double t) const {
  const auto k = last_index_at_or_before(grid_, t);
  return k == 0 ? 0.0 : values_[k - 1];
}

std::partial_ordering TimePrediction::operator<=>(const TimePrediction& other) const {
  if (!year_ && !other.year_) return std::partial_ordering::equivalent;
  if (!year_) return std::partial_ordering::greater;
  if (!other.year_) return std::partial_ordering::less;
  return *year_ <=> *other.year_;
}

SurvivalCurve kaplan_meier(std::span<const SurvivalRecord> records, const TimeGrid& grid) {
  const auto table = tabulate(records);
  auto values = sample_on_grid(table, grid, 1.0,
                               [](double s, double d, double n) { return s * (1.0 - d / n); });
  return SurvivalCurve(grid, std::move(values));
}

HazardCurve nelson_aalen(std::span<const SurvivalRecord> records, const TimeGrid& grid) {
  const auto table = tabulate(records);
  auto values = sample_on_grid(table, grid, 0.0, [](double h, double d, double n) { return h + d / n; });
  return HazardCurve(grid, std::move(values));
}

SurvivalCurve survival_from_chf(const HazardCurve& chf) {
  std::vector<double> values(chf.size());
  std::transform(chf.values().begin(), chf.values().end(), values.begin(),
                 [](double h) { return std::exp(-h); });
  return SurvivalCurve(chf.grid(), std::move(values));
}

TimePrediction time_to_event_from_curve(const SurvivalCurve& curve, double threshold) {
  const auto& values = curve.values();
  std::optional<std::size_t> last_above;
  bool crossed = false;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] > threshold) {
      last_above = k;
    } else {
      crossed = true;
    }
  }
  if (!crossed) return TimePrediction::beyond_horizon();
  // Nonincreasing curves make "last index above" the crossing year.
  return TimePrediction::at(curve.grid()[last_above.value_or(0)]);
}

void write_curve_csv(std::ostream& out, const TimeGrid& grid, std::span<const double> values) {
  out << "time,value\n";
  for (std::size_t k = 0; k < grid.size() && k < values.size(); ++k) {
    out << csv::format_double(grid[k]) << ',' << csv::format_double(values[k]) << '\n';
  }
}

}  // namespace tkr
