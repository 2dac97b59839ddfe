#pragma once

// Nonparametric survival estimators, step-curve types and the
// threshold-crossing readout of a predicted event year.

#include <compare>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tkr/dataio.hpp"

namespace tkr {

using TimeGrid = std::vector<double>;

/// 0, 1, ..., horizon.
TimeGrid yearly_grid(int horizon = 9);

void validate_grid(const TimeGrid& grid);

/// Right-continuous survival step function sampled on a grid.
class SurvivalCurve {
 public:
  SurvivalCurve() = default;
  /// Throws unless the grid is strictly increasing and the values are in
  /// [0, 1] and nonincreasing.
  SurvivalCurve(TimeGrid grid, std::vector<double> values);

  const TimeGrid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  /// Value at the last grid point <= t; 1 before the first grid point.
  double value_at(double t) const;

 private:
  TimeGrid grid_;
  std::vector<double> values_;
};

/// Cumulative hazard step function sampled on a grid.
class HazardCurve {
 public:
  HazardCurve() = default;
  /// Throws unless values are nonnegative and nondecreasing.
  HazardCurve(TimeGrid grid, std::vector<double> values);

  const TimeGrid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  /// Value at the last grid point <= t; 0 before the first grid point.
  double value_at(double t) const;

 private:
  TimeGrid grid_;
  std::vector<double> values_;
};

/// A predicted event year on the grid, or "beyond the horizon". Ordered with
/// beyond_horizon above every year.
class TimePrediction {
 public:
  static TimePrediction at(double year) { return TimePrediction(year); }
  static TimePrediction beyond_horizon() { return TimePrediction(std::nullopt); }

  bool is_beyond_horizon() const { return !year_; }
  /// Precondition: !is_beyond_horizon().
  double year() const { return *year_; }

  std::partial_ordering operator<=>(const TimePrediction& other) const;
  bool operator==(const TimePrediction& other) const = default;

 private:
  explicit TimePrediction(std::optional<double> year) : year_(year) {}
  std::optional<double> year_;
};

SurvivalCurve kaplan_meier(std::span<const SurvivalRecord> records, const TimeGrid& grid);

/// H(t) = sum over event times u <= t of d(u) / n(u).
HazardCurve nelson_aalen(std::span<const SurvivalRecord> records, const TimeGrid& grid);

SurvivalCurve survival_from_chf(const HazardCurve& chf);

inline constexpr double kDefaultThreshold = 0.4;

/// Latest grid time at which S is strictly above `threshold`, provided S
/// drops to or below it somewhere on the grid. Curves that stay above the
/// threshold map to beyond_horizon; curves never above it map to the grid
/// origin.
TimePrediction time_to_event_from_curve(const SurvivalCurve& curve, double threshold = kDefaultThreshold);

/// `time,value` rows for plotting.
void write_curve_csv(std::ostream& out, const TimeGrid& grid, std::span<const double> values);

}  // namespace tkr
