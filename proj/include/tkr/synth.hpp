#pragma once

// Ground-truth survival data: standard-normal covariates, Weibull
// proportional-hazards event times, calibrated uniform censoring and
// administrative censoring at the horizon.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tkr/dataio.hpp"

namespace tkr {

/// Adds coefficient * x[a] * x[b] to the log-hazard.
struct Interaction {
  std::size_t a = 0;
  std::size_t b = 0;
  double coefficient = 0.0;
};

struct SynthSpec {
  std::size_t n = 1000;
  std::size_t p = 50;
  /// Empty means all zeros; otherwise length p.
  std::vector<double> true_beta;
  std::vector<Interaction> interactions;
  double weibull_shape = 1.5;
  double weibull_scale = 5.0;
  double censor_rate = 0.3;
  double horizon = 9.0;
  std::uint64_t seed = 1;
  /// Fraction of subjects contributing both knees.
  double bilateral_fraction = 0.0;
};

/// `count` leading coefficients of the given magnitude with alternating
/// signs, zeros elsewhere.
std::vector<double> sparse_beta(std::size_t p, std::size_t count, double magnitude);

struct SynthData {
  Dataset dataset;
  std::vector<double> true_risk;
  std::vector<double> latent_event_time;
  /// Upper end of the uniform censoring window (infinite when administrative
  /// censoring alone reaches the target).
  double censor_window = 0.0;
  double achieved_censoring = 0.0;
};

double log_hazard_ratio(const SynthSpec& spec, std::span<const double> row);

SynthData generate(const SynthSpec& spec);

/// exp(-(t / scale)^shape * exp(log_hazard_ratio(row))).
double true_survival(const SynthSpec& spec, std::span<const double> row, double t);

}  // namespace tkr
