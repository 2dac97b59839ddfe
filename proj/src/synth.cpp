#include "tkr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tkr/common.hpp"

namespace tkr {

namespace {

void validate(const SynthSpec& spec) {
  if (spec.n == 0) throw Error(ErrorCode::invalid_argument, "n must be positive");
  if (!spec.true_beta.empty() && spec.true_beta.size() != spec.p) {
    throw Error(ErrorCode::invalid_argument, "true_beta must have length p");
  }
  for (const auto& term : spec.interactions) {
    if (term.a >= spec.p || term.b >= spec.p) throw Error(ErrorCode::invalid_argument, "interaction index out of range");
  }
  if (!(spec.weibull_shape > 0.0) || !(spec.weibull_scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "Weibull shape and scale must be positive");
  }
  if (!(spec.censor_rate >= 0.0 && spec.censor_rate < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "censor_rate must lie in [0, 1)");
  }
  if (!(spec.horizon > 0.0)) throw Error(ErrorCode::invalid_argument, "horizon must be positive");
  if (!(spec.bilateral_fraction >= 0.0 && spec.bilateral_fraction <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "bilateral_fraction must lie in [0, 1]");
  }
}

double censored_fraction(std::span<const double> event_time, std::span<const double> censor_draw, double window,
                         double horizon) {
  std::size_t censored = 0;
  for (std::size_t i = 0; i < event_time.size(); ++i) {
    const double limit = std::min(window * censor_draw[i], horizon);
    if (event_time[i] > limit) ++censored;
  }
  return static_cast<double>(censored) / static_cast<double>(event_time.size());
}

}  // namespace

std::vector<double> sparse_beta(std::size_t p, std::size_t count, double magnitude) {
  std::vector<double> beta(p, 0.0);
  for (std::size_t k = 0; k < std::min(count, p); ++k) beta[k] = (k % 2 == 0 ? 1.0 : -1.0) * magnitude;
  return beta;
}

double log_hazard_ratio(const SynthSpec& spec, std::span<const double> row) {
  if (row.size() != spec.p) throw Error(ErrorCode::invalid_argument, "row length does not match p");
  double eta = 0.0;
  for (std::size_t j = 0; j < spec.true_beta.size(); ++j) eta += spec.true_beta[j] * row[j];
  for (const auto& term : spec.interactions) eta += term.coefficient * row[term.a] * row[term.b];
  return eta;
}

double true_survival(const SynthSpec& spec, std::span<const double> row, double t) {
  if (!(t >= 0.0)) throw Error(ErrorCode::invalid_argument, "t must be >= 0");
  return std::exp(-std::pow(t / spec.weibull_scale, spec.weibull_shape) * std::exp(log_hazard_ratio(spec, row)));
}

SynthData generate(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);

  std::vector<Column> columns;
  for (std::size_t j = 0; j < spec.p; ++j) columns.push_back({"x" + std::to_string(j + 1), ColumnKind::quantitative, {}});
  SynthData out;
  out.dataset.features = FeatureTable(std::move(columns), spec.n);

  std::vector<double> censor_draw(spec.n);
  std::vector<double> row(spec.p);
  std::size_t subject = 0;
  bool second_knee = false;
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = 0; j < spec.p; ++j) {
      row[j] = rng.normal();
      out.dataset.features.set(i, j, row[j]);
    }
    const double eta = log_hazard_ratio(spec, row);
    // Inverse transform of S(t) = exp(-(t/scale)^shape * e^eta).
    const double u = rng.uniform_open();
    const double event_time = spec.weibull_scale * std::pow(-std::log(u) * std::exp(-eta), 1.0 / spec.weibull_shape);
    censor_draw[i] = rng.uniform_open();
    const double bilateral_draw = rng.uniform();

    SurvivalRecord record;
    if (second_knee) {
      record.subject_id = "S" + std::to_string(subject);
      record.side = Side::right;
      second_knee = false;
    } else {
      ++subject;
      record.subject_id = "S" + std::to_string(subject);
      record.side = Side::left;
      second_knee = bilateral_draw < spec.bilateral_fraction;
    }
    out.dataset.records.push_back(std::move(record));
    out.true_risk.push_back(eta);
    out.latent_event_time.push_back(event_time);
  }

  // The censored fraction is nonincreasing in the window, so bisection on a
  // log scale finds the smallest window reaching the target.
  const double admin_only = censored_fraction(out.latent_event_time, censor_draw,
                                              std::numeric_limits<double>::infinity(), spec.horizon);
  double window = std::numeric_limits<double>::infinity();
  if (spec.censor_rate > admin_only) {
    double lo = 1e-6 * spec.horizon;
    double hi = 1e6 * spec.horizon;
    for (int iter = 0; iter < 200; ++iter) {
      const double mid = std::sqrt(lo * hi);
      if (censored_fraction(out.latent_event_time, censor_draw, mid, spec.horizon) > spec.censor_rate) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    window = hi;
  }
  out.censor_window = window;

  std::size_t censored = 0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double limit = std::min(window * censor_draw[i], spec.horizon);
    auto& record = out.dataset.records[i];
    if (out.latent_event_time[i] <= limit) {
      record.time = out.latent_event_time[i];
      record.event = true;
    } else {
      record.time = limit;
      record.event = false;
      ++censored;
    }
  }
  out.achieved_censoring = static_cast<double>(censored) / static_cast<double>(spec.n);
  return out;
}

}  // namespace tkr
