#pragma once

// Distribution math behind the image-model objectives: Gaussian soft labels
// over discretized time bins, KL divergence, the expectation readout and the
// twin-class-distribution (consistency / sharpness / diversity) loss terms.

#include <span>
#include <utility>
#include <vector>

namespace tkr {

/// Probability vector over C classes.
class ClassDistribution {
 public:
  ClassDistribution() = default;
  /// Throws unless entries are nonnegative and sum to 1 within 1e-9.
  explicit ClassDistribution(std::vector<double> probabilities);

  const std::vector<double>& probabilities() const { return probabilities_; }
  std::size_t size() const { return probabilities_.size(); }
  double operator[](std::size_t k) const { return probabilities_[k]; }

 private:
  std::vector<double> probabilities_;
};

/// A ClassDistribution over time bins with their edges.
class SoftLabel {
 public:
  SoftLabel(std::vector<double> bin_edges, ClassDistribution distribution);

  const std::vector<double>& bin_edges() const { return bin_edges_; }
  const ClassDistribution& distribution() const { return distribution_; }
  std::vector<double> bin_centers() const;

 private:
  std::vector<double> bin_edges_;
  ClassDistribution distribution_;
};

struct SoftLabelOptions {
  int bins = 30;
  double variance = 4.0;
  double range_begin = 0.0;
  double range_end = 9.0;
};

/// Gaussian density with mean y evaluated at equal-width bin centers over the
/// range, renormalized to sum to 1.
SoftLabel soft_label(double y, const SoftLabelOptions& options = {});

/// sum_i target_i ln(target_i / predicted_i), with 0 ln 0 = 0. Throws when
/// predicted_i = 0 < target_i.
double kl_divergence(const ClassDistribution& target, const ClassDistribution& predicted);

/// Shannon entropy in nats.
double entropy(const ClassDistribution& dist);

/// Probability-weighted mean of the bin centers.
double expected_time(const SoftLabel& label);

struct TwistTerms {
  double total = 0.0;
  double consistency = 0.0;
  double sharpness = 0.0;
  double diversity = 0.0;
};

/// consistency: batch mean of the symmetric KL between twins;
/// sharpness: mean entropy over all 2B distributions;
/// diversity: entropy of the mean of all 2B distributions;
/// total = consistency + sharpness_weight * sharpness - diversity_weight * diversity.
TwistTerms twist_loss(std::span<const std::pair<ClassDistribution, ClassDistribution>> pairs,
                      double sharpness_weight = 1.0, double diversity_weight = 1.0);

}  // namespace tkr
