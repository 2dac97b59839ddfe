#include "tkr/losses.hpp"

#include <cmath>
#include <numeric>

#include "tkr/common.hpp"

namespace tkr {

namespace {
constexpr double kSumTolerance = 1e-9;
}

ClassDistribution::ClassDistribution(std::vector<double> probabilities) : probabilities_(std::move(probabilities)) {
  if (probabilities_.empty()) throw Error(ErrorCode::invalid_argument, "empty distribution");
  double sum = 0.0;
  for (double p : probabilities_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::invalid_argument, "probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::invalid_argument, "probabilities sum to " + std::to_string(sum) + ", not 1");
  }
}

SoftLabel::SoftLabel(std::vector<double> bin_edges, ClassDistribution distribution)
    : bin_edges_(std::move(bin_edges)), distribution_(std::move(distribution)) {
  if (bin_edges_.size() != distribution_.size() + 1) {
    throw Error(ErrorCode::invalid_argument, "a soft label needs one more edge than bins");
  }
  for (std::size_t k = 1; k < bin_edges_.size(); ++k) {
    if (!(bin_edges_[k] > bin_edges_[k - 1])) throw Error(ErrorCode::invalid_argument, "bin edges must increase");
  }
}

std::vector<double> SoftLabel::bin_centers() const {
  std::vector<double> centers(distribution_.size());
  for (std::size_t k = 0; k < centers.size(); ++k) centers[k] = 0.5 * (bin_edges_[k] + bin_edges_[k + 1]);
  return centers;
}

SoftLabel soft_label(double y, const SoftLabelOptions& options) {
  if (options.bins < 2) throw Error(ErrorCode::invalid_argument, "soft labels need at least 2 bins");
  if (!(options.variance > 0.0)) throw Error(ErrorCode::invalid_argument, "variance must be positive");
  if (!(options.range_end > options.range_begin)) throw Error(ErrorCode::invalid_argument, "empty label range");
  if (!(y >= options.range_begin && y <= options.range_end)) {
    throw Error(ErrorCode::invalid_argument, "label " + std::to_string(y) + " lies outside the bin range");
  }
  const auto bins = static_cast<std::size_t>(options.bins);
  const double width = (options.range_end - options.range_begin) / static_cast<double>(bins);
  std::vector<double> edges(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) edges[k] = options.range_begin + width * static_cast<double>(k);
  edges.back() = options.range_end;

  std::vector<double> mass(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double center = 0.5 * (edges[k] + edges[k + 1]);
    const double z = center - y;
    mass[k] = std::exp(-z * z / (2.0 * options.variance));
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (auto& m : mass) m /= total;
  return SoftLabel(std::move(edges), ClassDistribution(std::move(mass)));
}

double kl_divergence(const ClassDistribution& target, const ClassDistribution& predicted) {
  if (target.size() != predicted.size()) throw Error(ErrorCode::invalid_argument, "distribution lengths differ");
  double kl = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double t = target[k];
    if (t == 0.0) continue;
    if (predicted[k] == 0.0) {
      throw Error(ErrorCode::numerical, "KL divergence is infinite: predicted mass 0 where target > 0");
    }
    kl += t * std::log(t / predicted[k]);
  }
  return kl;
}

double entropy(const ClassDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probabilities()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double expected_time(const SoftLabel& label) {
  const auto centers = label.bin_centers();
  double mean = 0.0;
  for (std::size_t k = 0; k < centers.size(); ++k) mean += label.distribution()[k] * centers[k];
  return mean;
}

TwistTerms twist_loss(std::span<const std::pair<ClassDistribution, ClassDistribution>> pairs,
                      double sharpness_weight, double diversity_weight) {
  if (pairs.empty()) throw Error(ErrorCode::invalid_argument, "empty batch");
  const std::size_t classes = pairs.front().first.size();
  std::vector<double> mean(classes, 0.0);
  TwistTerms terms;
  for (const auto& [a, b] : pairs) {
    if (a.size() != classes || b.size() != classes) {
      throw Error(ErrorCode::invalid_argument, "all distributions in a batch must have the same length");
    }
    terms.consistency += 0.5 * (kl_divergence(a, b) + kl_divergence(b, a));
    terms.sharpness += entropy(a) + entropy(b);
    for (std::size_t k = 0; k < classes; ++k) mean[k] += a[k] + b[k];
  }
  const auto batch = static_cast<double>(pairs.size());
  terms.consistency /= batch;
  terms.sharpness /= 2.0 * batch;
  for (auto& m : mean) m /= 2.0 * batch;
  double diversity = 0.0;
  for (double m : mean) {
    if (m > 0.0) diversity -= m * std::log(m);
  }
  terms.diversity = diversity;
  terms.total = terms.consistency + sharpness_weight * terms.sharpness - diversity_weight * terms.diversity;
  return terms;
}

}  // namespace tkr
