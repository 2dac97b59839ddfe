#pragma once

// Random survival forest: log-rank split search, Nelson-Aalen leaves and
// ensemble cumulative hazard / survival curves on a fixed time grid.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "tkr/common.hpp"
#include "tkr/dataio.hpp"
#include "tkr/survcore.hpp"

namespace tkr {

struct RsfParams {
  int n_trees = 1000;
  /// Features tried per split; 0 means ceil(sqrt(p)).
  int mtry = 0;
  /// Each child of a split must hold at least this many events.
  int min_leaf_events = 5;
  /// Nodes with at most this many samples are not split.
  int min_node_size = 15;
  bool bootstrap = true;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static RsfParams from_json(const nlohmann::json& j);
};

/// Absolute standardized two-sample log-rank statistic. Returns 0 when the
/// variance vanishes (e.g. no events).
double logrank_split_statistic(std::span<const SurvivalRecord> left, std::span<const SurvivalRecord> right);

struct TreeNode {
  /// -1 for leaves.
  int feature = -1;
  /// Rows with x[feature] <= split go left.
  double split = 0.0;
  int left = -1;
  int right = -1;
  /// Index into SurvivalTree::leaf_chf for leaves.
  int leaf = -1;
};

struct SurvivalTree {
  std::vector<TreeNode> nodes;
  std::vector<std::vector<double>> leaf_chf;

  /// Index of the leaf (into leaf_chf) that `row` falls into.
  std::size_t route(std::span<const double> row) const;
};

class RsfModel {
 public:
  RsfModel() = default;
  RsfModel(TimeGrid grid, RsfParams params, std::size_t n_features, std::vector<SurvivalTree> trees);

  const TimeGrid& grid() const { return grid_; }
  const RsfParams& params() const { return params_; }
  std::size_t feature_count() const { return n_features_; }
  const std::vector<SurvivalTree>& trees() const { return trees_; }

  /// Mean over trees of the leaf cumulative hazard the row routes to.
  HazardCurve predict_chf(std::span<const double> row) const;
  SurvivalCurve predict_survival(std::span<const double> row) const;
  /// Sum of the ensemble cumulative hazard over the grid; higher = riskier.
  double predict_risk(std::span<const double> row) const;

  nlohmann::json to_json() const;
  static RsfModel from_json(const nlohmann::json& j);

 private:
  void check_width(std::span<const double> row) const;

  TimeGrid grid_;
  RsfParams params_;
  std::size_t n_features_ = 0;
  std::vector<SurvivalTree> trees_;
};

/// Grows `params.n_trees` trees on `threads` workers. Tree t draws from its
/// own generator seeded by (params.seed, t), so the result does not depend on
/// the worker count.
RsfModel fit_rsf(const Matrix& x, std::span<const SurvivalRecord> records, const RsfParams& params,
                 const TimeGrid& grid, int threads = 1);

}  // namespace tkr
