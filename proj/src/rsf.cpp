#include "tkr/rsf.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace tkr {

namespace {

// Event-time table of a node. `last[i]` is the index of the last event time
// <= the sample's time (-1 if before the first), i.e. the last event time at
// which the sample is at risk.
struct NodeEvents {
  std::vector<double> times;
  std::vector<double> deaths;
  std::vector<double> at_risk;
  std::vector<int> last;
  std::vector<std::uint8_t> event;
  double total_events = 0.0;
};

NodeEvents tabulate_node(std::span<const int> samples, std::span<const SurvivalRecord> records) {
  NodeEvents node;
  for (int s : samples) {
    if (records[static_cast<std::size_t>(s)].event) node.times.push_back(records[static_cast<std::size_t>(s)].time);
  }
  std::sort(node.times.begin(), node.times.end());
  node.times.erase(std::unique(node.times.begin(), node.times.end()), node.times.end());
  const std::size_t t_count = node.times.size();
  node.deaths.assign(t_count, 0.0);
  node.at_risk.assign(t_count, 0.0);
  std::vector<double> leaving(t_count, 0.0);
  node.last.reserve(samples.size());
  node.event.reserve(samples.size());
  for (int s : samples) {
    const auto& r = records[static_cast<std::size_t>(s)];
    const int k = static_cast<int>(std::upper_bound(node.times.begin(), node.times.end(), r.time) -
                                   node.times.begin()) - 1;
    node.last.push_back(k);
    node.event.push_back(r.event ? 1 : 0);
    if (k >= 0) {
      leaving[static_cast<std::size_t>(k)] += 1.0;
      if (r.event) {
        node.deaths[static_cast<std::size_t>(k)] += 1.0;
        node.total_events += 1.0;
      }
    }
  }
  double running = 0.0;
  for (std::size_t k = t_count; k-- > 0;) {
    running += leaving[k];
    node.at_risk[k] = running;
  }
  return node;
}

// Standardized log-rank statistic for a "left" group described by its counts
// of samples leaving after each event time and its deaths at each time.
double logrank_from_counts(const NodeEvents& node, std::span<const double> left_leaving,
                           std::span<const double> left_deaths) {
  double left_at_risk = 0.0;
  double observed_minus_expected = 0.0;
  double variance = 0.0;
  for (std::size_t k = node.times.size(); k-- > 0;) {
    left_at_risk += left_leaving[k];
    const double y = node.at_risk[k];
    const double d = node.deaths[k];
    const double share = left_at_risk / y;
    observed_minus_expected += left_deaths[k] - d * share;
    if (y > 1.0) variance += share * (1.0 - share) * (y - d) / (y - 1.0) * d;
  }
  if (!(variance > 0.0)) return 0.0;
  return std::abs(observed_minus_expected) / std::sqrt(variance);
}

std::vector<double> node_chf(const NodeEvents& node, const TimeGrid& grid) {
  std::vector<double> values(grid.size());
  double h = 0.0;
  std::size_t k = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    while (k < node.times.size() && node.times[k] <= grid[g]) {
      h += node.deaths[k] / node.at_risk[k];
      ++k;
    }
    values[g] = h;
  }
  return values;
}

struct SplitChoice {
  int feature = -1;
  double value = 0.0;
  double statistic = 0.0;

  bool better_than(const SplitChoice& other) const {
    if (statistic != other.statistic) return statistic > other.statistic;
    if (feature != other.feature) return feature < other.feature;
    return value < other.value;
  }
};

class TreeGrower {
 public:
  TreeGrower(const Matrix& x, std::span<const SurvivalRecord> records, const RsfParams& params, int mtry,
             const TimeGrid& grid, std::uint64_t seed)
      : x_(x), records_(records), params_(params), mtry_(mtry), grid_(grid), rng_(seed) {}

  SurvivalTree grow() {
    const auto n = static_cast<int>(records_.size());
    std::vector<int> samples(static_cast<std::size_t>(n));
    if (params_.bootstrap) {
      for (auto& s : samples) s = static_cast<int>(rng_.index(static_cast<std::uint64_t>(n)));
      std::sort(samples.begin(), samples.end());
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }

    SurvivalTree tree;
    tree.nodes.emplace_back();
    std::vector<std::pair<int, std::vector<int>>> stack;
    stack.emplace_back(0, std::move(samples));
    while (!stack.empty()) {
      auto [node_id, node_samples] = std::move(stack.back());
      stack.pop_back();
      const auto node = tabulate_node(node_samples, records_);
      const auto split = find_split(node_samples, node);
      if (split.feature < 0) {
        tree.nodes[static_cast<std::size_t>(node_id)].leaf = static_cast<int>(tree.leaf_chf.size());
        tree.leaf_chf.push_back(node_chf(node, grid_));
        continue;
      }
      std::vector<int> left, right;
      for (int s : node_samples) {
        (x_(s, split.feature) <= split.value ? left : right).push_back(s);
      }
      const int left_id = static_cast<int>(tree.nodes.size());
      const int right_id = left_id + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& parent = tree.nodes[static_cast<std::size_t>(node_id)];
      parent.feature = split.feature;
      parent.split = split.value;
      parent.left = left_id;
      parent.right = right_id;
      stack.emplace_back(right_id, std::move(right));
      stack.emplace_back(left_id, std::move(left));
    }
    return tree;
  }

 private:
  std::vector<int> draw_features() {
    const auto p = static_cast<int>(x_.cols());
    std::vector<int> pool(static_cast<std::size_t>(p));
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < mtry_; ++k) {
      const auto pick = k + static_cast<int>(rng_.index(static_cast<std::uint64_t>(p - k)));
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
    }
    pool.resize(static_cast<std::size_t>(mtry_));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  SplitChoice find_split(std::span<const int> samples, const NodeEvents& node) {
    SplitChoice best;
    const double min_events = params_.min_leaf_events;
    if (static_cast<int>(samples.size()) <= params_.min_node_size || node.total_events < 2.0 * min_events) {
      return best;
    }
    const auto features = draw_features();
    const std::size_t n = samples.size();
    const std::size_t t_count = node.times.size();
    std::vector<std::size_t> order(n);
    std::vector<double> left_leaving(t_count), left_deaths(t_count);
    for (int f : features) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](auto a, auto b) { return x_(samples[a], f) < x_(samples[b], f); });
      if (x_(samples[order.front()], f) == x_(samples[order.back()], f)) continue;
      std::fill(left_leaving.begin(), left_leaving.end(), 0.0);
      std::fill(left_deaths.begin(), left_deaths.end(), 0.0);
      double left_events = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto pos = order[i];
        const int k = node.last[pos];
        if (k >= 0) {
          left_leaving[static_cast<std::size_t>(k)] += 1.0;
          if (node.event[pos]) {
            left_deaths[static_cast<std::size_t>(k)] += 1.0;
            left_events += 1.0;
          }
        }
        const double here = x_(samples[pos], f);
        const double next = x_(samples[order[i + 1]], f);
        if (here == next) continue;
        if (node.total_events - left_events < min_events) break;
        if (left_events < min_events) continue;
        SplitChoice candidate;
        candidate.feature = f;
        candidate.value = here + (next - here) / 2.0;
        if (!(candidate.value < next)) candidate.value = here;
        candidate.statistic = logrank_from_counts(node, left_leaving, left_deaths);
        if (candidate.statistic > 0.0 && (best.feature < 0 || candidate.better_than(best))) best = candidate;
      }
    }
    return best;
  }

  const Matrix& x_;
  std::span<const SurvivalRecord> records_;
  const RsfParams& params_;
  int mtry_;
  const TimeGrid& grid_;
  Rng rng_;
};

}  // namespace

nlohmann::json RsfParams::to_json() const {
  return {{"n_trees", n_trees},         {"mtry", mtry},           {"min_leaf_events", min_leaf_events},
          {"min_node_size", min_node_size}, {"bootstrap", bootstrap}, {"seed", seed}};
}

RsfParams RsfParams::from_json(const nlohmann::json& j) {
  RsfParams p;
  p.n_trees = j.at("n_trees").get<int>();
  p.mtry = j.at("mtry").get<int>();
  p.min_leaf_events = j.at("min_leaf_events").get<int>();
  p.min_node_size = j.at("min_node_size").get<int>();
  p.bootstrap = j.at("bootstrap").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

double logrank_split_statistic(std::span<const SurvivalRecord> left, std::span<const SurvivalRecord> right) {
  if (left.empty() || right.empty()) throw Error(ErrorCode::invalid_argument, "log-rank groups must be nonempty");
  std::vector<SurvivalRecord> pooled(left.begin(), left.end());
  pooled.insert(pooled.end(), right.begin(), right.end());
  std::vector<int> samples(pooled.size());
  std::iota(samples.begin(), samples.end(), 0);
  const auto node = tabulate_node(samples, pooled);
  std::vector<double> left_leaving(node.times.size(), 0.0), left_deaths(node.times.size(), 0.0);
  for (std::size_t i = 0; i < left.size(); ++i) {
    const int k = node.last[i];
    if (k < 0) continue;
    left_leaving[static_cast<std::size_t>(k)] += 1.0;
    if (node.event[i]) left_deaths[static_cast<std::size_t>(k)] += 1.0;
  }
  return logrank_from_counts(node, left_leaving, left_deaths);
}

std::size_t SurvivalTree::route(std::span<const double> row) const {
  std::size_t id = 0;
  while (nodes[id].feature >= 0) {
    const auto& node = nodes[id];
    id = static_cast<std::size_t>(row[static_cast<std::size_t>(node.feature)] <= node.split ? node.left : node.right);
  }
  return static_cast<std::size_t>(nodes[id].leaf);
}

RsfModel::RsfModel(TimeGrid grid, RsfParams params, std::size_t n_features, std::vector<SurvivalTree> trees)
    : grid_(std::move(grid)), params_(params), n_features_(n_features), trees_(std::move(trees)) {
  validate_grid(grid_);
  if (trees_.empty()) throw Error(ErrorCode::invalid_argument, "a forest needs at least one tree");
}

void RsfModel::check_width(std::span<const double> row) const {
  if (row.size() != n_features_) {
    throw Error(ErrorCode::invalid_argument, "row has " + std::to_string(row.size()) + " features, forest expects " +
                                                 std::to_string(n_features_));
  }
}

HazardCurve RsfModel::predict_chf(std::span<const double> row) const {
  check_width(row);
  std::vector<double> sum(grid_.size(), 0.0);
  for (const auto& tree : trees_) {
    const auto& leaf = tree.leaf_chf[tree.route(row)];
    for (std::size_t g = 0; g < sum.size(); ++g) sum[g] += leaf[g];
  }
  const auto count = static_cast<double>(trees_.size());
  for (auto& v : sum) v /= count;
  return HazardCurve(grid_, std::move(sum));
}

SurvivalCurve RsfModel::predict_survival(std::span<const double> row) const {
  return survival_from_chf(predict_chf(row));
}

double RsfModel::predict_risk(std::span<const double> row) const {
  const auto chf = predict_chf(row);
  return std::accumulate(chf.values().begin(), chf.values().end(), 0.0);
}

nlohmann::json RsfModel::to_json() const {
  auto trees = nlohmann::json::array();
  for (const auto& tree : trees_) {
    std::vector<int> feature, left, right, leaf;
    std::vector<double> split;
    for (const auto& node : tree.nodes) {
      feature.push_back(node.feature);
      split.push_back(node.split);
      left.push_back(node.left);
      right.push_back(node.right);
      leaf.push_back(node.leaf);
    }
    trees.push_back({{"feature", feature},
                     {"split", split},
                     {"left", left},
                     {"right", right},
                     {"leaf", leaf},
                     {"leaf_chf", tree.leaf_chf}});
  }
  return {{"grid", grid_}, {"params", params_.to_json()}, {"n_features", n_features_}, {"trees", trees}};
}

RsfModel RsfModel::from_json(const nlohmann::json& j) {
  std::vector<SurvivalTree> trees;
  for (const auto& t : j.at("trees")) {
    SurvivalTree tree;
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto split = t.at("split").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto leaf = t.at("leaf").get<std::vector<int>>();
    for (std::size_t k = 0; k < feature.size(); ++k) tree.nodes.push_back({feature[k], split[k], left[k], right[k], leaf[k]});
    tree.leaf_chf = t.at("leaf_chf").get<std::vector<std::vector<double>>>();
    trees.push_back(std::move(tree));
  }
  return RsfModel(j.at("grid").get<TimeGrid>(), RsfParams::from_json(j.at("params")),
                  j.at("n_features").get<std::size_t>(), std::move(trees));
}

RsfModel fit_rsf(const Matrix& x, std::span<const SurvivalRecord> records, const RsfParams& params,
                 const TimeGrid& grid, int threads) {
  validate_grid(grid);
  if (static_cast<std::size_t>(x.rows()) != records.size()) {
    throw Error(ErrorCode::invalid_argument, "feature rows and records are not aligned");
  }
  if (records.empty()) throw Error(ErrorCode::invalid_argument, "no training records");
  if (!x.allFinite()) throw Error(ErrorCode::numerical, "features contain non-finite values");
  if (params.n_trees < 1) throw Error(ErrorCode::invalid_argument, "n_trees must be positive");
  if (params.min_leaf_events < 1 || params.min_node_size < 1) {
    throw Error(ErrorCode::invalid_argument, "min_leaf_events and min_node_size must be positive");
  }
  if (params.min_leaf_events > params.min_node_size) {
    throw Error(ErrorCode::invalid_argument, "min_leaf_events must not exceed min_node_size");
  }
  const int p = static_cast<int>(x.cols());
  const int mtry = params.mtry > 0 ? params.mtry : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
  if (mtry > p) throw Error(ErrorCode::invalid_argument, "mtry exceeds the number of features");

  std::vector<SurvivalTree> trees(static_cast<std::size_t>(params.n_trees));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int t = next++; t < params.n_trees; t = next++) {
      try {
        TreeGrower grower(x, records, params, mtry, grid, mix_seed(params.seed, static_cast<std::uint64_t>(t)));
        trees[static_cast<std::size_t>(t)] = grower.grow();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, params.n_trees);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return RsfModel(grid, params, static_cast<std::size_t>(p), std::move(trees));
}

}  // namespace tkr
