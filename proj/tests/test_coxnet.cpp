#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "support.hpp"
#include "tkr/common.hpp"
#include "tkr/coxnet.hpp"
#include "tkr/survcore.hpp"
#include "tkr/synth.hpp"

using namespace tkr;
using tkr::test::records;

namespace {

struct Instance {
  Matrix x;
  std::vector<SurvivalRecord> recs;
};

Instance random_instance(Rng& rng, Eigen::Index n, Eigen::Index p) {
  Instance inst;
  inst.x = Matrix(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) inst.x(i, j) = rng.normal();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    // Coarse times so that ties occur.
    const double t = std::ceil(rng.uniform_open() * 8.0);
    inst.recs.push_back({"s" + std::to_string(i), Side::left, t, rng.uniform() < 0.7});
  }
  inst.recs[0].event = true;
  return inst;
}

Instance synth_instance(std::size_t n, std::size_t p, std::vector<double> beta, std::uint64_t seed) {
  SynthSpec spec;
  spec.n = n;
  spec.p = p;
  spec.true_beta = std::move(beta);
  spec.seed = seed;
  const auto data = generate(spec);
  Instance inst;
  inst.x = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      inst.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *data.dataset.features.at(i, j);
    }
  }
  inst.recs = data.dataset.records;
  return inst;
}

std::span<const double> row_of(const Matrix& x, Eigen::Index i) {
  return {x.row(i).data(), static_cast<std::size_t>(x.cols())};
}

}  // namespace

TEST_CASE("partial likelihood values") {
  SUBCASE("beta zero gives log risk-set sizes") {
    const Matrix x = Matrix::Random(3, 2);
    const auto obj = cox_neg_log_partial_likelihood(Vector::Zero(2), x, records({1, 2, 3}, {1, 1, 1}));
    CHECK(obj.value == doctest::Approx(std::log(3.0) + std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("six records, one covariate, beta 0.5") {
    Matrix x(6, 1);
    x << 0.5, -1.2, 0.3, 2.0, -0.4, 1.1;
    const auto recs = records({2, 5, 1, 3, 6, 2}, {1, 1, 0, 1, 1, 1});
    const Vector beta = Vector::Constant(1, 0.5);
    CHECK(cox_neg_log_partial_likelihood(beta, x, recs).value ==
          doctest::Approx(oracle::cox_nll(beta, x, recs)).epsilon(1e-12));
  }
  SUBCASE("row permutation") {
    Rng rng(2);
    auto inst = random_instance(rng, 15, 3);
    const Vector beta = Vector::Random(3);
    const double before = cox_neg_log_partial_likelihood(beta, inst.x, inst.recs).value;
    Matrix px = inst.x;
    auto precs = inst.recs;
    for (Eigen::Index i = 0; i < 15; ++i) {
      px.row(i) = inst.x.row(14 - i);
      precs[static_cast<std::size_t>(i)] = inst.recs[static_cast<std::size_t>(14 - i)];
    }
    CHECK(cox_neg_log_partial_likelihood(beta, px, precs).value == doctest::Approx(before).epsilon(1e-13));
  }
  CHECK_THROWS_AS(cox_neg_log_partial_likelihood(Vector::Zero(1), Matrix::Zero(2, 1), records({1, 2}, {0, 0})),
                  Error);
}

TEST_CASE("partial likelihood matches the oracle and finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(rng, 12 + trial, 4);
    Vector beta(4);
    for (int j = 0; j < 4; ++j) beta[j] = rng.normal() * 0.5;
    const auto obj = cox_neg_log_partial_likelihood(beta, inst.x, inst.recs);
    CHECK(obj.value == doctest::Approx(oracle::cox_nll(beta, inst.x, inst.recs)).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) {
      Vector up = beta, down = beta;
      up[j] += 1e-5;
      down[j] -= 1e-5;
      const double fd = (oracle::cox_nll(up, inst.x, inst.recs) - oracle::cox_nll(down, inst.x, inst.recs)) / 2e-5;
      CHECK(std::abs(obj.gradient[j] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("one covariate fit matches grid search") {
  Matrix x(6, 1);
  x << 0.5, -1.2, 0.3, 2.0, -0.4, 1.1;
  const auto recs = records({2, 5, 1, 3, 6, 4}, {1, 1, 0, 1, 1, 0});
  const auto model = fit_lasso_cox(x, recs, 0.0, yearly_grid());
  CHECK(model.converged);

  const Matrix z = model.standardizer.apply(x);
  double best_beta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = -50000; k <= 50000; ++k) {
    const Vector b = Vector::Constant(1, k * 1e-4);
    const double v = oracle::cox_nll(b, z, recs);
    if (v < best) {
      best = v;
      best_beta = b[0];
    }
  }
  CHECK(std::abs(best_beta) < 4.9);
  CHECK(std::abs(model.coefficients[0] - best_beta) <= 2e-4);
}

TEST_CASE("lasso fit properties") {
  const auto inst = synth_instance(300, 8, {1.0, -0.8, 0, 0, 0.5, 0, 0, 0}, 4);
  const auto grid = yearly_grid();

  SUBCASE("huge lambda zeroes everything") {
    const auto model = fit_lasso_cox(inst.x, inst.recs, 1e6, grid);
    CHECK(model.coefficients.isZero(0.0));
    CHECK(select_features(model).empty());
  }
  SUBCASE("constant feature gets zero") {
    Matrix x = inst.x;
    x.col(3).setConstant(2.5);
    const auto model = fit_lasso_cox(x, inst.recs, 0.0, grid);
    CHECK(model.coefficients[3] == 0.0);
  }
  SUBCASE("KKT and monotone objective") {
    const double lambda = 0.3 * lambda_max(inst.x, inst.recs);
    const auto model = fit_lasso_cox(inst.x, inst.recs, lambda, grid);
    REQUIRE(model.converged);
    for (std::size_t k = 1; k < model.objective_trace.size(); ++k) {
      CHECK(model.objective_trace[k] <= model.objective_trace[k - 1]);
    }
    const Matrix z = model.standardizer.apply(inst.x);
    const auto obj = cox_neg_log_partial_likelihood(model.coefficients, z, inst.recs);
    for (Eigen::Index j = 0; j < model.coefficients.size(); ++j) {
      if (model.coefficients[j] == 0.0) {
        CHECK(std::abs(obj.gradient[j]) <= lambda + 1e-5);
      } else {
        const double sign = model.coefficients[j] > 0 ? 1.0 : -1.0;
        CHECK(obj.gradient[j] == doctest::Approx(-lambda * sign).epsilon(1e-4));
      }
    }
  }
  SUBCASE("lambda_max is the smallest all-zero penalty") {
    const double top = lambda_max(inst.x, inst.recs);
    CHECK(select_features(fit_lasso_cox(inst.x, inst.recs, top * 1.0001, grid)).empty());
    CHECK_FALSE(select_features(fit_lasso_cox(inst.x, inst.recs, top * 0.95, grid)).empty());
  }
  SUBCASE("rescaling a column keeps the selection") {
    const double lambda = 0.2 * lambda_max(inst.x, inst.recs);
    Matrix scaled = inst.x;
    scaled.col(0) *= 1000.0;
    scaled.col(4) *= 0.001;
    const auto a = fit_lasso_cox(inst.x, inst.recs, lambda, grid);
    const auto b = fit_lasso_cox(scaled, inst.recs, lambda, grid);
    CHECK(select_features(a) == select_features(b));
    CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(fit_lasso_cox(inst.x, records(std::vector<double>(300, 1.0), std::vector<int>(300, 0)), 0.1, grid),
                  Error);
  Matrix bad = inst.x;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(fit_lasso_cox(bad, inst.recs, 0.1, grid), Error);
}

TEST_CASE("select_features thresholds") {
  CoxModel model;
  model.coefficients = Vector(3);
  model.coefficients << 0.0, 0.3, 0.0;
  CHECK(select_features(model) == std::vector<std::size_t>{1});
  model.coefficients.setZero();
  CHECK(select_features(model).empty());
  model.coefficients << 1e-9, -2e-8, 0.0;
  CHECK(select_features(model) == std::vector<std::size_t>{1});
}

TEST_CASE("predict_risk and serialization") {
  CoxModel model;
  model.coefficients = Vector(3);
  model.coefficients << 0.5, -1.0, 2.0;
  model.standardizer.means = Vector(3);
  model.standardizer.means << 1.0, 2.0, 3.0;
  model.standardizer.scales = Vector(3);
  model.standardizer.scales << 2.0, 4.0, 0.5;
  model.baseline_chf = HazardCurve({0, 1, 2}, {0.0, 0.1, 0.3});
  const std::vector<double> row = {3.0, 0.0, 4.0};
  // (3-1)/2*0.5 + (0-2)/4*(-1) + (4-3)/0.5*2 = 0.5 + 0.5 + 4
  CHECK(model.predict_risk(row) == doctest::Approx(5.0).epsilon(1e-15));
  const std::vector<double> doubled = {6.0, 0.0, 4.0};
  CHECK(model.predict_risk(doubled) > model.predict_risk(row));
  const auto s = model.predict_survival(row);
  CHECK(s.values()[2] == doctest::Approx(std::exp(-0.3 * std::exp(5.0))));
  CHECK_THROWS_AS(model.predict_risk(std::vector<double>{1.0, 2.0}), Error);

  const auto restored = CoxModel::from_json(model.to_json());
  CHECK(restored.predict_risk(row) == model.predict_risk(row));

  CoxModel zero = model;
  zero.coefficients.setZero();
  CHECK(zero.predict_risk(row) == 0.0);
}

TEST_CASE("lambda path and choice") {
  const auto train = synth_instance(400, 10, {1.0, 0, -1.0, 0, 0, 0, 0, 0, 0, 0}, 8);
  const auto validation = synth_instance(200, 10, {1.0, 0, -1.0, 0, 0, 0, 0, 0, 0, 0}, 9);
  const auto grid = yearly_grid();
  const auto path = lambda_path(train.x, train.recs);
  REQUIRE(path.size() == 50);
  CHECK(path.front() == doctest::Approx(lambda_max(train.x, train.recs)));
  CHECK(path.back() == doctest::Approx(path.front() * 1e-3));
  for (std::size_t k = 1; k < path.size(); ++k) CHECK(path[k] < path[k - 1]);

  const std::vector<double> single = {0.05 * path.front()};
  CHECK(choose_lambda(train.x, train.recs, validation.x, validation.recs, single, grid).lambda == single[0]);
  CHECK_THROWS_AS(choose_lambda(train.x, train.recs, validation.x, validation.recs, {}, grid), Error);

  const auto a = choose_lambda(train.x, train.recs, validation.x, validation.recs, path, grid, {},
                               LambdaRule::max_c_index);
  const auto b = choose_lambda(train.x, train.recs, validation.x, validation.recs, path, grid, {},
                               LambdaRule::max_c_index);
  CHECK(a.lambda == b.lambda);
  CHECK(a.validation_c_index == b.validation_c_index);
  const auto best = *std::max_element(a.validation_c_index.begin(), a.validation_c_index.end());
  CHECK(a.best_c_index == best);
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (a.validation_c_index[k] == best) {
      CHECK(a.lambda == path[k]);
      break;
    }
  }

  const auto se = choose_lambda(train.x, train.recs, validation.x, validation.recs, path, grid);
  CHECK(se.rule == LambdaRule::one_se);
  CHECK(se.c_index_se > 0.0);
  CHECK(se.lambda >= a.lambda);
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (path[k] == se.lambda) CHECK(se.validation_c_index[k] >= best - se.c_index_se);
    if (path[k] > se.lambda) CHECK(se.validation_c_index[k] < best - se.c_index_se);
  }
  const auto chosen = select_features(fit_lasso_cox(train.x, train.recs, se.lambda, grid));
  CHECK(std::find(chosen.begin(), chosen.end(), 0) != chosen.end());
  CHECK(std::find(chosen.begin(), chosen.end(), 2) != chosen.end());
}

TEST_CASE("choose_lambda on pure noise selects little") {
  int sparse = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto train = synth_instance(400, 20, {}, 100 + seed);
    const auto validation = synth_instance(200, 20, {}, 200 + seed);
    const auto path = lambda_path(train.x, train.recs);
    const auto choice = choose_lambda(train.x, train.recs, validation.x, validation.recs, path, yearly_grid());
    const auto selected = select_features(fit_lasso_cox(train.x, train.recs, choice.lambda, yearly_grid()));
    MESSAGE("seed " << seed << ": " << selected.size() << " selected");
    if (selected.size() <= 2) ++sparse;
  }
  CHECK(sparse >= 8);
}

TEST_CASE("jackknife standard error of the C-index") {
  Rng rng(31);
  std::vector<double> risks;
  std::vector<double> times;
  std::vector<int> events;
  for (int i = 0; i < 25; ++i) {
    risks.push_back(rng.normal());
    times.push_back(std::ceil(rng.uniform_open() * 9.0));
    events.push_back(rng.uniform() < 0.6 ? 1 : 0);
  }
  events[0] = 1;
  const auto recs = records(times, events);
  // Leave-one-out values by brute force.
  std::vector<double> loo;
  for (std::size_t drop = 0; drop < recs.size(); ++drop) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      for (std::size_t j = 0; j < recs.size(); ++j) {
        if (i == drop || j == drop || !recs[i].event || !(recs[i].time < recs[j].time)) continue;
        den += 1.0;
        num += risks[i] > risks[j] ? 1.0 : (risks[i] == risks[j] ? 0.5 : 0.0);
      }
    }
    if (den > 0) loo.push_back(num / den);
  }
  const double m = static_cast<double>(loo.size());
  const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / m;
  double ss = 0.0;
  for (double c : loo) ss += (c - mean) * (c - mean);
  CHECK(c_index_jackknife_se(risks, recs) == doctest::Approx(std::sqrt((m - 1.0) / m * ss)).epsilon(1e-12));
  CHECK(parse_lambda_rule(to_string(LambdaRule::max_c_index)) == LambdaRule::max_c_index);
  CHECK_THROWS_AS(parse_lambda_rule("median"), Error);
}

TEST_CASE("discrete-time GLM") {
  SUBCASE("intercept only, one interval") {
    const auto recs = records({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, {1, 1, 1, 0, 0, 0, 0, 0, 0, 0});
    const auto model = fit_discrete_glm(Matrix(10, 0), recs, {0, 1});
    REQUIRE(model.interval_count() == 1);
    CHECK(model.interval_intercepts[0] == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-12));
  }
  SUBCASE("intercept only equals Kaplan-Meier on yearly data") {
    Rng rng(21);
    std::vector<double> times;
    std::vector<int> events;
    for (int i = 0; i < 200; ++i) {
      times.push_back(static_cast<double>(rng.index(9) + 1));
      events.push_back(rng.uniform() < 0.6 ? 1 : 0);
    }
    const auto recs = records(times, events);
    const auto grid = yearly_grid();
    const auto model = fit_discrete_glm(Matrix(200, 0), recs, grid);
    const auto km = kaplan_meier(recs, grid);
    const auto s = model.predict_survival(std::span<const double>{});
    for (std::size_t k = 1; k < grid.size(); ++k) {
      CHECK(std::abs(s.values()[k] - km.values()[k]) <= 1e-8);
    }
  }
  SUBCASE("zero-variance covariate") {
    const auto inst = synth_instance(200, 3, {1.0, 0.0, 0.0}, 5);
    Matrix x = inst.x;
    x.col(2).setConstant(-1.0);
    const auto model = fit_discrete_glm(x, inst.recs, yearly_grid());
    CHECK(model.coefficients[2] == 0.0);
    CHECK(model.coefficients[0] > 0.3);
    for (std::size_t k = 1; k < model.deviance_trace.size(); ++k) {
      CHECK(model.deviance_trace[k] <= model.deviance_trace[k - 1]);
    }
    const auto restored = GlmModel::from_json(model.to_json());
    CHECK(restored.predict_survival(row_of(x, 0)).values() == model.predict_survival(row_of(x, 0)).values());
  }
  SUBCASE("boundary intervals are fixed and flagged") {
    const auto recs = records({1, 1, 3, 3}, {1, 1, 0, 1});
    const auto model = fit_discrete_glm(Matrix(4, 0), recs, {0, 1, 2, 3, 4});
    CHECK(model.interval_status[1] == IntervalStatus::no_events);
    CHECK(model.interval_status[3] == IntervalStatus::no_at_risk);
    CHECK(model.interval_status[2] == IntervalStatus::estimated);
    const auto s = model.predict_survival(std::span<const double>{});
    CHECK(s.values()[1] == doctest::Approx(0.5));
    CHECK(s.values()[2] == doctest::Approx(0.5));
    CHECK(s.values()[3] == doctest::Approx(0.25));
    CHECK(s.values()[4] == doctest::Approx(0.25));
    CHECK(GlmModel::from_json(model.to_json()).interval_status == model.interval_status);
  }
  CHECK_THROWS_AS(fit_discrete_glm(Matrix(1, 0), records({12}, {1}), yearly_grid()), Error);
}
