// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "tkr/common.hpp"
#include "tkr/coxnet.hpp"
#include "tkr/losses.hpp"
#include "tkr/metrics.hpp"
#include "tkr/pipeline.hpp"
#include "tkr/rsf.hpp"
#include "tkr/survcore.hpp"
#include "tkr/synth.hpp"

using namespace tkr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Data {
  Matrix x;
  std::vector<SurvivalRecord> records;
  std::vector<double> true_risk;
};

Data simulate(SynthSpec spec) {
  const auto generated = generate(spec);
  Data d;
  d.x = Matrix(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(spec.p));
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = 0; j < spec.p; ++j) {
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *generated.dataset.features.at(i, j);
    }
  }
  d.records = generated.dataset.records;
  d.true_risk = generated.true_risk;
  return d;
}

std::vector<SurvivalRecord> slice(const std::vector<SurvivalRecord>& r, std::size_t begin, std::size_t end) {
  return {r.begin() + static_cast<std::ptrdiff_t>(begin), r.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::span<const double> row_of(const Matrix& x, Eigen::Index i) {
  return {x.row(i).data(), static_cast<std::size_t>(x.cols())};
}

template <typename Model>
double held_out_c_index(const Model& model, const Matrix& x, const std::vector<SurvivalRecord>& records) {
  std::vector<double> risk;
  for (Eigen::Index i = 0; i < x.rows(); ++i) risk.push_back(model.predict_risk(row_of(x, i)));
  return concordance_index(risk, records);
}

RsfParams forest_params(std::uint64_t seed) {
  RsfParams params;
  params.n_trees = 200;
  params.seed = seed;
  return params;
}

// ---------------------------------------------------------------------------

void support_recovery(Outcome& out) {
  constexpr std::size_t kSignals = 5;
  int recovered = 0;
  double slowest = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto start = Clock::now();
    SynthSpec spec;
    spec.n = 2000;
    spec.p = 100;
    spec.censor_rate = 0.3;
    spec.seed = seed;
    spec.true_beta.assign(spec.p, 0.0);
    for (std::size_t k = 0; k < kSignals; ++k) spec.true_beta[k * 20] = k % 2 == 0 ? 0.8 : -0.8;
    const auto generated = generate(spec);
    const auto split = split_subject_level(generated.dataset.records, SplitFractions{}, seed);
    const auto train = subset(generated.dataset, split, Partition::train);
    const auto validation = subset(generated.dataset, split, Partition::validation);
    const auto encoder = DesignEncoder::fit(train.features);
    const Matrix train_x = encoder.encode(train.features);
    const Matrix validation_x = encoder.encode(validation.features);

    const auto path = lambda_path(train_x, train.records);
    const auto choice = choose_lambda(train_x, train.records, validation_x, validation.records, path, yearly_grid());
    const auto selected = select_features(fit_lasso_cox(train_x, train.records, choice.lambda, yearly_grid()));
    std::size_t true_hits = 0;
    for (auto j : selected) true_hits += spec.true_beta[j] != 0.0 ? 1 : 0;
    const std::size_t false_hits = selected.size() - true_hits;
    const double elapsed = seconds_since(start);
    slowest = std::max(slowest, elapsed);
    const bool ok = true_hits == kSignals && false_hits <= 2;
    recovered += ok ? 1 : 0;
    out.detail << " s" << seed << ":" << true_hits << "/" << false_hits;
  }
  out.detail << " recovered=" << recovered << "/10 slowest=" << slowest << "s";
  out.require(recovered >= 8, "fewer than 8 of 10 seeds recovered the support");
  out.require(slowest < 60.0, "a run took 60 s or more");
}

void optimizer_vs_oracle(Outcome& out) {
  Rng rng(2024);
  double worst_fit = 0.0;
  int fits = 0;
  while (fits < 5) {
    const Eigen::Index n = 30;
    Matrix x(n, 1);
    std::vector<SurvivalRecord> recs;
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = rng.normal();
      const double t = -std::log(rng.uniform_open()) / std::exp(0.7 * x(i, 0));
      recs.push_back({"s" + std::to_string(i), Side::left, std::round(t * 20.0) / 20.0, rng.uniform() < 0.75});
    }
    const auto model = fit_lasso_cox(x, recs, 0.0, yearly_grid());
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
    if (std::abs(best_beta) > 4.9) continue;  // maximizer not interior to the search window
    worst_fit = std::max(worst_fit, std::abs(model.coefficients[0] - best_beta));
    ++fits;
  }

  double worst_gradient = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 15 + trial;
    const Eigen::Index p = 4;
    Matrix x(n, p);
    std::vector<SurvivalRecord> recs;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rng.normal();
      recs.push_back({"s" + std::to_string(i), Side::left, std::ceil(rng.uniform_open() * 8.0), rng.uniform() < 0.7});
    }
    recs[0].event = true;
    Vector beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta[j] = 0.5 * rng.normal();
    const auto objective = cox_neg_log_partial_likelihood(beta, x, recs);
    for (Eigen::Index j = 0; j < p; ++j) {
      Vector up = beta, down = beta;
      up[j] += 1e-5;
      down[j] -= 1e-5;
      const double fd = (oracle::cox_nll(up, x, recs) - oracle::cox_nll(down, x, recs)) / 2e-5;
      worst_gradient = std::max(worst_gradient, std::abs(objective.gradient[j] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  out.detail << " max|beta-grid|=" << worst_fit << " max rel grad err=" << worst_gradient;
  out.require(worst_fit <= 2e-4, "one-covariate fit differs from grid search by more than 2e-4");
  out.require(worst_gradient <= 1e-4, "gradient differs from finite differences by more than 1e-4");
}

void rsf_signal_detection(Outcome& out) {
  SynthSpec spec;
  spec.n = 1000;
  spec.p = 10;
  spec.seed = 31;
  spec.true_beta = sparse_beta(spec.p, 3, 1.0);
  const auto grid = yearly_grid();

  auto held_out = [&](const Data& d, int workers) {
    const Matrix train = d.x.topRows(700);
    const Matrix test = d.x.bottomRows(300);
    const auto forest = fit_rsf(train, slice(d.records, 0, 700), forest_params(7), grid, workers);
    return std::make_pair(held_out_c_index(forest, test, slice(d.records, 700, 1000)), forest.to_json().dump());
  };

  const auto strong = simulate(spec);
  const auto [strong_c, one_worker] = held_out(strong, 1);
  const auto [strong_c8, eight_workers] = held_out(strong, 8);

  spec.true_beta.clear();
  const auto [null_c, unused] = held_out(simulate(spec), 1);

  out.detail << " signal C=" << strong_c << " null C=" << null_c
             << " workers identical=" << (one_worker == eight_workers ? "yes" : "no");
  out.require(strong_c >= 0.75, "held-out C below 0.75 on strong-signal data");
  out.require(null_c >= 0.45 && null_c <= 0.55, "held-out C outside [0.45, 0.55] without signal");
  out.require(one_worker == eight_workers && strong_c == strong_c8, "forest differs between 1 and 8 workers");
}

void estimator_equivalences(Outcome& out) {
  const auto grid = yearly_grid();
  Rng rng(77);

  // Discrete-time GLM with no covariates against Kaplan-Meier: yearly times
  // with censoring, and continuous times without censoring.
  double glm_gap = 0.0;
  for (int variant = 0; variant < 2; ++variant) {
    std::vector<SurvivalRecord> recs;
    for (int i = 0; i < 300; ++i) {
      const bool yearly = variant == 0;
      const double t = yearly ? static_cast<double>(rng.index(9) + 1) : 0.01 + 8.98 * rng.uniform();
      recs.push_back({"s" + std::to_string(i), Side::left, t, yearly ? rng.uniform() < 0.6 : true});
    }
    const auto glm = fit_discrete_glm(Matrix(300, 0), recs, grid).predict_survival(std::span<const double>{});
    const auto km = kaplan_meier(recs, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) glm_gap = std::max(glm_gap, std::abs(glm.values()[k] - km.values()[k]));
  }

  // One tree, no bootstrap, no split allowed.
  SynthSpec spec;
  spec.n = 80;
  spec.p = 3;
  spec.seed = 5;
  spec.true_beta = {1.0, 0.0, -1.0};
  const auto d = simulate(spec);
  RsfParams single;
  single.n_trees = 1;
  single.bootstrap = false;
  single.min_node_size = 80;
  const auto forest = fit_rsf(d.x, d.records, single, grid);
  const bool na_exact = forest.predict_chf(row_of(d.x, 0)).values() == nelson_aalen(d.records, grid).values();

  double c_gap = 0.0, auc_gap = 0.0, brier_gap = 0.0;
  bool wilcoxon_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 12 + static_cast<std::size_t>(trial % 9);
    std::vector<SurvivalRecord> recs;
    std::vector<double> risk;
    std::vector<SurvivalCurve> curves;
    for (std::size_t i = 0; i < n; ++i) {
      recs.push_back({"s" + std::to_string(i), Side::left, std::round(rng.uniform() * 100.0) / 10.0, rng.uniform() < 0.65});
      risk.push_back(std::round(rng.normal() * 4.0) / 4.0);
      const double rate = 0.05 + 0.4 * rng.uniform();
      std::vector<double> v(grid.size());
      for (std::size_t k = 0; k < grid.size(); ++k) v[k] = std::exp(-rate * grid[k]);
      curves.emplace_back(grid, v);
    }
    recs[0] = {"s0", Side::left, 0.5, true};
    c_gap = std::max(c_gap, std::abs(concordance_index(risk, recs) - oracle::c_index(risk, recs)));

    const std::vector<double> times(grid.begin() + 1, grid.end());
    const auto auc = cumulative_dynamic_auc(curves, recs, times);
    for (const auto& [t, value] : auc.per_time) {
      std::vector<double> curve_risk;
      for (const auto& c : curves) curve_risk.push_back(1.0 - c.value_at(t));
      auc_gap = std::max(auc_gap, std::abs(value - oracle::auc(curve_risk, recs, t)));
    }
    for (double t : grid) {
      std::vector<double> s;
      for (const auto& c : curves) s.push_back(c.value_at(t));
      try {
        brier_gap = std::max(brier_gap, std::abs(brier_score(curves, recs, t) - oracle::brier(s, recs, t)));
      } catch (const Error&) {
        // Every record censored before t: no usable weight.
      }
    }

    std::vector<double> a, b, diffs;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(std::round(rng.normal() * 3.0));
      b.push_back(std::round(rng.normal() * 3.0));
      if (a.back() != b.back()) diffs.push_back(a.back() - b.back());
    }
    if (diffs.size() >= 5) {
      const auto w = wilcoxon_signed_rank(a, b);
      wilcoxon_exact = wilcoxon_exact && w.p_value == oracle::signed_rank_p(diffs);
    }
  }
  out.detail << " glm-km=" << glm_gap << " rsf=na:" << (na_exact ? "exact" : "differs") << " c=" << c_gap
             << " auc=" << auc_gap << " brier=" << brier_gap << " wilcoxon=" << (wilcoxon_exact ? "exact" : "differs");
  out.require(glm_gap <= 1e-8, "GLM intercept-only survival differs from Kaplan-Meier");
  out.require(na_exact, "single-leaf forest differs from Nelson-Aalen");
  out.require(c_gap <= 1e-10 && auc_gap <= 1e-10 && brier_gap <= 1e-10, "metric differs from its oracle");
  out.require(wilcoxon_exact, "Wilcoxon p-value differs from enumeration");
}

SurvivalCurve curve_on_years(std::vector<double> values) {
  TimeGrid grid(values.size());
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = static_cast<double>(k);
  return SurvivalCurve(grid, std::move(values));
}

void threshold_rule(Outcome& out) {
  out.require(time_to_event_from_curve(curve_on_years({1.0, 0.9, 0.7, 0.5, 0.38})) == TimePrediction::at(3),
              "crossing after year 3");
  out.require(time_to_event_from_curve(curve_on_years({1.0, 0.95, 0.9, 0.88, 0.85})).is_beyond_horizon(),
              "never crossing");
  out.require(time_to_event_from_curve(curve_on_years({1.0, 0.3, 0.2, 0.1})) == TimePrediction::at(0),
              "crossing in the first year");
  Rng rng(11);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> values{1.0};
    for (int k = 1; k < 10; ++k) {
      const double drop = rng.uniform() < 0.2 ? 0.0 : rng.uniform() * 0.3;
      values.push_back(std::max(0.0, values.back() - drop));
    }
    const auto curve = curve_on_years(values);
    double lo = rng.uniform_open(), hi = rng.uniform_open();
    if (lo > hi) std::swap(lo, hi);
    if (!(time_to_event_from_curve(curve, hi) <= time_to_event_from_curve(curve, lo))) ++violations;
  }
  out.detail << " monotonicity violations=" << violations << "/1000";
  out.require(violations == 0, "threshold monotonicity");
}

std::vector<double> random_simplex(Rng& rng, std::size_t c) {
  std::vector<double> v(c);
  double sum = 0.0;
  for (auto& x : v) sum += (x = -std::log(rng.uniform_open()));
  for (auto& x : v) x /= sum;
  return v;
}

void loss_math(Outcome& out) {
  Rng rng(5);
  double worst = 0.0;
  for (int batch = 0; batch < 100; ++batch) {
    const std::size_t classes = 2 + static_cast<std::size_t>(batch % 29);
    const std::size_t size = 1 + static_cast<std::size_t>(batch % 6);
    std::vector<std::pair<ClassDistribution, ClassDistribution>> pairs;
    std::vector<std::vector<double>> raw;
    double consistency = 0.0, sharpness = 0.0;
    std::vector<double> mean(classes, 0.0);
    for (std::size_t i = 0; i < size; ++i) {
      auto p = random_simplex(rng, classes);
      auto q = random_simplex(rng, classes);
      const double kl = kl_divergence(ClassDistribution(p), ClassDistribution(q));
      worst = std::max(worst, std::abs(kl - oracle::kl(p, q)));
      consistency += 0.5 * (oracle::kl(p, q) + oracle::kl(q, p)) / static_cast<double>(size);
      raw.push_back(p);
      raw.push_back(q);
      pairs.emplace_back(ClassDistribution(std::move(p)), ClassDistribution(std::move(q)));
    }
    for (const auto& d : raw) {
      sharpness += oracle::entropy(d) / static_cast<double>(raw.size());
      for (std::size_t k = 0; k < classes; ++k) mean[k] += d[k] / static_cast<double>(raw.size());
    }
    const double diversity = oracle::entropy(mean);
    const auto terms = twist_loss(pairs);
    worst = std::max({worst, std::abs(terms.consistency - consistency), std::abs(terms.sharpness - sharpness),
                      std::abs(terms.diversity - diversity),
                      std::abs(terms.total - (consistency + sharpness - diversity))});
  }

  double worst_sum = 0.0, worst_mean = 0.0, worst_mean_at = 0.0;
  for (int step = 0; step <= 900; ++step) {
    const double y = step / 100.0;
    const auto label = soft_label(y);
    double sum = 0.0;
    for (double p : label.distribution().probabilities()) sum += p;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    if (y >= 2.0 && y <= 7.0) {
      const double error = std::abs(expected_time(label) - y);
      if (error > worst_mean) {
        worst_mean = error;
        worst_mean_at = y;
      }
    }
  }
  out.detail << " max term err=" << worst << " max |sum-1|=" << worst_sum << " max |E-y| on [2,7]=" << worst_mean
             << " at y=" << worst_mean_at;
  out.require(worst <= 1e-12, "KL or TWIST term differs from re-evaluation by more than 1e-12");
  out.require(worst_sum <= 1e-9, "soft label does not sum to 1");
  out.require(worst_mean <= 0.5, "|expected_time - y| exceeds 0.5 on [2, 7]");
}

void pipeline_end_to_end(Outcome& out) {
  const fs::path dir = fs::temp_directory_path() / "tkr_acceptance_pipeline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  PipelineConfig config;
  config.out = dir.string();
  config.seed = 42;
  config.synth.n = 1000;
  config.synth.p = 50;
  config.synth.bilateral_fraction = 0.3;
  config.dataset = (dir / "dataset.csv").string();
  config.schema = (dir / "dataset.schema").string();
  config.model = ModelKind::rsf;

  std::ostringstream log;
  const auto start = Clock::now();
  cmd_simulate(config, log);
  cmd_prepare(config, log);
  const auto fit = cmd_fit(config, log);
  cmd_predict(config, log);
  const auto report = cmd_evaluate(config, log);
  const double elapsed = seconds_since(start);

  const auto grid = config.grid();
  std::vector<PredictionRow> rows;
  for (const auto& r : load_records((dir / "test.csv").string(), 9.0)) {
    std::vector<double> values;
    for (double t : grid) values.push_back(r.event && t >= r.time ? 0.0 : 1.0);
    SurvivalCurve curve(grid, values);
    const auto predicted = time_to_event_from_curve(curve);
    rows.push_back({r.subject_id, r.side, -r.time, std::move(curve), predicted});
  }
  {
    std::ofstream file(dir / "oracle.csv");
    write_predictions(file, rows, "oracle");
  }
  config.predictions = (dir / "oracle.csv").string();
  const auto oracle_report = cmd_evaluate(config, log);
  fs::remove_all(dir);

  out.detail << " elapsed=" << elapsed << "s selected=" << fit.selected_names.size() << " model C=" << report.c_index
             << " oracle ibs=" << oracle_report.ibs << " c=" << oracle_report.c_index
             << " acc=" << oracle_report.accuracy;
  out.require(elapsed < 300.0, "pipeline took 5 minutes or more");
  out.require(oracle_report.ibs == 0.0 && oracle_report.c_index == 1.0 && oracle_report.accuracy == 1.0,
              "oracle predictions did not score perfectly");
}

void forest_beats_linear_models(Outcome& out) {
  const auto grid = yearly_grid();
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthSpec spec;
    spec.n = 1000;
    spec.p = 6;
    spec.seed = 100 + seed;
    spec.true_beta = {0.5, -0.5, 0.5, 0.0, 0.0, 0.0};
    spec.interactions = {{0, 1, 1.5}};
    const auto d = simulate(spec);
    const Matrix train = d.x.topRows(700);
    const Matrix test = d.x.bottomRows(300);
    const auto train_records = slice(d.records, 0, 700);
    const auto test_records = slice(d.records, 700, 1000);

    const double rsf_c = held_out_c_index(fit_rsf(train, train_records, forest_params(seed), grid), test, test_records);
    const double cox_c = held_out_c_index(fit_lasso_cox(train, train_records, 0.0, grid), test, test_records);
    const double glm_c = held_out_c_index(fit_discrete_glm(train, train_records, grid), test, test_records);
    const bool win = rsf_c >= cox_c && rsf_c >= glm_c;
    wins += win ? 1 : 0;
    out.detail << " s" << seed << ":" << (win ? "rsf" : "linear");
  }
  out.detail << " wins=" << wins << "/10";
  out.require(wins >= 7, "forest matched or beat both linear models on fewer than 7 of 10 seeds");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"lasso_cox_support_recovery", support_recovery},
      {"lasso_cox_optimizer_vs_oracle", optimizer_vs_oracle},
      {"rsf_signal_detection", rsf_signal_detection},
      {"estimator_oracle_equivalences", estimator_equivalences},
      {"threshold_rule_suite", threshold_rule},
      {"loss_math", loss_math},
      {"pipeline_end_to_end", pipeline_end_to_end},
      {"rsf_vs_linear_on_interactions", forest_beats_linear_models},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome outcome;
    const auto start = Clock::now();
    try {
      run(outcome);
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail << " [exception: " << e.what() << "]";
    }
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << name << " (" << seconds_since(start) << " s)"
              << outcome.detail.str() << std::endl;
    failures += outcome.pass ? 0 : 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
