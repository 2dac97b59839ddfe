#include "tkr/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "tkr/csv.hpp"

namespace tkr {

namespace {

constexpr int kModelFileVersion = 1;
constexpr std::string_view kModelFormat = "tkr-model";

double to_double(const std::string& key, const std::string& value) {
  const auto parsed = csv::parse_double(value);
  if (!parsed || !std::isfinite(*parsed)) {
    throw Error(ErrorCode::invalid_argument, "config '" + key + "': '" + value + "' is not a number");
  }
  return *parsed;
}

long long to_integer(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  if (v != std::floor(v)) throw Error(ErrorCode::invalid_argument, "config '" + key + "' must be an integer");
  return static_cast<long long>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error(ErrorCode::invalid_argument, "config '" + key + "' must be true or false");
}

// "a:b:coef" terms separated by ';', feature indices 1-based.
std::vector<Interaction> parse_interactions(const std::string& value) {
  std::vector<Interaction> terms;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (csv::trim(item).empty()) continue;
    std::stringstream parts(item);
    std::string a, b, c;
    if (!std::getline(parts, a, ':') || !std::getline(parts, b, ':') || !std::getline(parts, c)) {
      throw Error(ErrorCode::invalid_argument, "interaction '" + item + "' must look like a:b:coefficient");
    }
    const auto ia = to_integer("sim_interactions", a);
    const auto ib = to_integer("sim_interactions", b);
    if (ia < 1 || ib < 1) throw Error(ErrorCode::invalid_argument, "interaction indices are 1-based");
    terms.push_back({static_cast<std::size_t>(ia - 1), static_cast<std::size_t>(ib - 1),
                     to_double("sim_interactions", c)});
  }
  return terms;
}

std::ofstream open_output(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::io, "failed while writing " + path);
}

void write_text_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  auto out = open_output(path);
  body(out);
  finish(out, path);
}

std::string seed_comment(const PipelineConfig& config) { return "tkr seed=" + std::to_string(config.seed); }

std::string key_of(const std::string& subject, Side side) { return subject + "/" + std::string(to_string(side)); }

Schema prepared_schema(const PipelineConfig& config) {
  if (!config.schema.empty()) return load_schema(config.schema);
  return load_schema(config.out_path("prepared.schema"));
}

std::string or_default(const std::string& value, const std::string& fallback) {
  return value.empty() ? fallback : value;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::cox: return "cox";
    case ModelKind::glm: return "glm";
    case ModelKind::rsf: return "rsf";
  }
  return "rsf";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "cox") return ModelKind::cox;
  if (text == "glm") return ModelKind::glm;
  if (text == "rsf") return ModelKind::rsf;
  throw Error(ErrorCode::invalid_argument, "model must be one of cox, glm, rsf");
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::set(const std::string& key, const std::string& raw) {
  const std::string value(csv::trim(raw));
  const std::map<std::string, std::function<void()>> setters = {
      {"dataset", [&] { dataset = value; }},
      {"schema", [&] { schema = value; }},
      {"out", [&] { out = value; }},
      {"model_file", [&] { model_file = value; }},
      {"input", [&] { input = value; }},
      {"predictions_out", [&] { predictions_out = value; }},
      {"predictions", [&] { predictions = value; }},
      {"compare", [&] { compare = value; }},
      {"records", [&] { records = value; }},
      {"train_fraction", [&] { fractions.train = to_double(key, value); }},
      {"validation_fraction", [&] { fractions.validation = to_double(key, value); }},
      {"test_fraction", [&] { fractions.test = to_double(key, value); }},
      {"seed", [&] { seed = static_cast<std::uint64_t>(to_integer(key, value)); }},
      {"threads", [&] { threads = static_cast<int>(to_integer(key, value)); }},
      {"lambda_count", [&] { lambda_count = static_cast<int>(to_integer(key, value)); }},
      {"lambda_ratio", [&] { lambda_ratio = to_double(key, value); }},
      {"lambda", [&] { lambda = to_double(key, value); }},
      {"lambda_rule", [&] { lambda_rule = parse_lambda_rule(value); }},
      {"selection_tolerance", [&] { selection_tolerance = to_double(key, value); }},
      {"model", [&] { model = parse_model_kind(value); }},
      {"n_trees", [&] { rsf.n_trees = static_cast<int>(to_integer(key, value)); }},
      {"mtry", [&] { rsf.mtry = static_cast<int>(to_integer(key, value)); }},
      {"min_leaf_events", [&] { rsf.min_leaf_events = static_cast<int>(to_integer(key, value)); }},
      {"min_node_size", [&] { rsf.min_node_size = static_cast<int>(to_integer(key, value)); }},
      {"bootstrap", [&] { rsf.bootstrap = to_bool(key, value); }},
      {"threshold", [&] { threshold = to_double(key, value); }},
      {"horizon", [&] { horizon = static_cast<int>(to_integer(key, value)); }},
      {"sim_n", [&] { synth.n = static_cast<std::size_t>(to_integer(key, value)); }},
      {"sim_p", [&] { synth.p = static_cast<std::size_t>(to_integer(key, value)); }},
      {"sim_signals", [&] { synth_signals = static_cast<std::size_t>(to_integer(key, value)); }},
      {"sim_magnitude", [&] { synth_magnitude = to_double(key, value); }},
      {"sim_shape", [&] { synth.weibull_shape = to_double(key, value); }},
      {"sim_scale", [&] { synth.weibull_scale = to_double(key, value); }},
      {"sim_censor_rate", [&] { synth.censor_rate = to_double(key, value); }},
      {"sim_bilateral_fraction", [&] { synth.bilateral_fraction = to_double(key, value); }},
      {"sim_interactions", [&] { synth.interactions = parse_interactions(value); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
  it->second();
}

void PipelineConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::invalid_argument, "threshold must lie in (0, 1)");
  if (std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "split fractions must sum to 1");
  }
  if (horizon < 1) throw Error(ErrorCode::invalid_argument, "horizon must be at least 1");
  if (threads < 1) throw Error(ErrorCode::invalid_argument, "threads must be at least 1");
  if (lambda && !(*lambda >= 0.0)) throw Error(ErrorCode::invalid_argument, "lambda must be >= 0");
}

std::string PipelineConfig::out_path(const std::string& name) const {
  return (std::filesystem::path(out) / name).string();
}

void apply_config_text(PipelineConfig& config, std::istream& in) {
  std::string line;
  std::size_t line_number = 0;
  while (csv::next_line(in, line, line_number)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse, "config line " + std::to_string(line_number) + ": expected 'key = value'");
    }
    config.set(std::string(csv::trim(std::string_view(line).substr(0, eq))), line.substr(eq + 1));
  }
}

void apply_config_file(PipelineConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config file " + path);
  apply_config_text(config, in);
}

std::vector<SurvivalRecord> load_records(const std::string& path, double horizon) {
  // Categorical fallback accepts any covariate text without interpreting it.
  Schema schema;
  schema.fallback = ColumnKind::categorical;
  return load_dataset(path, schema, horizon).records;
}

// ---------------------------------------------------------------------------
// Model files

nlohmann::json ModelFile::to_json() const {
  nlohmann::json body;
  std::visit([&](const auto& m) { body = m.to_json(); }, model);
  return {{"format", kModelFormat},
          {"version", kModelFileVersion},
          {"kind", to_string(kind)},
          {"seed", seed},
          {"grid", grid},
          {"encoder", encoder.to_json()},
          {"selected", selected},
          {"selected_names", selected_names},
          {"lambda", lambda},
          {"model", body}};
}

ModelFile ModelFile::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kModelFormat) throw Error(ErrorCode::parse, "not a tkr model file");
  if (j.at("version").get<int>() != kModelFileVersion) {
    throw Error(ErrorCode::parse, "unsupported model file version " + j.at("version").dump());
  }
  ModelFile file;
  file.kind = parse_model_kind(j.at("kind").get<std::string>());
  file.seed = j.at("seed").get<std::uint64_t>();
  file.grid = j.at("grid").get<TimeGrid>();
  file.encoder = DesignEncoder::from_json(j.at("encoder"));
  file.selected = j.at("selected").get<std::vector<std::size_t>>();
  file.selected_names = j.at("selected_names").get<std::vector<std::string>>();
  file.lambda = j.at("lambda").get<double>();
  switch (file.kind) {
    case ModelKind::cox: file.model = CoxModel::from_json(j.at("model")); break;
    case ModelKind::glm: file.model = GlmModel::from_json(j.at("model")); break;
    case ModelKind::rsf: file.model = RsfModel::from_json(j.at("model")); break;
  }
  return file;
}

std::pair<SurvivalCurve, double> ModelFile::predict(std::span<const double> design_row) const {
  return std::visit(
      [&](const auto& m) { return std::make_pair(m.predict_survival(design_row), m.predict_risk(design_row)); }, model);
}

void write_model_file(const std::string& path, const ModelFile& model) {
  write_text_file(path, [&](std::ostream& out) { out << model.to_json().dump(1) << '\n'; });
}

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open model file " + path);
  try {
    return ModelFile::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Prediction files

void write_predictions(std::ostream& out, std::span<const PredictionRow> rows, std::string_view header_comment) {
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "subject_id,side,risk";
  const TimeGrid grid = rows.empty() ? TimeGrid{} : rows.front().curve.grid();
  for (double t : grid) out << ",S_" << csv::format_double(t);
  out << ",predicted_year\n";
  for (const auto& row : rows) {
    out << csv::escape(row.subject_id) << ',' << to_string(row.side) << ',' << csv::format_double(row.risk);
    for (double s : row.curve.values()) out << ',' << csv::format_double(s);
    out << ',';
    if (row.predicted.is_beyond_horizon()) {
      out << "beyond_horizon";
    } else {
      out << csv::format_double(row.predicted.year());
    }
    out << '\n';
  }
}

std::vector<PredictionRow> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open predictions file " + path);
  std::string line;
  std::size_t line_number = 0;
  if (!csv::next_line(in, line, line_number)) throw Error(ErrorCode::parse, path + ": empty predictions file");
  const auto header = csv::split_line(line).value_or(std::vector<std::string>{});
  if (header.size() < 5 || header[0] != "subject_id" || header[1] != "side" || header[2] != "risk" ||
      header.back() != "predicted_year") {
    throw Error(ErrorCode::parse, path + ": header must be subject_id,side,risk,S_<t>...,predicted_year");
  }
  TimeGrid grid;
  for (std::size_t k = 3; k + 1 < header.size(); ++k) {
    const auto& name = header[k];
    const auto t = name.rfind("S_", 0) == 0 ? csv::parse_double(name.substr(2)) : std::nullopt;
    if (!t) throw Error(ErrorCode::parse, path + ": bad survival column '" + name + "'");
    grid.push_back(*t);
  }
  std::vector<PredictionRow> rows;
  std::size_t row_number = 0;
  while (csv::next_line(in, line, line_number)) {
    ++row_number;
    const auto fields = csv::split_line(line);
    auto fail = [&](const std::string& what) {
      return Error(ErrorCode::parse, path + ": row " + std::to_string(row_number) + ": " + what);
    };
    if (!fields || fields->size() != header.size()) throw fail("wrong number of fields");
    PredictionRow row;
    row.subject_id = (*fields)[0];
    row.side = parse_side((*fields)[1]);
    const auto risk = csv::parse_double((*fields)[2]);
    if (!risk) throw fail("risk is not a number");
    row.risk = *risk;
    std::vector<double> values;
    for (std::size_t k = 3; k + 1 < fields->size(); ++k) {
      const auto v = csv::parse_double((*fields)[k]);
      if (!v) throw fail("survival value is not a number");
      values.push_back(*v);
    }
    row.curve = SurvivalCurve(grid, std::move(values));
    const std::string_view year = csv::trim(fields->back());
    if (year == "beyond_horizon") {
      row.predicted = TimePrediction::beyond_horizon();
    } else {
      const auto y = csv::parse_double(year);
      if (!y) throw fail("predicted_year must be a number or beyond_horizon");
      row.predicted = TimePrediction::at(*y);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

SimulateSummary cmd_simulate(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  SynthSpec spec = config.synth;
  spec.seed = config.seed;
  spec.horizon = static_cast<double>(config.horizon);
  spec.true_beta = sparse_beta(spec.p, config.synth_signals, config.synth_magnitude);
  const auto data = generate(spec);
  const auto comment = seed_comment(config);

  write_text_file(config.out_path("dataset.csv"),
                  [&](std::ostream& out) { write_dataset(out, data.dataset, comment); });
  write_text_file(config.out_path("dataset.schema"),
                  [&](std::ostream& out) { write_schema(out, data.dataset.features); });
  const auto grid = config.grid();
  write_text_file(config.out_path("truth.csv"), [&](std::ostream& out) {
    out << "# " << comment << '\n' << "subject_id,side,true_risk,latent_event_time";
    for (double t : grid) out << ",S_" << csv::format_double(t);
    out << '\n';
    std::vector<double> row(spec.p);
    for (std::size_t i = 0; i < spec.n; ++i) {
      for (std::size_t j = 0; j < spec.p; ++j) row[j] = *data.dataset.features.at(i, j);
      const auto& r = data.dataset.records[i];
      out << r.subject_id << ',' << to_string(r.side) << ',' << csv::format_double(data.true_risk[i]) << ','
          << csv::format_double(data.latent_event_time[i]);
      for (double t : grid) out << ',' << csv::format_double(true_survival(spec, row, t));
      out << '\n';
    }
  });
  log << "simulated " << spec.n << " records, " << spec.p << " features, censoring "
      << data.achieved_censoring << '\n';
  return {spec.n, data.achieved_censoring};
}

PrepareSummary cmd_prepare(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  if (config.dataset.empty() || config.schema.empty()) {
    throw Error(ErrorCode::invalid_argument, "prepare needs --dataset and --schema");
  }
  const auto schema = load_schema(config.schema);
  auto dataset = load_dataset(config.dataset, schema, static_cast<double>(config.horizon));
  PrepareSummary summary;
  summary.imputed_cells = dataset.features.missing_count();
  dataset.features = impute(dataset.features);
  const auto split = split_subject_level(dataset.records, config.fractions, config.seed);
  const auto comment = seed_comment(config);

  write_text_file(config.out_path("imputed.csv"), [&](std::ostream& out) { write_dataset(out, dataset, comment); });
  write_text_file(config.out_path("split.csv"), [&](std::ostream& out) { write_split(out, split, comment); });
  write_text_file(config.out_path("prepared.schema"),
                  [&](std::ostream& out) { write_schema(out, dataset.features); });
  for (const auto partition : {Partition::train, Partition::validation, Partition::test}) {
    const auto part = subset(dataset, split, partition);
    const std::string name(to_string(partition));
    write_text_file(config.out_path(name + ".csv"), [&](std::ostream& out) { write_dataset(out, part, comment); });
    summary.subjects[partition] = split.count(partition);
    summary.knees[partition] = part.records.size();
    log << "partition " << name << ": subjects=" << summary.subjects[partition]
        << " knees=" << summary.knees[partition] << '\n';
  }
  log << "imputed " << summary.imputed_cells << " missing cells\n";
  return summary;
}

FitSummary cmd_fit(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const auto schema = prepared_schema(config);
  const double horizon = static_cast<double>(config.horizon);
  const auto train = load_dataset(config.out_path("train.csv"), schema, horizon);
  const auto validation = load_dataset(config.out_path("validation.csv"), schema, horizon);
  const auto grid = config.grid();

  const auto encoder = DesignEncoder::fit(train.features);
  const Matrix train_x = encoder.encode(train.features);
  const Matrix validation_x = encoder.encode(validation.features);

  FitSummary summary;
  if (config.lambda) {
    summary.choice.lambda = *config.lambda;
    summary.choice.path = {*config.lambda};
  } else {
    const auto path = lambda_path(train_x, train.records, config.lambda_count, config.lambda_ratio);
    summary.choice =
        choose_lambda(train_x, train.records, validation_x, validation.records, path, grid, {}, config.lambda_rule);
  }
  summary.lambda = summary.choice.lambda;
  const auto lasso = fit_lasso_cox(train_x, train.records, summary.lambda, grid);
  const auto selected = select_features(lasso, config.selection_tolerance);
  if (selected.empty()) {
    throw Error(ErrorCode::no_features,
                "no features selected at lambda=" + csv::format_double(summary.lambda));
  }
  const auto names = encoder.names();
  for (auto j : selected) summary.selected_names.push_back(names[j]);

  const Matrix x = select_columns(train_x, selected);
  ModelFile file;
  file.kind = config.model;
  file.seed = config.seed;
  file.grid = grid;
  file.encoder = encoder;
  file.selected = selected;
  file.selected_names = summary.selected_names;
  file.lambda = summary.lambda;
  switch (config.model) {
    case ModelKind::cox: file.model = fit_lasso_cox(x, train.records, 0.0, grid); break;
    case ModelKind::glm: file.model = fit_discrete_glm(x, train.records, grid); break;
    case ModelKind::rsf: {
      RsfParams params = config.rsf;
      params.seed = mix_seed(config.seed, 1);
      file.model = fit_rsf(x, train.records, params, grid, config.threads);
      break;
    }
  }
  write_model_file(or_default(config.model_file, config.out_path("model.json")), file);

  nlohmann::json report = {{"seed", config.seed},
                           {"model", to_string(config.model)},
                           {"lambda", summary.lambda},
                           {"lambda_rule", config.lambda ? "fixed" : to_string(config.lambda_rule)},
                           {"lambda_path", summary.choice.path},
                           {"best_validation_c_index", summary.choice.best_c_index},
                           {"validation_c_index_se", summary.choice.c_index_se},
                           {"validation_c_index", summary.choice.validation_c_index},
                           {"path_selected_counts", summary.choice.selected_counts},
                           {"selected_count", selected.size()},
                           {"selected_features", summary.selected_names}};
  write_text_file(config.out_path("fit_report.json"), [&](std::ostream& out) { out << report.dump(2) << '\n'; });
  write_text_file(config.out_path("fit_report.txt"), [&](std::ostream& out) {
    out << "model: " << to_string(config.model) << "\nlambda: " << csv::format_double(summary.lambda)
        << "\nselected: " << selected.size() << '\n';
    for (const auto& name : summary.selected_names) out << "  " << name << '\n';
  });
  log << "lambda=" << csv::format_double(summary.lambda) << " selected=" << selected.size() << " model="
      << to_string(config.model) << '\n';
  return summary;
}

std::size_t cmd_predict(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const auto file = read_model_file(or_default(config.model_file, config.out_path("model.json")));
  const auto input = or_default(config.input, config.out_path("test.csv"));
  const auto dataset = load_dataset(input, prepared_schema(config), static_cast<double>(config.horizon));
  const Matrix design = select_columns(file.encoder.encode(dataset.features), file.selected);

  std::vector<PredictionRow> rows;
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const auto row = design.row(i);
    auto [curve, risk] = file.predict(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    const auto& record = dataset.records[static_cast<std::size_t>(i)];
    PredictionRow out{record.subject_id, record.side, risk, curve, time_to_event_from_curve(curve, config.threshold)};
    rows.push_back(std::move(out));
  }
  const auto path = or_default(config.predictions_out, config.out_path("predictions.csv"));
  write_text_file(path, [&](std::ostream& out) {
    write_predictions(out, rows, seed_comment(config) + " model=" + std::string(to_string(file.kind)) +
                                     " threshold=" + csv::format_double(config.threshold));
  });
  log << "wrote " << rows.size() << " predictions to " << path << '\n';
  return rows.size();
}

namespace {

std::vector<PredictionRow> align(const std::vector<PredictionRow>& predictions,
                                 std::span<const SurvivalRecord> records, const std::string& source) {
  std::map<std::string, const PredictionRow*> by_key;
  for (const auto& p : predictions) {
    if (!by_key.emplace(key_of(p.subject_id, p.side), &p).second) {
      throw Error(ErrorCode::validation, source + ": duplicate prediction for " + key_of(p.subject_id, p.side));
    }
  }
  std::vector<PredictionRow> aligned;
  std::vector<std::string> unmatched;
  std::set<std::string> used;
  for (const auto& r : records) {
    const auto key = key_of(r.subject_id, r.side);
    const auto it = by_key.find(key);
    if (it == by_key.end()) {
      unmatched.push_back(key + " (no prediction)");
      continue;
    }
    used.insert(key);
    aligned.push_back(*it->second);
  }
  for (const auto& [key, p] : by_key) {
    if (!used.contains(key)) unmatched.push_back(key + " (no record)");
  }
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& u : unmatched) list += (list.empty() ? "" : ", ") + u;
    throw Error(ErrorCode::validation, source + ": predictions and records do not match: " + list);
  }
  return aligned;
}

// Per event record |y - yhat| in years; beyond_horizon counts as one step
// past the last grid point.
std::vector<double> absolute_year_errors(std::span<const PredictionRow> rows, std::span<const SurvivalRecord> records,
                                         const TimeGrid& grid) {
  std::vector<double> errors;
  const double beyond = grid.back() + 1.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].event) continue;
    const double truth = grid[nearest_grid_index(grid, records[i].time)];
    const double guess = rows[i].predicted.is_beyond_horizon() ? beyond : rows[i].predicted.year();
    errors.push_back(std::abs(truth - guess));
  }
  return errors;
}

}  // namespace

EvaluationReport cmd_evaluate(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const auto predictions_path = or_default(config.predictions, config.out_path("predictions.csv"));
  const auto records_path = or_default(config.records, config.out_path("test.csv"));
  const auto records = load_records(records_path, static_cast<double>(config.horizon));
  const auto rows = align(read_predictions(predictions_path), records, predictions_path);
  if (rows.empty()) throw Error(ErrorCode::validation, "nothing to evaluate");

  std::vector<SurvivalCurve> curves;
  std::vector<double> risks;
  std::vector<TimePrediction> predicted;
  for (const auto& row : rows) {
    curves.push_back(row.curve);
    risks.push_back(row.risk);
    predicted.push_back(row.predicted);
  }
  const TimeGrid grid = curves.front().grid();
  auto report = evaluate(curves, risks, predicted, records, grid);

  if (!config.compare.empty()) {
    const auto other = align(read_predictions(config.compare), records, config.compare);
    const auto a = absolute_year_errors(rows, records, grid);
    const auto b = absolute_year_errors(other, records, grid);
    report.comparison = wilcoxon_signed_rank(a, b);
  }

  auto json = report.to_json();
  json["seed"] = config.seed;
  write_text_file(config.out_path("evaluation.json"), [&](std::ostream& out) { out << json.dump(2) << '\n'; });
  write_text_file(config.out_path("evaluation.txt"), [&](std::ostream& out) { report.write_table(out); });
  write_text_file(config.out_path("confusion.csv"), [&](std::ostream& out) {
    out << "# " << seed_comment(config) << '\n';
    report.confusion.write_csv(out);
  });
  report.write_table(log);
  return report;
}

}  // namespace tkr
