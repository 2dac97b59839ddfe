#pragma once

// Batch pipeline behind the `tkr` command line: simulate, prepare, fit,
// predict and evaluate, each reading and writing plain files.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tkr/coxnet.hpp"
#include "tkr/dataio.hpp"
#include "tkr/metrics.hpp"
#include "tkr/rsf.hpp"
#include "tkr/survcore.hpp"
#include "tkr/synth.hpp"

namespace tkr {

enum class ModelKind { cox, glm, rsf };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

/// Every setting of the pipeline. Populated from defaults, then a key-value
/// config file, then command-line flags (last writer wins).
struct PipelineConfig {
  // Paths.
  std::string dataset;
  std::string schema;
  std::string out = "out";
  std::string model_file;       // default <out>/model.json
  std::string input;            // default <out>/test.csv
  std::string predictions_out;  // default <out>/predictions.csv
  std::string predictions;      // default <out>/predictions.csv
  std::string compare;          // optional second predictions file
  std::string records;          // default <out>/test.csv

  SplitFractions fractions;
  std::uint64_t seed = 42;
  int threads = 1;

  int lambda_count = 50;
  double lambda_ratio = 1e-3;
  std::optional<double> lambda;
  LambdaRule lambda_rule = LambdaRule::one_se;
  double selection_tolerance = 1e-8;

  ModelKind model = ModelKind::rsf;
  RsfParams rsf;
  double threshold = kDefaultThreshold;
  int horizon = 9;

  SynthSpec synth;
  std::size_t synth_signals = 5;
  double synth_magnitude = 1.0;

  /// Applies one `key = value` setting; throws on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  std::string out_path(const std::string& name) const;
  TimeGrid grid() const { return yearly_grid(horizon); }
};

/// Reads `key = value` lines ('#' comments allowed) into `config`.
void apply_config_file(PipelineConfig& config, const std::string& path);
void apply_config_text(PipelineConfig& config, std::istream& in);

/// Record columns only; covariates are ignored.
std::vector<SurvivalRecord> load_records(const std::string& path, double horizon);

/// Serialized fitted model together with the encoding of its input columns.
struct ModelFile {
  ModelKind kind = ModelKind::rsf;
  std::uint64_t seed = 0;
  TimeGrid grid;
  DesignEncoder encoder;
  std::vector<std::size_t> selected;
  std::vector<std::string> selected_names;
  double lambda = 0.0;
  std::variant<CoxModel, GlmModel, RsfModel> model;

  nlohmann::json to_json() const;
  static ModelFile from_json(const nlohmann::json& j);

  /// Survival curve and risk score for one fully encoded design row.
  std::pair<SurvivalCurve, double> predict(std::span<const double> design_row) const;
};

void write_model_file(const std::string& path, const ModelFile& model);
ModelFile read_model_file(const std::string& path);

/// One row of a predictions file.
struct PredictionRow {
  std::string subject_id;
  Side side = Side::left;
  double risk = 0.0;
  SurvivalCurve curve;
  TimePrediction predicted = TimePrediction::beyond_horizon();
};

void write_predictions(std::ostream& out, std::span<const PredictionRow> rows, std::string_view header_comment);
std::vector<PredictionRow> read_predictions(const std::string& path);

struct PrepareSummary {
  std::map<Partition, std::size_t> subjects;
  std::map<Partition, std::size_t> knees;
  std::size_t imputed_cells = 0;
};

struct FitSummary {
  double lambda = 0.0;
  std::vector<std::string> selected_names;
  LambdaChoice choice;
};

struct SimulateSummary {
  std::size_t records = 0;
  double achieved_censoring = 0.0;
};

PrepareSummary cmd_prepare(const PipelineConfig& config, std::ostream& log);
FitSummary cmd_fit(const PipelineConfig& config, std::ostream& log);
std::size_t cmd_predict(const PipelineConfig& config, std::ostream& log);
EvaluationReport cmd_evaluate(const PipelineConfig& config, std::ostream& log);
SimulateSummary cmd_simulate(const PipelineConfig& config, std::ostream& log);

}  // namespace tkr
