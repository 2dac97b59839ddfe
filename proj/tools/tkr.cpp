// tkr: batch driver for the time-to-TKR survival pipeline.

#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "tkr/pipeline.hpp"

namespace {

struct Flag {
  std::string key;
  std::string help;
};

const std::vector<Flag> kPrepareFlags = {
    {"dataset", "input knee-level CSV"},
    {"schema", "column schema file"},
    {"horizon", "follow-up horizon in years"},
    {"train_fraction", "train share of subjects"},
    {"validation_fraction", "validation share of subjects"},
    {"test_fraction", "test share of subjects"},
};

const std::vector<Flag> kFitFlags = {
    {"schema", "schema for partition files (default <out>/prepared.schema)"},
    {"model", "cox, glm or rsf"},
    {"model_file", "where to write the model (default <out>/model.json)"},
    {"lambda", "fixed lasso penalty instead of the validation search"},
    {"lambda_rule", "one_se or max_c_index"},
    {"lambda_count", "points on the lasso path"},
    {"lambda_ratio", "smallest / largest lambda on the path"},
    {"selection_tolerance", "|beta| above which a feature is selected"},
    {"n_trees", "forest size"},
    {"mtry", "features tried per split (0 = sqrt p)"},
    {"min_leaf_events", "events required in each child"},
    {"min_node_size", "nodes this small are not split"},
    {"bootstrap", "resample rows per tree (true/false)"},
    {"horizon", "follow-up horizon in years"},
};

const std::vector<Flag> kPredictFlags = {
    {"model_file", "model to apply (default <out>/model.json)"},
    {"input", "knee-level CSV to score (default <out>/test.csv)"},
    {"schema", "schema for the input (default <out>/prepared.schema)"},
    {"predictions_out", "output CSV (default <out>/predictions.csv)"},
    {"threshold", "survival level that marks the predicted year"},
    {"horizon", "follow-up horizon in years"},
};

const std::vector<Flag> kEvaluateFlags = {
    {"predictions", "predictions CSV (default <out>/predictions.csv)"},
    {"compare", "second predictions CSV for a paired Wilcoxon test"},
    {"records", "CSV with true times (default <out>/test.csv)"},
    {"horizon", "follow-up horizon in years"},
};

const std::vector<Flag> kSimulateFlags = {
    {"sim_n", "records"},
    {"sim_p", "features"},
    {"sim_signals", "nonzero coefficients"},
    {"sim_magnitude", "size of each nonzero coefficient"},
    {"sim_shape", "Weibull shape"},
    {"sim_scale", "Weibull scale"},
    {"sim_censor_rate", "target censored fraction"},
    {"sim_bilateral_fraction", "share of subjects with both knees"},
    {"sim_interactions", "a:b:coef terms joined by ';' (1-based)"},
    {"horizon", "administrative censoring time"},
};

std::string flag_name(const std::string& key) {
  std::string name = key;
  for (auto& c : name) {
    if (c == '_') c = '-';
  }
  return "--" + name;
}

using Values = std::map<std::string, std::string>;

void add_flags(CLI::App* command, const std::vector<Flag>& flags, Values& values) {
  for (const auto& flag : flags) command->add_option(flag_name(flag.key), values[flag.key], flag.help);
}

int fail(std::string_view code, const std::string& text) {
  std::string line = text;
  for (auto& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "ERROR " << code << ": " << line << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tkr: survival models for time to knee replacement"};
  app.require_subcommand(1);
  app.fallthrough();

  Values global;
  app.add_option("--config", global["config"], "key = value settings file");
  app.add_option("--seed", global["seed"], "master random seed");
  app.add_option("--threads", global["threads"], "worker threads for forest fitting");
  app.add_option("--out", global["out"], "output directory");

  std::map<std::string, Values> values;
  const std::vector<std::pair<std::string, const std::vector<Flag>*>> commands = {
      {"prepare", &kPrepareFlags},   {"fit", &kFitFlags},           {"predict", &kPredictFlags},
      {"evaluate", &kEvaluateFlags}, {"simulate", &kSimulateFlags},
  };
  const std::map<std::string, std::string> descriptions = {
      {"prepare", "impute missing cells and split subjects into train/validation/test"},
      {"fit", "select features with lasso Cox and fit the chosen model"},
      {"predict", "write survival curves and predicted years"},
      {"evaluate", "score predictions against observed times"},
      {"simulate", "generate a synthetic Weibull dataset"},
  };
  std::map<std::string, CLI::App*> subcommands;
  for (const auto& [name, flags] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    add_flags(sub, *flags, values[name]);
    subcommands[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("E_USAGE", e.what());
    return 2;
  }

  try {
    tkr::PipelineConfig config;
    if (app.count("--config") > 0) tkr::apply_config_file(config, global["config"]);
    for (const auto& key : {"seed", "threads", "out"}) {
      if (app.count(flag_name(key)) > 0) config.set(key, global[key]);
    }
    for (const auto& [name, sub] : subcommands) {
      if (!sub->parsed()) continue;
      for (const auto& flag : *std::find_if(commands.begin(), commands.end(),
                                            [&](const auto& c) { return c.first == name; })
                                   ->second) {
        if (sub->count(flag_name(flag.key)) > 0) config.set(flag.key, values[name][flag.key]);
      }
      if (name == "prepare") tkr::cmd_prepare(config, std::cout);
      if (name == "fit") tkr::cmd_fit(config, std::cout);
      if (name == "predict") tkr::cmd_predict(config, std::cout);
      if (name == "evaluate") tkr::cmd_evaluate(config, std::cout);
      if (name == "simulate") tkr::cmd_simulate(config, std::cout);
    }
  } catch (const tkr::Error& e) {
    return fail(tkr::to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail("E_IO", e.what());
  }
  return 0;
}
