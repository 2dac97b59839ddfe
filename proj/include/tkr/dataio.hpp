#pragma once

// Tabular survival datasets: loading, validation, imputation, subject-level
// splitting, block concatenation and design-matrix encoding.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tkr/common.hpp"

namespace tkr {

enum class Side { left, right };

std::string_view to_string(Side side);
Side parse_side(std::string_view text);

/// One knee's outcome. `event == false` means right-censored at `time`.
struct SurvivalRecord {
  std::string subject_id;
  Side side = Side::left;
  double time = 0.0;
  bool event = false;

  bool operator==(const SurvivalRecord&) const = default;
};

enum class ColumnKind { quantitative, categorical };

std::string_view to_string(ColumnKind kind);

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::quantitative;
  /// Categorical labels in lexicographic order; a categorical cell stores the
  /// index of its label here.
  std::vector<std::string> levels;

  bool operator==(const Column&) const = default;
};

/// Row-major covariate matrix with an explicit presence mask.
class FeatureTable {
 public:
  FeatureTable() = default;
  /// All cells start out missing.
  FeatureTable(std::vector<Column> columns, std::size_t rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<Column>& columns() const { return columns_; }
  const Column& column(std::size_t j) const { return columns_.at(j); }
  std::optional<std::size_t> find_column(std::string_view name) const;

  bool present(std::size_t i, std::size_t j) const { return present_[i * cols() + j] != 0; }
  std::optional<double> at(std::size_t i, std::size_t j) const;
  /// Label of a categorical cell; empty when missing.
  std::optional<std::string> label(std::size_t i, std::size_t j) const;

  void set(std::size_t i, std::size_t j, double value);
  void clear(std::size_t i, std::size_t j);

  std::size_t missing_count() const;

  bool operator==(const FeatureTable&) const = default;

 private:
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
  std::vector<double> cells_;
  std::vector<std::uint8_t> present_;
};

/// Covariate kinds keyed by column name, plus an optional fallback kind for
/// undeclared columns (`default = quantitative`).
struct Schema {
  std::map<std::string, ColumnKind> kinds;
  std::optional<ColumnKind> fallback;

  ColumnKind kind_of(const std::string& column) const;
};

Schema parse_schema(std::istream& in);
Schema load_schema(const std::string& path);
void write_schema(std::ostream& out, const FeatureTable& table);

struct Dataset {
  FeatureTable features;
  std::vector<SurvivalRecord> records;
};

inline constexpr double kDefaultHorizon = 9.0;

/// Reads the CSV dialect: header `subject_id,side,time,event,<covariates>`,
/// empty field = missing, lines starting with '#' are comments. Errors name the
/// 1-based data row.
Dataset read_dataset(std::istream& in, const Schema& schema, double horizon = kDefaultHorizon);
Dataset load_dataset(const std::string& path, const Schema& schema,
                     double horizon = kDefaultHorizon);
void write_dataset(std::ostream& out, const Dataset& dataset, std::string_view header_comment = {});

/// Mean fill for quantitative columns, mode fill for categorical columns
/// (ties go to the lexicographically smallest label).
FeatureTable impute(const FeatureTable& table);

enum class Partition { train, validation, test };

std::string_view to_string(Partition partition);
Partition parse_partition(std::string_view text);

struct SplitFractions {
  double train = 0.737;
  double validation = 0.102;
  double test = 0.161;
};

struct SplitAssignment {
  std::map<std::string, Partition> subjects;

  Partition partition_of(const std::string& subject_id) const;
  std::size_t count(Partition partition) const;
};

/// Shuffles distinct subjects with `seed` and deals them into partitions by
/// largest-remainder quotas. Both knees of a subject always land together.
SplitAssignment split_subject_level(std::span<const SurvivalRecord> records,
                                    const SplitFractions& fractions, std::uint64_t seed);

void write_split(std::ostream& out, const SplitAssignment& split, std::string_view header_comment = {});

/// Rows of `dataset` whose subject is assigned to `partition`, in original order.
Dataset subset(const Dataset& dataset, const SplitAssignment& split, Partition partition);

struct FeatureBlock {
  std::string label;
  FeatureTable table;
};

/// Appends columns left-to-right in block order. With more than one block
/// every column name becomes `<label>:<name>`.
FeatureTable concat_features(std::span<const FeatureBlock> blocks);

/// Maps a (complete) FeatureTable onto a numeric design matrix. Quantitative
/// columns pass through; a categorical column with levels L0 < L1 < ... becomes
/// indicator columns `name=L1`, `name=L2`, ... (L0 is the reference level).
class DesignEncoder {
 public:
  struct Output {
    std::string name;
    std::string source;
    std::optional<std::string> level;
  };

  static DesignEncoder fit(const FeatureTable& table);

  /// Throws naming any source column absent from `table` or any missing cell.
  Matrix encode(const FeatureTable& table) const;

  const std::vector<Output>& outputs() const { return outputs_; }
  std::vector<std::string> names() const;

  nlohmann::json to_json() const;
  static DesignEncoder from_json(const nlohmann::json& j);

 private:
  std::vector<Output> outputs_;
};

/// Columns `indices` of `x`, in the given order.
Matrix select_columns(const Matrix& x, std::span<const std::size_t> indices);

}  // namespace tkr
