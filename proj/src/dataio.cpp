#include "tkr/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "tkr/csv.hpp"

namespace tkr {

namespace {

constexpr std::size_t kRecordColumns = 4;
constexpr std::string_view kRecordHeader[kRecordColumns] = {"subject_id", "side", "time", "event"};

Error row_error(ErrorCode code, std::size_t row, const std::string& what) {
  return Error(code, "row " + std::to_string(row) + ": " + what);
}

}  // namespace

std::string_view to_string(Side side) { return side == Side::left ? "left" : "right"; }

Side parse_side(std::string_view text) {
  text = csv::trim(text);
  if (text == "left" || text == "L" || text == "l") return Side::left;
  if (text == "right" || text == "R" || text == "r") return Side::right;
  throw Error(ErrorCode::parse, "unknown side '" + std::string(text) + "'");
}

std::string_view to_string(ColumnKind kind) {
  return kind == ColumnKind::quantitative ? "quantitative" : "categorical";
}

// ---------------------------------------------------------------------------
// FeatureTable

FeatureTable::FeatureTable(std::vector<Column> columns, std::size_t rows)
    : columns_(std::move(columns)),
      rows_(rows),
      cells_(rows * columns_.size(), 0.0),
      present_(rows * columns_.size(), 0) {}

std::optional<std::size_t> FeatureTable::find_column(std::string_view name) const {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].name == name) return j;
  }
  return std::nullopt;
}

std::optional<double> FeatureTable::at(std::size_t i, std::size_t j) const {
  if (!present(i, j)) return std::nullopt;
  return cells_[i * cols() + j];
}

std::optional<std::string> FeatureTable::label(std::size_t i, std::size_t j) const {
  const auto value = at(i, j);
  if (!value) return std::nullopt;
  const auto& col = columns_[j];
  if (col.kind == ColumnKind::quantitative) return csv::format_double(*value);
  return col.levels.at(static_cast<std::size_t>(*value));
}

void FeatureTable::set(std::size_t i, std::size_t j, double value) {
  cells_[i * cols() + j] = value;
  present_[i * cols() + j] = 1;
}

void FeatureTable::clear(std::size_t i, std::size_t j) {
  cells_[i * cols() + j] = 0.0;
  present_[i * cols() + j] = 0;
}

std::size_t FeatureTable::missing_count() const {
  return static_cast<std::size_t>(std::count(present_.begin(), present_.end(), 0));
}

// ---------------------------------------------------------------------------
// Schema

ColumnKind Schema::kind_of(const std::string& column) const {
  if (auto it = kinds.find(column); it != kinds.end()) return it->second;
  if (fallback) return *fallback;
  throw Error(ErrorCode::validation, "column '" + column + "' is not declared in the schema");
}

Schema parse_schema(std::istream& in) {
  Schema schema;
  std::string line;
  std::size_t line_number = 0;
  while (csv::next_line(in, line, line_number)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse, "schema line " + std::to_string(line_number) + ": expected 'name = kind'");
    }
    const std::string key(csv::trim(std::string_view(line).substr(0, eq)));
    const std::string_view value = csv::trim(std::string_view(line).substr(eq + 1));
    ColumnKind kind;
    if (value == "quantitative") {
      kind = ColumnKind::quantitative;
    } else if (value == "categorical") {
      kind = ColumnKind::categorical;
    } else {
      throw Error(ErrorCode::parse, "schema line " + std::to_string(line_number) + ": unknown kind '" +
                                        std::string(value) + "'");
    }
    if (key == "default") {
      schema.fallback = kind;
    } else if (!schema.kinds.emplace(key, kind).second) {
      throw Error(ErrorCode::parse, "schema line " + std::to_string(line_number) + ": duplicate column '" + key + "'");
    }
  }
  return schema;
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open schema file " + path);
  return parse_schema(in);
}

void write_schema(std::ostream& out, const FeatureTable& table) {
  for (const auto& col : table.columns()) out << col.name << " = " << to_string(col.kind) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset I/O

Dataset read_dataset(std::istream& in, const Schema& schema, double horizon) {
  std::string line;
  std::size_t line_number = 0;
  if (!csv::next_line(in, line, line_number)) throw Error(ErrorCode::parse, "empty dataset: no header row");
  const auto header = csv::split_line(line);
  if (!header || header->size() < kRecordColumns) {
    throw Error(ErrorCode::parse, "header must start with subject_id,side,time,event");
  }
  for (std::size_t k = 0; k < kRecordColumns; ++k) {
    if (csv::trim((*header)[k]) != kRecordHeader[k]) {
      throw Error(ErrorCode::parse, "header column " + std::to_string(k + 1) + " must be '" +
                                        std::string(kRecordHeader[k]) + "'");
    }
  }

  std::vector<Column> columns;
  std::set<std::string> seen_names;
  for (std::size_t k = kRecordColumns; k < header->size(); ++k) {
    Column col;
    col.name = std::string(csv::trim((*header)[k]));
    if (!seen_names.insert(col.name).second) {
      throw Error(ErrorCode::parse, "duplicate header column '" + col.name + "'");
    }
    col.kind = schema.kind_of(col.name);
    columns.push_back(std::move(col));
  }
  for (const auto& [name, kind] : schema.kinds) {
    if (!seen_names.contains(name)) {
      throw Error(ErrorCode::validation, "schema column '" + name + "' is missing from the header");
    }
  }

  // Two passes over the cells: categorical levels must be known (and sorted)
  // before codes can be assigned.
  std::vector<std::vector<std::string>> raw_rows;
  Dataset dataset;
  std::set<std::pair<std::string, Side>> keys;
  std::size_t row = 0;
  while (csv::next_line(in, line, line_number)) {
    ++row;
    auto fields = csv::split_line(line);
    if (!fields) throw row_error(ErrorCode::parse, row, "unterminated quoted field");
    if (fields->size() != header->size()) {
      throw row_error(ErrorCode::parse, row,
                      "expected " + std::to_string(header->size()) + " fields, found " +
                          std::to_string(fields->size()));
    }
    SurvivalRecord record;
    record.subject_id = std::string(csv::trim((*fields)[0]));
    if (record.subject_id.empty()) throw row_error(ErrorCode::parse, row, "empty subject_id");
    try {
      record.side = parse_side((*fields)[1]);
    } catch (const Error& e) {
      throw row_error(ErrorCode::parse, row, e.what());
    }
    const auto time = csv::parse_double((*fields)[2]);
    if (!time || !std::isfinite(*time)) throw row_error(ErrorCode::parse, row, "time is not a number");
    if (*time < 0.0) throw row_error(ErrorCode::validation, row, "negative time");
    if (*time > horizon) throw row_error(ErrorCode::validation, row, "time exceeds horizon");
    record.time = *time;
    const auto event_text = csv::trim((*fields)[3]);
    if (event_text == "1") {
      record.event = true;
    } else if (event_text == "0") {
      record.event = false;
    } else {
      throw row_error(ErrorCode::parse, row, "event must be 0 or 1");
    }
    if (!keys.emplace(record.subject_id, record.side).second) {
      throw row_error(ErrorCode::validation, row,
                      "duplicate (subject_id, side) = (" + record.subject_id + ", " +
                          std::string(to_string(record.side)) + ")");
    }
    dataset.records.push_back(std::move(record));
    fields->erase(fields->begin(), fields->begin() + kRecordColumns);
    raw_rows.push_back(std::move(*fields));
  }

  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].kind != ColumnKind::categorical) continue;
    std::set<std::string> labels;
    for (const auto& raw : raw_rows) {
      const auto cell = csv::trim(raw[j]);
      if (!cell.empty()) labels.emplace(cell);
    }
    columns[j].levels.assign(labels.begin(), labels.end());
  }

  FeatureTable table(std::move(columns), raw_rows.size());
  for (std::size_t i = 0; i < raw_rows.size(); ++i) {
    for (std::size_t j = 0; j < table.cols(); ++j) {
      const auto cell = csv::trim(raw_rows[i][j]);
      if (cell.empty()) continue;
      const auto& col = table.column(j);
      if (col.kind == ColumnKind::categorical) {
        const auto it = std::lower_bound(col.levels.begin(), col.levels.end(), cell);
        table.set(i, j, static_cast<double>(it - col.levels.begin()));
      } else {
        const auto value = csv::parse_double(cell);
        if (!value || !std::isfinite(*value)) {
          throw row_error(ErrorCode::parse, i + 1, "column '" + col.name + "' is not a number");
        }
        table.set(i, j, *value);
      }
    }
  }
  dataset.features = std::move(table);
  return dataset;
}

Dataset load_dataset(const std::string& path, const Schema& schema, double horizon) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open dataset " + path);
  try {
    return read_dataset(in, schema, horizon);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& dataset, std::string_view header_comment) {
  const auto& table = dataset.features;
  if (table.rows() != dataset.records.size()) {
    throw Error(ErrorCode::invalid_argument, "feature rows and records are not aligned");
  }
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "subject_id,side,time,event";
  for (const auto& col : table.columns()) out << ',' << csv::escape(col.name);
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto& r = dataset.records[i];
    out << csv::escape(r.subject_id) << ',' << to_string(r.side) << ',' << csv::format_double(r.time) << ','
        << (r.event ? 1 : 0);
    for (std::size_t j = 0; j < table.cols(); ++j) {
      out << ',';
      if (const auto text = table.label(i, j)) out << csv::escape(*text);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Imputation

FeatureTable impute(const FeatureTable& table) {
  FeatureTable out = table;
  for (std::size_t j = 0; j < table.cols(); ++j) {
    const auto& col = table.column(j);
    std::size_t observed = 0;
    double fill = 0.0;
    if (col.kind == ColumnKind::quantitative) {
      double sum = 0.0;
      for (std::size_t i = 0; i < table.rows(); ++i) {
        if (const auto v = table.at(i, j)) {
          sum += *v;
          ++observed;
        }
      }
      fill = observed > 0 ? sum / static_cast<double>(observed) : 0.0;
    } else {
      // Codes follow lexicographic label order, so the first maximal count is
      // the smallest label among tied modes.
      std::vector<std::size_t> counts(col.levels.size(), 0);
      for (std::size_t i = 0; i < table.rows(); ++i) {
        if (const auto v = table.at(i, j)) {
          ++counts[static_cast<std::size_t>(*v)];
          ++observed;
        }
      }
      if (observed > 0) {
        fill = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      }
    }
    if (observed == 0 && table.rows() > 0) {
      throw Error(ErrorCode::validation, "column '" + col.name + "' has no observed values to impute from");
    }
    for (std::size_t i = 0; i < table.rows(); ++i) {
      if (!table.present(i, j)) out.set(i, j, fill);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

std::string_view to_string(Partition partition) {
  switch (partition) {
    case Partition::train: return "train";
    case Partition::validation: return "validation";
    case Partition::test: return "test";
  }
  return "train";
}

Partition parse_partition(std::string_view text) {
  text = csv::trim(text);
  if (text == "train") return Partition::train;
  if (text == "validation") return Partition::validation;
  if (text == "test") return Partition::test;
  throw Error(ErrorCode::parse, "unknown partition '" + std::string(text) + "'");
}

Partition SplitAssignment::partition_of(const std::string& subject_id) const {
  const auto it = subjects.find(subject_id);
  if (it == subjects.end()) throw Error(ErrorCode::validation, "subject '" + subject_id + "' has no partition");
  return it->second;
}

std::size_t SplitAssignment::count(Partition partition) const {
  return static_cast<std::size_t>(std::count_if(subjects.begin(), subjects.end(),
                                                [&](const auto& kv) { return kv.second == partition; }));
}

SplitAssignment split_subject_level(std::span<const SurvivalRecord> records, const SplitFractions& fractions,
                                    std::uint64_t seed) {
  const std::array<double, 3> share = {fractions.train, fractions.validation, fractions.test};
  for (double f : share) {
    if (!(f > 0.0)) throw Error(ErrorCode::invalid_argument, "split fractions must be positive");
  }
  if (std::abs(share[0] + share[1] + share[2] - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "split fractions must sum to 1");
  }

  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.subject_id);
  std::vector<std::string> subjects(unique.begin(), unique.end());
  const std::size_t n = subjects.size();
  if (n < share.size()) {
    throw Error(ErrorCode::invalid_argument,
                "need at least 3 subjects to split, found " + std::to_string(n));
  }

  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(subjects[i - 1], subjects[rng.index(i)]);

  // Largest-remainder quotas; remainder ties go to the earlier partition.
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < share.size(); ++k) {
    const double exact = share[k] * static_cast<double>(n);
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - static_cast<double>(quota[k]);
    assigned += quota[k];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++quota[order[k % 3]];

  SplitAssignment split;
  std::size_t cursor = 0;
  const std::array<Partition, 3> parts = {Partition::train, Partition::validation, Partition::test};
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t m = 0; m < quota[k]; ++m) split.subjects.emplace(subjects[cursor++], parts[k]);
  }
  return split;
}

void write_split(std::ostream& out, const SplitAssignment& split, std::string_view header_comment) {
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "subject_id,partition\n";
  for (const auto& [subject, partition] : split.subjects) {
    out << csv::escape(subject) << ',' << to_string(partition) << '\n';
  }
}

Dataset subset(const Dataset& dataset, const SplitAssignment& split, Partition partition) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (split.partition_of(dataset.records[i].subject_id) == partition) rows.push_back(i);
  }
  Dataset out;
  out.features = FeatureTable(dataset.features.columns(), rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.records.push_back(dataset.records[rows[r]]);
    for (std::size_t j = 0; j < dataset.features.cols(); ++j) {
      if (const auto v = dataset.features.at(rows[r], j)) out.features.set(r, j, *v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation

FeatureTable concat_features(std::span<const FeatureBlock> blocks) {
  if (blocks.empty()) return {};
  if (blocks.size() == 1) return blocks.front().table;
  const std::size_t rows = blocks.front().table.rows();
  std::vector<Column> columns;
  for (const auto& block : blocks) {
    if (block.table.rows() != rows) {
      throw Error(ErrorCode::invalid_argument, "block '" + block.label + "' has " +
                                                   std::to_string(block.table.rows()) + " rows, expected " +
                                                   std::to_string(rows));
    }
    for (auto col : block.table.columns()) {
      col.name = block.label + ":" + col.name;
      columns.push_back(std::move(col));
    }
  }
  std::set<std::string> names;
  for (const auto& col : columns) {
    if (!names.insert(col.name).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate column '" + col.name + "' after concatenation");
    }
  }
  FeatureTable out(std::move(columns), rows);
  std::size_t offset = 0;
  for (const auto& block : blocks) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < block.table.cols(); ++j) {
        if (const auto v = block.table.at(i, j)) out.set(i, offset + j, *v);
      }
    }
    offset += block.table.cols();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Design encoding

DesignEncoder DesignEncoder::fit(const FeatureTable& table) {
  DesignEncoder encoder;
  for (const auto& col : table.columns()) {
    if (col.kind == ColumnKind::quantitative) {
      encoder.outputs_.push_back({col.name, col.name, std::nullopt});
      continue;
    }
    for (std::size_t l = 1; l < col.levels.size(); ++l) {
      encoder.outputs_.push_back({col.name + "=" + col.levels[l], col.name, col.levels[l]});
    }
  }
  return encoder;
}

Matrix DesignEncoder::encode(const FeatureTable& table) const {
  std::vector<std::size_t> source(outputs_.size());
  std::vector<std::string> absent;
  for (std::size_t k = 0; k < outputs_.size(); ++k) {
    const auto j = table.find_column(outputs_[k].source);
    if (!j) {
      if (std::find(absent.begin(), absent.end(), outputs_[k].source) == absent.end()) {
        absent.push_back(outputs_[k].source);
      }
      continue;
    }
    source[k] = *j;
  }
  if (!absent.empty()) {
    std::string list;
    for (const auto& name : absent) list += (list.empty() ? "" : ", ") + name;
    throw Error(ErrorCode::validation, "input is missing feature columns: " + list);
  }

  Matrix x(table.rows(), outputs_.size());
  for (std::size_t k = 0; k < outputs_.size(); ++k) {
    const auto j = source[k];
    const auto& out = outputs_[k];
    for (std::size_t i = 0; i < table.rows(); ++i) {
      if (!table.present(i, j)) {
        throw Error(ErrorCode::validation, "row " + std::to_string(i + 1) + ": column '" + out.source +
                                               "' is missing; impute first");
      }
      if (out.level) {
        x(i, k) = table.label(i, j) == *out.level ? 1.0 : 0.0;
      } else {
        if (table.column(j).kind != ColumnKind::quantitative) {
          throw Error(ErrorCode::validation, "column '" + out.source + "' must be quantitative");
        }
        x(i, k) = *table.at(i, j);
      }
    }
  }
  return x;
}

std::vector<std::string> DesignEncoder::names() const {
  std::vector<std::string> names;
  for (const auto& out : outputs_) names.push_back(out.name);
  return names;
}

nlohmann::json DesignEncoder::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& out : outputs_) {
    nlohmann::json j = {{"name", out.name}, {"source", out.source}};
    j["level"] = out.level ? nlohmann::json(*out.level) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr;
}

DesignEncoder DesignEncoder::from_json(const nlohmann::json& j) {
  DesignEncoder encoder;
  for (const auto& item : j) {
    Output out{item.at("name").get<std::string>(), item.at("source").get<std::string>(), std::nullopt};
    if (!item.at("level").is_null()) out.level = item.at("level").get<std::string>();
    encoder.outputs_.push_back(std::move(out));
  }
  return encoder;
}

Matrix select_columns(const Matrix& x, std::span<const std::size_t> indices) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(indices[k]));
  }
  return out;
}

}  // namespace tkr
