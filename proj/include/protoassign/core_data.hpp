#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace protoassign {

/// One CT examination order. `protocol_group` is the raw group name as
/// ingested; `label` is its dense id under the active ProtocolLabelSet.
struct ExamRecord {
  std::string exam_code;
  std::string exam_name;
  std::string sex;  // verbatim source code, e.g. "2"
  int age = 0;
  std::string history;
  std::string diagnosis;
  std::optional<std::string> protocol_group;
  std::optional<int> label;

  bool operator==(const ExamRecord&) const = default;
};

/// Throws ValidationError when age < 0 or exam_code is empty.
void validate_record(const ExamRecord& record);

struct LabelGroup {
  int id = 0;
  std::string name;
  std::size_t support = 0;

  bool operator==(const LabelGroup&) const = default;
};

/// Dense protocol-group ids ordered by descending support.
class ProtocolLabelSet {
 public:
  ProtocolLabelSet() = default;
  ProtocolLabelSet(std::vector<LabelGroup> groups, std::size_t exclusion_threshold);

  std::size_t size() const { return groups_.size(); }
  const std::vector<LabelGroup>& groups() const { return groups_; }
  std::size_t exclusion_threshold() const { return exclusion_threshold_; }
  std::optional<int> id_of(std::string_view name) const;
  const std::string& name_of(int id) const;
  std::vector<std::string> names() const;

  std::string to_json() const;
  static ProtocolLabelSet from_json(std::string_view text);

  bool operator==(const ProtocolLabelSet&) const = default;

 private:
  std::vector<LabelGroup> groups_;
  std::size_t exclusion_threshold_ = 0;
};

struct ConsolidatedData {
  std::vector<ExamRecord> records;
  ProtocolLabelSet label_set;
};

/// Drops groups with support < threshold (and their records), then assigns
/// ids 0..K-1 by descending support; ties go to the lexicographically smaller
/// name. Unlabeled records pass through untouched.
ConsolidatedData consolidate_labels(std::vector<ExamRecord> records, std::size_t threshold);

/// Sets `label` from `protocol_group` under an existing label set. Records
/// whose group is not in the set raise ValidationError.
std::vector<ExamRecord> apply_label_set(std::vector<ExamRecord> records,
                                        const ProtocolLabelSet& label_set);

struct TemplatedSequence {
  std::string text;
  std::size_t source_id = 0;
};

/// "Exam is {code}. Sex is {sex}. Age at Exam {age}. History: {history}.
/// Diagnosis: {diagnosis}". Empty fields render as empty strings.
TemplatedSequence render_template(const ExamRecord& record, std::size_t source_id = 0);

/// The part of the template before the free-text fields; augmentation never
/// touches it.
std::string template_prefix(const ExamRecord& record);

struct FieldStats {
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;  // population standard deviation
  double empty_fraction = 0.0;
};

struct CorpusStats {
  std::size_t n_records = 0;
  FieldStats history;
  FieldStats diagnosis;
  double template_chars_mean = 0.0;
  double template_chars_median = 0.0;
};

std::size_t word_count(std::string_view text);
CorpusStats compute_stats(const std::vector<ExamRecord>& records);

// ---------------------------------------------------------------------------
// Dataset files.
//
// tsv:   UTF-8, tab-separated, header row required. Columns exam_code,
//        exam_name, sex, age, history, diagnosis are required;
//        protocol_group is optional (empty cell = unlabeled). Backslash
//        escapes \t \n \r \\ inside cells.
// jsonl: one JSON object per line with the same keys; age is an integer,
//        sex a string (integers accepted on input), protocol_group a string
//        or null.
// Any other column is rejected unless the caller lists it as an extra.
// ---------------------------------------------------------------------------

enum class DatasetFormat { Tsv, Jsonl };

DatasetFormat parse_dataset_format(std::string_view id);
std::string_view dataset_format_id(DatasetFormat format);
/// "tsv" for *.tsv, "jsonl" for *.jsonl / *.json, otherwise throws.
DatasetFormat dataset_format_from_path(std::string_view path);

/// Records plus the values of caller-declared extra columns (row-aligned).
struct DatasetTable {
  std::vector<ExamRecord> records;
  std::vector<std::string> extra_columns;
  std::vector<std::vector<std::string>> extras;
};

std::vector<ExamRecord> load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const std::string& path, const std::vector<ExamRecord>& records,
                  DatasetFormat format);

DatasetTable load_dataset_table(const std::string& path, DatasetFormat format,
                                const std::vector<std::string>& allowed_extras);
void save_dataset_table(const std::string& path, const DatasetTable& table,
                        DatasetFormat format);

std::string serialize_dataset(const DatasetTable& table, DatasetFormat format);
DatasetTable parse_dataset(std::string_view content, DatasetFormat format,
                           const std::vector<std::string>& allowed_extras);

}  // namespace protoassign
