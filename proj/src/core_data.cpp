#include "protoassign/core_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

namespace {

const std::vector<std::string> kRequiredColumns = {"exam_code", "exam_name", "sex", "age",
                                                   "history",   "diagnosis"};
constexpr std::string_view kLabelColumn = "protocol_group";

std::string row_error(std::size_t row, std::string_view field, std::string_view what) {
  return "row " + std::to_string(row) + ": field '" + std::string(field) + "': " +
         std::string(what);
}

int parse_age(std::string_view text, std::size_t row) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError(row_error(row, "age", "not an integer: '" + std::string(text) + "'"));
  }
  if (value < 0) throw ValidationError(row_error(row, "age", "negative age"));
  return value;
}

std::string tsv_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string tsv_unescape(std::string_view s, std::size_t row, std::string_view field) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 1 == s.size()) throw ValidationError(row_error(row, field, "dangling escape"));
    switch (s[++i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case '\\': out.push_back('\\'); break;
      default: throw ValidationError(row_error(row, field, "unknown escape"));
    }
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view content) {
  std::vector<std::string> lines = split(content, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  return lines;
}

std::size_t count_code_points(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

FieldStats field_stats(const std::vector<std::size_t>& counts) {
  FieldStats s;
  s.min = *std::min_element(counts.begin(), counts.end());
  s.max = *std::max_element(counts.begin(), counts.end());
  double sum = 0.0;
  std::size_t empty = 0;
  for (auto c : counts) {
    sum += static_cast<double>(c);
    if (c == 0) ++empty;
  }
  const double n = static_cast<double>(counts.size());
  s.mean = sum / n;
  double ss = 0.0;
  for (auto c : counts) ss += (static_cast<double>(c) - s.mean) * (static_cast<double>(c) - s.mean);
  s.sd = std::sqrt(ss / n);
  s.median = median_of(std::vector<double>(counts.begin(), counts.end()));
  s.empty_fraction = static_cast<double>(empty) / n;
  return s;
}

}  // namespace

void validate_record(const ExamRecord& record) {
  if (record.age < 0) throw ValidationError("exam record: age must be >= 0");
  if (record.exam_code.empty()) throw ValidationError("exam record: exam_code must be non-empty");
}

// ---------------------------------------------------------------------------
// Labels

ProtocolLabelSet::ProtocolLabelSet(std::vector<LabelGroup> groups, std::size_t exclusion_threshold)
    : groups_(std::move(groups)), exclusion_threshold_(exclusion_threshold) {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].id != static_cast<int>(i)) {
      throw ValidationError("label set: group ids must be dense 0..K-1 in order");
    }
    if (groups_[i].name.empty()) throw ValidationError("label set: empty group name");
  }
}

std::optional<int> ProtocolLabelSet::id_of(std::string_view name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return g.id;
  }
  return std::nullopt;
}

const std::string& ProtocolLabelSet::name_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= groups_.size()) {
    throw ValidationError("label set: id out of range: " + std::to_string(id));
  }
  return groups_[static_cast<std::size_t>(id)].name;
}

std::vector<std::string> ProtocolLabelSet::names() const {
  std::vector<std::string> out;
  out.reserve(groups_.size());
  for (const auto& g : groups_) out.push_back(g.name);
  return out;
}

std::string ProtocolLabelSet::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "protoassign-labels";
  j["version"] = 1;
  j["exclusion_threshold"] = exclusion_threshold_;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : groups_) {
    j["groups"].push_back({{"id", g.id}, {"name", g.name}, {"support", g.support}});
  }
  return j.dump(2) + "\n";
}

ProtocolLabelSet ProtocolLabelSet::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "protoassign-labels" || j.at("version") != 1) {
      throw ValidationError("label set: unsupported format/version");
    }
    std::vector<LabelGroup> groups;
    for (const auto& g : j.at("groups")) {
      groups.push_back({g.at("id").get<int>(), g.at("name").get<std::string>(),
                        g.at("support").get<std::size_t>()});
    }
    return ProtocolLabelSet(std::move(groups), j.at("exclusion_threshold").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("label set: ") + e.what());
  }
}

ConsolidatedData consolidate_labels(std::vector<ExamRecord> records, std::size_t threshold) {
  std::map<std::string, std::size_t> support;
  for (const auto& r : records) {
    if (r.protocol_group) ++support[*r.protocol_group];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [name, count] : support) {
    if (count >= threshold) kept.emplace_back(name, count);
  }
  if (kept.empty()) throw ValidationError("empty label set");
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<LabelGroup> groups;
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    groups.push_back({static_cast<int>(i), kept[i].first, kept[i].second});
    ids[kept[i].first] = static_cast<int>(i);
  }

  ConsolidatedData out;
  out.records.reserve(records.size());
  for (auto& r : records) {
    if (!r.protocol_group) {
      r.label.reset();
      out.records.push_back(std::move(r));
      continue;
    }
    auto it = ids.find(*r.protocol_group);
    if (it == ids.end()) continue;
    r.label = it->second;
    out.records.push_back(std::move(r));
  }
  out.label_set = ProtocolLabelSet(std::move(groups), threshold);
  return out;
}

std::vector<ExamRecord> apply_label_set(std::vector<ExamRecord> records,
                                        const ProtocolLabelSet& label_set) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    if (!r.protocol_group) {
      r.label.reset();
      continue;
    }
    auto id = label_set.id_of(*r.protocol_group);
    if (!id) {
      throw ValidationError("record " + std::to_string(i) + ": protocol group '" +
                            *r.protocol_group + "' is not in the label set");
    }
    r.label = *id;
  }
  return records;
}

// ---------------------------------------------------------------------------
// Template

std::string template_prefix(const ExamRecord& record) {
  return "Exam is " + record.exam_code + ". Sex is " + record.sex + ". Age at Exam " +
         std::to_string(record.age) + ". ";
}

TemplatedSequence render_template(const ExamRecord& record, std::size_t source_id) {
  return {template_prefix(record) + "History: " + record.history + ". Diagnosis: " +
              record.diagnosis,
          source_id};
}

// ---------------------------------------------------------------------------
// Statistics

std::size_t word_count(std::string_view text) { return split_whitespace(text).size(); }

CorpusStats compute_stats(const std::vector<ExamRecord>& records) {
  if (records.empty()) throw ValidationError("compute_stats: empty record list");
  std::vector<std::size_t> hist, diag;
  std::vector<double> chars;
  hist.reserve(records.size());
  diag.reserve(records.size());
  chars.reserve(records.size());
  double char_sum = 0.0;
  for (const auto& r : records) {
    hist.push_back(word_count(r.history));
    diag.push_back(word_count(r.diagnosis));
    const double c = static_cast<double>(count_code_points(render_template(r).text));
    chars.push_back(c);
    char_sum += c;
  }
  CorpusStats s;
  s.n_records = records.size();
  s.history = field_stats(hist);
  s.diagnosis = field_stats(diag);
  s.template_chars_mean = char_sum / static_cast<double>(records.size());
  s.template_chars_median = median_of(std::move(chars));
  return s;
}

// ---------------------------------------------------------------------------
// Dataset I/O

DatasetFormat parse_dataset_format(std::string_view id) {
  if (id == "tsv") return DatasetFormat::Tsv;
  if (id == "jsonl") return DatasetFormat::Jsonl;
  throw ValidationError("unknown dataset format id: '" + std::string(id) + "'");
}

std::string_view dataset_format_id(DatasetFormat format) {
  return format == DatasetFormat::Tsv ? "tsv" : "jsonl";
}

DatasetFormat dataset_format_from_path(std::string_view path) {
  auto ends_with = [&](std::string_view suffix) {
    return path.size() >= suffix.size() && path.substr(path.size() - suffix.size()) == suffix;
  };
  if (ends_with(".tsv")) return DatasetFormat::Tsv;
  if (ends_with(".jsonl") || ends_with(".json")) return DatasetFormat::Jsonl;
  throw ValidationError("cannot infer dataset format from path: " + std::string(path));
}

namespace {

struct ColumnLayout {
  std::map<std::string, std::size_t> index;  // column name -> position
  std::vector<std::string> extras;           // extras present, in allowed order
};

ColumnLayout check_columns(const std::vector<std::string>& header,
                           const std::vector<std::string>& allowed_extras) {
  ColumnLayout layout;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& name = header[i];
    const bool known =
        std::find(kRequiredColumns.begin(), kRequiredColumns.end(), name) !=
            kRequiredColumns.end() ||
        name == kLabelColumn ||
        std::find(allowed_extras.begin(), allowed_extras.end(), name) != allowed_extras.end();
    if (!known) throw ValidationError("unknown column: '" + name + "'");
    if (!layout.index.emplace(name, i).second) {
      throw ValidationError("duplicate column: '" + name + "'");
    }
  }
  for (const auto& req : kRequiredColumns) {
    if (!layout.index.count(req)) throw ValidationError("missing required column: '" + req + "'");
  }
  for (const auto& e : allowed_extras) {
    if (layout.index.count(e)) layout.extras.push_back(e);
  }
  return layout;
}

DatasetTable parse_tsv(std::string_view content, const std::vector<std::string>& allowed_extras) {
  auto lines = split_lines(content);
  if (lines.empty()) throw ValidationError("dataset: missing header row");
  const auto header = split(lines[0], '\t');
  const auto layout = check_columns(header, allowed_extras);

  DatasetTable table;
  table.extra_columns = layout.extras;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li;
    const auto cells = split(lines[li], '\t');
    if (cells.size() != header.size()) {
      throw ValidationError("row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    }
    auto cell = [&](const std::string& name) {
      return tsv_unescape(cells[layout.index.at(name)], row, name);
    };
    ExamRecord r;
    r.exam_code = cell("exam_code");
    if (r.exam_code.empty()) throw ValidationError(row_error(row, "exam_code", "empty"));
    r.exam_name = cell("exam_name");
    r.sex = cell("sex");
    r.age = parse_age(cell("age"), row);
    r.history = cell("history");
    r.diagnosis = cell("diagnosis");
    if (layout.index.count(std::string(kLabelColumn))) {
      auto g = cell(std::string(kLabelColumn));
      if (!g.empty()) r.protocol_group = std::move(g);
    }
    std::vector<std::string> extra;
    for (const auto& e : layout.extras) extra.push_back(cell(e));
    table.records.push_back(std::move(r));
    table.extras.push_back(std::move(extra));
  }
  return table;
}

std::string json_string_field(const nlohmann::json& obj, const std::string& name, std::size_t row) {
  const auto& v = obj.at(name);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError(row_error(row, name, "expected a string"));
}

DatasetTable parse_jsonl(std::string_view content, const std::vector<std::string>& allowed_extras) {
  DatasetTable table;
  table.extra_columns.clear();
  bool first = true;
  std::vector<std::string> first_extras;
  const auto lines = split_lines(content);
  std::size_t row = 0;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    ++row;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("row " + std::to_string(row) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object()) throw ValidationError("row " + std::to_string(row) + ": not an object");
    std::vector<std::string> keys;
    for (auto it = obj.begin(); it != obj.end(); ++it) keys.push_back(it.key());
    ColumnLayout layout;
    try {
      layout = check_columns(keys, allowed_extras);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(row) + ": " + e.what());
    }
    if (first) {
      first_extras = layout.extras;
      table.extra_columns = layout.extras;
      first = false;
    } else if (layout.extras != first_extras) {
      throw ValidationError("row " + std::to_string(row) + ": inconsistent extra columns");
    }
    ExamRecord r;
    try {
      r.exam_code = json_string_field(obj, "exam_code", row);
      if (r.exam_code.empty()) throw ValidationError(row_error(row, "exam_code", "empty"));
      r.exam_name = json_string_field(obj, "exam_name", row);
      r.sex = json_string_field(obj, "sex", row);
      const auto& age = obj.at("age");
      if (age.is_number_integer()) {
        const long long a = age.get<long long>();
        if (a < 0) throw ValidationError(row_error(row, "age", "negative age"));
        r.age = static_cast<int>(a);
      } else if (age.is_string()) {
        r.age = parse_age(age.get<std::string>(), row);
      } else {
        throw ValidationError(row_error(row, "age", "not an integer"));
      }
      r.history = json_string_field(obj, "history", row);
      r.diagnosis = json_string_field(obj, "diagnosis", row);
      if (obj.contains(std::string(kLabelColumn)) && !obj.at(std::string(kLabelColumn)).is_null()) {
        r.protocol_group = json_string_field(obj, std::string(kLabelColumn), row);
      }
      std::vector<std::string> extra;
      for (const auto& e : layout.extras) {
        const auto& v = obj.at(e);
        extra.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
      table.extras.push_back(std::move(extra));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("row " + std::to_string(row) + ": " + e.what());
    }
    table.records.push_back(std::move(r));
  }
  return table;
}

}  // namespace

DatasetTable parse_dataset(std::string_view content, DatasetFormat format,
                           const std::vector<std::string>& allowed_extras) {
  return format == DatasetFormat::Tsv ? parse_tsv(content, allowed_extras)
                                      : parse_jsonl(content, allowed_extras);
}

std::string serialize_dataset(const DatasetTable& table, DatasetFormat format) {
  if (table.extras.size() != table.records.size() && !table.extra_columns.empty()) {
    throw ValidationError("dataset: extras not aligned with records");
  }
  bool labeled = false;
  for (const auto& r : table.records) labeled = labeled || r.protocol_group.has_value();

  std::string out;
  if (format == DatasetFormat::Tsv) {
    std::vector<std::string> header = kRequiredColumns;
    if (labeled) header.emplace_back(kLabelColumn);
    for (const auto& e : table.extra_columns) header.push_back(e);
    out += join(header, "\t");
    out += '\n';
    for (std::size_t i = 0; i < table.records.size(); ++i) {
      const auto& r = table.records[i];
      std::vector<std::string> cells = {tsv_escape(r.exam_code), tsv_escape(r.exam_name),
                                        tsv_escape(r.sex),       std::to_string(r.age),
                                        tsv_escape(r.history),   tsv_escape(r.diagnosis)};
      if (labeled) cells.push_back(tsv_escape(r.protocol_group.value_or("")));
      for (std::size_t e = 0; e < table.extra_columns.size(); ++e) {
        cells.push_back(tsv_escape(table.extras[i][e]));
      }
      out += join(cells, "\t");
      out += '\n';
    }
    return out;
  }
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    nlohmann::ordered_json j;
    j["exam_code"] = r.exam_code;
    j["exam_name"] = r.exam_name;
    j["sex"] = r.sex;
    j["age"] = r.age;
    j["history"] = r.history;
    j["diagnosis"] = r.diagnosis;
    if (labeled) {
      j["protocol_group"] = r.protocol_group ? nlohmann::ordered_json(*r.protocol_group)
                                             : nlohmann::ordered_json(nullptr);
    }
    for (std::size_t e = 0; e < table.extra_columns.size(); ++e) {
      j[table.extra_columns[e]] = table.extras[i][e];
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetTable load_dataset_table(const std::string& path, DatasetFormat format,
                                const std::vector<std::string>& allowed_extras) {
  return parse_dataset(read_file(path), format, allowed_extras);
}

void save_dataset_table(const std::string& path, const DatasetTable& table,
                        DatasetFormat format) {
  write_file(path, serialize_dataset(table, format));
}

std::vector<ExamRecord> load_dataset(const std::string& path, DatasetFormat format) {
  return load_dataset_table(path, format, {}).records;
}

void save_dataset(const std::string& path, const std::vector<ExamRecord>& records,
                  DatasetFormat format) {
  DatasetTable table;
  table.records = records;
  for (auto& r : table.records) r.label.reset();
  save_dataset_table(path, table, format);
}

}  // namespace protoassign
