#include "protoassign/eval_report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include "protoassign/util.hpp"

namespace protoassign {

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k != k) throw ValidationError("confusion: adding matrices of different size");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(const std::vector<int>& golds, const std::vector<int>& preds,
                          std::size_t k) {
  if (golds.size() != preds.size()) {
    throw ValidationError("confusion: " + std::to_string(golds.size()) + " golds but " +
                          std::to_string(preds.size()) + " predictions");
  }
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    for (int v : {golds[i], preds[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= k) {
        throw ValidationError("confusion: label " + std::to_string(v) + " outside [0," +
                              std::to_string(k) + ")");
      }
    }
    ++m.at(static_cast<std::size_t>(golds[i]), static_cast<std::size_t>(preds[i]));
  }
  return m;
}

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& m) {
  std::vector<ClassMetrics> out(m.k);
  for (std::size_t c = 0; c < m.k; ++c) {
    std::size_t predicted = 0, gold = 0;
    for (std::size_t j = 0; j < m.k; ++j) {
      predicted += m.at(j, c);
      gold += m.at(c, j);
    }
    const double tp = static_cast<double>(m.at(c, c));
    auto& r = out[c];
    r.support = gold;
    r.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    r.recall = gold ? tp / static_cast<double>(gold) : 0.0;
    const double denom = r.precision + r.recall;
    r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
  }
  return out;
}

Aggregate aggregate(const std::vector<ClassMetrics>& per_class) {
  Aggregate a;
  if (per_class.empty()) return a;
  double total = 0.0;
  for (const auto& c : per_class) {
    a.macro.precision += c.precision;
    a.macro.recall += c.recall;
    a.macro.f1 += c.f1;
    const double w = static_cast<double>(c.support);
    a.weighted.precision += w * c.precision;
    a.weighted.recall += w * c.recall;
    a.weighted.f1 += w * c.f1;
    total += w;
  }
  const double k = static_cast<double>(per_class.size());
  a.macro.precision /= k;
  a.macro.recall /= k;
  a.macro.f1 /= k;
  if (total > 0.0) {
    a.weighted.precision /= total;
    a.weighted.recall /= total;
    a.weighted.f1 /= total;
  } else {
    a.weighted = Averages{};
  }
  return a;
}

MetricsReport make_report(std::string model, std::string fold, ConfusionMatrix matrix) {
  MetricsReport r;
  r.model = std::move(model);
  r.fold = std::move(fold);
  r.per_class = per_class_prf(matrix);
  r.agg = aggregate(r.per_class);
  const auto total = matrix.total();
  r.accuracy = total ? static_cast<double>(matrix.trace()) / static_cast<double>(total) : 0.0;
  r.matrix = std::move(matrix);
  return r;
}

MetricsReport mean_report(const std::string& model, const std::vector<MetricsReport>& folds) {
  if (folds.empty()) throw ValidationError("mean_report: no folds");
  MetricsReport r;
  r.model = model;
  r.fold = "mean";
  const std::size_t k = folds.front().per_class.size();
  r.per_class.assign(k, ClassMetrics{});
  const double n = static_cast<double>(folds.size());
  for (const auto& f : folds) {
    if (f.per_class.size() != k) throw ValidationError("mean_report: class counts differ");
    for (std::size_t c = 0; c < k; ++c) {
      r.per_class[c].precision += f.per_class[c].precision / n;
      r.per_class[c].recall += f.per_class[c].recall / n;
      r.per_class[c].f1 += f.per_class[c].f1 / n;
      r.per_class[c].support += f.per_class[c].support;
    }
    r.agg.macro.precision += f.agg.macro.precision / n;
    r.agg.macro.recall += f.agg.macro.recall / n;
    r.agg.macro.f1 += f.agg.macro.f1 / n;
    r.agg.weighted.precision += f.agg.weighted.precision / n;
    r.agg.weighted.recall += f.agg.weighted.recall / n;
    r.agg.weighted.f1 += f.agg.weighted.f1 / n;
    r.accuracy += f.accuracy / n;
  }
  return r;
}

CvResult cross_validate(const std::string& model, const std::vector<int>& labels,
                        std::size_t n_classes, const FoldPlan& plan,
                        const FoldPredictor& train_and_predict,
                        const std::vector<std::size_t>& only_folds) {
  std::vector<std::size_t> folds = only_folds;
  if (folds.empty()) {
    for (std::size_t f = 0; f < plan.folds.size(); ++f) folds.push_back(f);
  }
  CvResult out;
  ConfusionMatrix pooled(n_classes);
  for (auto f : folds) {
    const auto train = plan.train_indices(f);
    const auto& test = plan.test_indices(f);
    const auto preds = train_and_predict(train, test, f);
    if (preds.size() != test.size()) {
      throw RuntimeError("cross_validate: fold " + std::to_string(f) + " returned " +
                         std::to_string(preds.size()) + " predictions for " +
                         std::to_string(test.size()) + " records");
    }
    std::vector<int> golds;
    for (auto i : test) golds.push_back(labels.at(i));
    auto m = confusion(golds, preds, n_classes);
    pooled += m;
    out.folds.push_back(make_report(model, std::to_string(f), std::move(m)));
  }
  out.mean = mean_report(model, out.folds);
  out.pooled = make_report(model, "pooled", std::move(pooled));
  return out;
}

std::vector<ConfusionPair> confusion_pairs(const ConfusionMatrix& m, std::size_t top_m) {
  std::vector<ConfusionPair> out;
  for (std::size_t g = 0; g < m.k; ++g) {
    std::size_t missed = 0;
    for (std::size_t p = 0; p < m.k; ++p) missed += p == g ? 0 : m.at(g, p);
    for (std::size_t p = 0; p < m.k; ++p) {
      if (p == g || m.at(g, p) == 0) continue;
      out.push_back({g, p, m.at(g, p),
                     static_cast<double>(m.at(g, p)) / static_cast<double>(missed)});
    }
  }
  std::sort(out.begin(), out.end(), [](const ConfusionPair& a, const ConfusionPair& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.share != b.share) return a.share > b.share;
    if (a.gold != b.gold) return a.gold < b.gold;
    return a.pred < b.pred;
  });
  if (top_m != 0 && out.size() > top_m) out.resize(top_m);
  return out;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(cell));
      cell.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      cell += c;
      any = true;
    }
  }
  if (quoted) throw ValidationError("csv: unterminated quote");
  if (any) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_double_cell(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ValidationError("csv: bad number '" + s + "'");
  }
  return v;
}

std::vector<MetricsReport> headline(const std::vector<MetricsReport>& reports) {
  std::vector<MetricsReport> out;
  for (const auto& r : reports) {
    if (r.fold == "pooled") out.push_back(r);
  }
  return out.empty() ? reports : out;
}

}  // namespace

std::string model_table(const std::vector<MetricsReport>& rows) {
  std::ostringstream os;
  os << "| Model | Macro P | Macro R | Macro F1 | Weighted P | Weighted R | Weighted F1 |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.model << " | " << format_metric(r.agg.macro.precision) << " | "
       << format_metric(r.agg.macro.recall) << " | " << format_metric(r.agg.macro.f1) << " | "
       << format_metric(r.agg.weighted.precision) << " | "
       << format_metric(r.agg.weighted.recall) << " | " << format_metric(r.agg.weighted.f1)
       << " |\n";
  }
  return os.str();
}

std::string per_class_table(const std::vector<MetricsReport>& rows,
                            const std::vector<std::string>& class_names) {
  if (rows.empty()) return "";
  std::ostringstream os;
  os << "| # | Protocol group | Exams |";
  for (const auto& r : rows) os << " " << r.model << " |";
  os << "\n|---|---|---|";
  for (std::size_t i = 0; i < rows.size(); ++i) os << "---|";
  os << "\n";
  const std::size_t k = rows.front().per_class.size();
  for (std::size_t c = 0; c < k; ++c) {
    os << "| " << c + 1 << " | " << class_name(class_names, c) << " | "
       << rows.front().per_class[c].support << " |";
    for (const auto& r : rows) os << " " << format_metric(r.per_class.at(c).f1) << " |";
    os << "\n";
  }
  return os.str();
}

std::string confusion_pairs_table(const ConfusionMatrix& m,
                                  const std::vector<std::string>& class_names,
                                  std::size_t top_m) {
  std::ostringstream os;
  os << "| Gold | Predicted | Count | Share of gold's errors |\n|---|---|---|---|\n";
  for (const auto& p : confusion_pairs(m, top_m)) {
    os << "| " << class_name(class_names, p.gold) << " | " << class_name(class_names, p.pred)
       << " | " << p.count << " | " << format_metric(p.share) << " |\n";
  }
  return os.str();
}

std::string report_csv(const ReportBundle& bundle) {
  std::ostringstream os;
  os << "model,fold,class,precision,recall,f1,support\n";
  for (const auto& r : bundle.reports) {
    std::size_t total = 0;
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      total += m.support;
      os << csv_cell(r.model) << ',' << csv_cell(r.fold) << ','
         << csv_cell(class_name(bundle.class_names, c)) << ',' << format_double(m.precision)
         << ',' << format_double(m.recall) << ',' << format_double(m.f1) << ',' << m.support
         << '\n';
    }
    for (const auto& [label, avg] : {std::pair<const char*, const Averages*>{"macro avg", &r.agg.macro},
                                     {"weighted avg", &r.agg.weighted}}) {
      os << csv_cell(r.model) << ',' << csv_cell(r.fold) << ',' << label << ','
         << format_double(avg->precision) << ',' << format_double(avg->recall) << ','
         << format_double(avg->f1) << ',' << total << '\n';
    }
  }
  return os.str();
}

std::vector<CsvRow> parse_report_csv(std::string_view text) {
  auto rows = parse_csv(text);
  if (rows.empty() ||
      rows[0] != std::vector<std::string>{"model", "fold", "class", "precision", "recall", "f1",
                                          "support"}) {
    throw ValidationError("report csv: unexpected header");
  }
  std::vector<CsvRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 7) {
      throw ValidationError("report csv: row " + std::to_string(i) + " has " +
                            std::to_string(r.size()) + " cells");
    }
    CsvRow row;
    row.model = r[0];
    row.fold = r[1];
    row.cls = r[2];
    row.precision = parse_double_cell(r[3]);
    row.recall = parse_double_cell(r[4]);
    row.f1 = parse_double_cell(r[5]);
    row.support = static_cast<std::size_t>(parse_double_cell(r[6]));
    out.push_back(std::move(row));
  }
  return out;
}

void emit_report(const std::string& dir, const ReportBundle& bundle) {
  if (bundle.reports.empty()) throw ValidationError("emit_report: no reports");
  const auto rows = headline(bundle.reports);
  std::ostringstream md;
  md << "# Protocol assignment results\n\n";
  if (bundle.metadata.is_object()) {
    md << "## Run metadata\n\n";
    for (const auto& [key, value] : bundle.metadata.items()) {
      md << "- " << key << ": `" << (value.is_string() ? value.get<std::string>() : value.dump())
         << "`\n";
    }
    md << "\n";
  }
  md << "## Model comparison (" << rows.front().fold << ")\n\n" << model_table(rows) << "\n";
  md << "## Per-class F1\n\n" << per_class_table(rows, bundle.class_names) << "\n";
  for (const auto& [title, body] : bundle.sections) md << "## " << title << "\n\n" << body << "\n";

  write_file(dir + "/report.md", md.str());
  write_file(dir + "/report.csv", report_csv(bundle));
  nlohmann::json meta{{"metadata", bundle.metadata}, {"classes", bundle.class_names}};
  write_file(dir + "/report_meta.json", meta.dump(2) + "\n");
}

}  // namespace protoassign
