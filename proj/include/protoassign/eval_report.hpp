#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoassign/sampling.hpp"

namespace protoassign {

/// K x K counts, rows = gold, columns = predicted.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t n) : k(n), counts(n * n, 0) {}

  std::size_t& at(std::size_t gold, std::size_t pred) { return counts[gold * k + pred]; }
  std::size_t at(std::size_t gold, std::size_t pred) const { return counts[gold * k + pred]; }
  std::size_t total() const;
  std::size_t trace() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const std::vector<int>& golds, const std::vector<int>& preds,
                          std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// 0/0 anywhere yields 0.
std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& m);

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Unweighted and support-weighted means, each metric averaged on its own.
struct Aggregate {
  Averages macro;
  Averages weighted;
};
Aggregate aggregate(const std::vector<ClassMetrics>& per_class);

struct MetricsReport {
  std::string model;
  std::string fold;  // fold index, "mean" or "pooled"
  ConfusionMatrix matrix;  // empty for "mean"
  std::vector<ClassMetrics> per_class;
  Aggregate agg;
  double accuracy = 0.0;
};

MetricsReport make_report(std::string model, std::string fold, ConfusionMatrix matrix);

/// Element-wise mean of per-fold per-class metrics and aggregates; supports
/// are summed.
MetricsReport mean_report(const std::string& model, const std::vector<MetricsReport>& folds);

struct CvResult {
  std::vector<MetricsReport> folds;
  MetricsReport mean;
  MetricsReport pooled;
};

/// `train_and_predict(train_idx, test_idx, fold)` fits on the training
/// indices and returns predictions for the test indices, in order.
using FoldPredictor = std::function<std::vector<int>(
    const std::vector<std::size_t>& train, const std::vector<std::size_t>& test, std::size_t fold)>;

CvResult cross_validate(const std::string& model, const std::vector<int>& labels,
                        std::size_t n_classes, const FoldPlan& plan,
                        const FoldPredictor& train_and_predict,
                        const std::vector<std::size_t>& only_folds = {});

struct ConfusionPair {
  std::size_t gold = 0;
  std::size_t pred = 0;
  std::size_t count = 0;
  double share = 0.0;  // count / (row total - diagonal)
};

/// Nonzero off-diagonal cells by descending count (ties: higher share, then
/// lower gold, lower pred), at most `top_m` of them (0 = all).
std::vector<ConfusionPair> confusion_pairs(const ConfusionMatrix& m, std::size_t top_m);

std::string format_metric(double v);

struct ReportBundle {
  std::vector<std::string> class_names;
  std::vector<MetricsReport> reports;
  nlohmann::json metadata;
  std::vector<std::pair<std::string, std::string>> sections;  // extra markdown
};

/// Model-comparison markdown (macro and weighted P/R/F1 per model).
std::string model_table(const std::vector<MetricsReport>& rows);
/// Per-class F1 matrix (one row per class, one column per model).
std::string per_class_table(const std::vector<MetricsReport>& rows,
                            const std::vector<std::string>& class_names);
std::string confusion_pairs_table(const ConfusionMatrix& m,
                                  const std::vector<std::string>& class_names, std::size_t top_m);

/// CSV with header model,fold,class,precision,recall,f1,support. Each report
/// gives one row per class plus "macro avg" and "weighted avg" rows.
std::string report_csv(const ReportBundle& bundle);

struct CsvRow {
  std::string model, fold, cls;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t support = 0;
};
std::vector<CsvRow> parse_report_csv(std::string_view text);

/// Writes report.md, report.csv and report_meta.json into `dir`. Headline
/// rows are the pooled reports (all reports when none is pooled).
void emit_report(const std::string& dir, const ReportBundle& bundle);

}  // namespace protoassign
