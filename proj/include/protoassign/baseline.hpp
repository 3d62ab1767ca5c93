#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoassign/core_data.hpp"

namespace protoassign {

/// Lowercased words of one free-text field, punctuation-only words dropped.
std::vector<std::string> baseline_words(std::string_view field);

/// Unigrams and bigrams of a record's history and diagnosis. Bigrams join
/// two words with a single space and never span the two fields.
std::map<std::string, std::size_t> ngram_counts(const ExamRecord& record);

struct SparseVector {
  std::vector<std::pair<std::size_t, double>> entries;  // sorted by index
  std::size_t dim = 0;

  double dot(const std::vector<double>& dense) const;
};

/// TF-IDF text block plus structured numerics.
///
/// idf(t) = ln((1 + N) / (1 + df(t))) + 1. The text block is L2-normalized
/// when nonzero. Structured block: age min-max scaled on the training range
/// (clipped to [0,1]), one-hot sex, one-hot exam code; values unseen at fit
/// time give all-zero one-hots.
class TfidfModel {
 public:
  static TfidfModel fit(const std::vector<ExamRecord>& train);

  std::size_t n_docs() const { return n_docs_; }
  std::size_t n_terms() const { return terms_.size(); }
  std::size_t dim() const { return terms_.size() + 1 + sexes_.size() + codes_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  std::size_t df(const std::string& term) const;
  double idf(const std::string& term) const;
  const std::vector<std::size_t>& df_table() const { return df_; }

  SparseVector transform(const ExamRecord& record) const;
  std::vector<SparseVector> transform(const std::vector<ExamRecord>& records) const;

  nlohmann::json to_json() const;
  static TfidfModel from_json(const nlohmann::json& j);

 private:
  std::size_t n_docs_ = 0;
  std::vector<std::string> terms_;  // sorted
  std::map<std::string, std::size_t, std::less<>> term_index_;
  std::vector<std::size_t> df_;
  std::vector<double> idf_;
  int age_min_ = 0;
  int age_max_ = 0;
  std::vector<std::string> sexes_;  // sorted
  std::vector<std::string> codes_;  // sorted

  void build_index();
};

/// K rows of weights plus one bias per class; decision = W x + b.
struct LinearModel {
  std::size_t n_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // row-major [n_classes, dim]
  std::vector<double> bias;

  LinearModel() = default;
  LinearModel(std::size_t k, std::size_t d);

  std::vector<double> decision(const SparseVector& x) const;
  /// Argmax of the decision values, ties toward the lower class id.
  int predict(const SparseVector& x) const;
  std::vector<int> predict(const std::vector<SparseVector>& xs) const;

  nlohmann::json to_json() const;
  static LinearModel from_json(const nlohmann::json& j);
};

struct SvmConfig {
  double c = 1.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
};

/// One-vs-rest linear SVMs: per class, minimizes
///   lambda/2 |w|^2 + mean hinge(y (w.x + b)),  lambda = 1 / (C n),
/// by SGD with step 1 / (lambda (t + n)) on w and 0.1 / (1 + epoch) on the
/// unregularized bias. Sample order is shuffled per epoch from `seed`.
LinearModel train_linear_svm(const std::vector<SparseVector>& x, const std::vector<int>& y,
                             std::size_t n_classes, const SvmConfig& config);

struct SoftmaxConfig {
  double l2 = 1e-4;
  std::size_t epochs = 300;
  double learning_rate = 0.1;
};

/// mean_i CE(softmax(W x_i + b), y_i) + l2/2 |W|^2 (bias not penalized).
double softmax_objective(const LinearModel& model, const std::vector<SparseVector>& x,
                         const std::vector<int>& y, double l2);
/// Gradient of softmax_objective, laid out like the model (weights, bias).
LinearModel softmax_gradient(const LinearModel& model, const std::vector<SparseVector>& x,
                             const std::vector<int>& y, double l2);

/// Multinomial logistic regression fitted by full-batch Adam.
LinearModel train_softmax_reg(const std::vector<SparseVector>& x, const std::vector<int>& y,
                              std::size_t n_classes, const SoftmaxConfig& config);
std::vector<double> predict_proba(const LinearModel& model, const SparseVector& x);

enum class BaselineKind { Svm, Softmax };
std::string_view baseline_kind_id(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view id);

/// Fitted featurizer plus classifier, the unit persisted by train-baseline.
struct BaselineModel {
  BaselineKind kind = BaselineKind::Svm;
  TfidfModel tfidf;
  LinearModel linear;

  std::vector<int> predict(const std::vector<ExamRecord>& records) const;

  std::string to_json() const;
  static BaselineModel from_json(std::string_view text);
};

struct BaselineConfig {
  SvmConfig svm;
  SoftmaxConfig softmax;
};

/// Fits the featurizer on `train` only, then the classifier. Records must be
/// labeled; at least two classes must be present.
BaselineModel fit_baseline(BaselineKind kind, const std::vector<ExamRecord>& train,
                           std::size_t n_classes, const BaselineConfig& config);

}  // namespace protoassign
