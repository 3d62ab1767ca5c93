#include "protoassign/baseline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "protoassign/text.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

using nlohmann::json;

namespace {

bool all_punct(std::string_view w) {
  return std::all_of(w.begin(), w.end(),
                     [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; });
}

void check_labels(const std::vector<SparseVector>& x, const std::vector<int>& y,
                  std::size_t n_classes, const char* who) {
  if (x.size() != y.size()) {
    throw ValidationError(std::string(who) + ": " + std::to_string(x.size()) + " rows but " +
                          std::to_string(y.size()) + " labels");
  }
  if (x.empty()) throw ValidationError(std::string(who) + ": empty training set");
  std::set<int> seen;
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw ValidationError(std::string(who) + ": label " + std::to_string(label) +
                            " outside [0," + std::to_string(n_classes) + ")");
    }
    seen.insert(label);
  }
  if (seen.size() < 2) throw ValidationError(std::string(who) + ": need at least 2 classes");
  for (const auto& v : x) {
    if (v.dim != x.front().dim) throw ValidationError(std::string(who) + ": ragged feature rows");
  }
}

std::vector<double> softmax_of(std::vector<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (auto& v : z) v /= s;
  return z;
}

}  // namespace

std::vector<std::string> baseline_words(std::string_view field) {
  std::vector<std::string> out;
  for (auto& w : pre_split(field)) {
    if (all_punct(w)) continue;
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(w));
  }
  return out;
}

std::map<std::string, std::size_t> ngram_counts(const ExamRecord& record) {
  std::map<std::string, std::size_t> counts;
  for (const auto* field : {&record.history, &record.diagnosis}) {
    const auto words = baseline_words(*field);
    for (std::size_t i = 0; i < words.size(); ++i) {
      ++counts[words[i]];
      if (i + 1 < words.size()) ++counts[words[i] + " " + words[i + 1]];
    }
  }
  return counts;
}

double SparseVector::dot(const std::vector<double>& dense) const {
  double s = 0.0;
  for (const auto& [i, v] : entries) s += v * dense[i];
  return s;
}

// ---------------------------------------------------------------------------
// TF-IDF

TfidfModel TfidfModel::fit(const std::vector<ExamRecord>& train) {
  if (train.empty()) throw ValidationError("fit_tfidf: empty corpus");
  TfidfModel m;
  m.n_docs_ = train.size();
  std::map<std::string, std::size_t> df;
  std::set<std::string> sexes, codes;
  m.age_min_ = train.front().age;
  m.age_max_ = train.front().age;
  for (const auto& r : train) {
    for (const auto& [term, count] : ngram_counts(r)) ++df[term];
    sexes.insert(r.sex);
    codes.insert(r.exam_code);
    m.age_min_ = std::min(m.age_min_, r.age);
    m.age_max_ = std::max(m.age_max_, r.age);
  }
  for (const auto& [term, count] : df) {
    m.terms_.push_back(term);
    m.df_.push_back(count);
  }
  m.sexes_.assign(sexes.begin(), sexes.end());
  m.codes_.assign(codes.begin(), codes.end());
  m.build_index();
  return m;
}

void TfidfModel::build_index() {
  term_index_.clear();
  idf_.clear();
  const double n = static_cast<double>(n_docs_);
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    term_index_.emplace(terms_[i], i);
    idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df_[i]))) + 1.0);
  }
}

std::size_t TfidfModel::df(const std::string& term) const {
  auto it = term_index_.find(term);
  return it == term_index_.end() ? 0 : df_[it->second];
}

double TfidfModel::idf(const std::string& term) const {
  auto it = term_index_.find(term);
  if (it == term_index_.end()) throw ValidationError("tfidf: unknown term '" + term + "'");
  return idf_[it->second];
}

SparseVector TfidfModel::transform(const ExamRecord& record) const {
  SparseVector out;
  out.dim = dim();
  double norm2 = 0.0;
  for (const auto& [term, count] : ngram_counts(record)) {
    auto it = term_index_.find(term);
    if (it == term_index_.end()) continue;
    const double w = static_cast<double>(count) * idf_[it->second];
    out.entries.emplace_back(it->second, w);
    norm2 += w * w;
  }
  std::sort(out.entries.begin(), out.entries.end());
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& e : out.entries) e.second *= inv;
  }
  std::size_t base = terms_.size();
  double age = 0.0;
  if (age_max_ > age_min_) {
    age = static_cast<double>(record.age - age_min_) / static_cast<double>(age_max_ - age_min_);
    age = std::clamp(age, 0.0, 1.0);
  }
  out.entries.emplace_back(base, age);
  base += 1;
  auto sex = std::lower_bound(sexes_.begin(), sexes_.end(), record.sex);
  if (sex != sexes_.end() && *sex == record.sex) {
    out.entries.emplace_back(base + static_cast<std::size_t>(sex - sexes_.begin()), 1.0);
  }
  base += sexes_.size();
  auto code = std::lower_bound(codes_.begin(), codes_.end(), record.exam_code);
  if (code != codes_.end() && *code == record.exam_code) {
    out.entries.emplace_back(base + static_cast<std::size_t>(code - codes_.begin()), 1.0);
  }
  return out;
}

std::vector<SparseVector> TfidfModel::transform(const std::vector<ExamRecord>& records) const {
  std::vector<SparseVector> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(transform(r));
  return out;
}

json TfidfModel::to_json() const {
  return json{{"n_docs", n_docs_}, {"terms", terms_},     {"df", df_},
              {"age_min", age_min_}, {"age_max", age_max_}, {"sexes", sexes_},
              {"exam_codes", codes_}};
}

TfidfModel TfidfModel::from_json(const json& j) {
  TfidfModel m;
  try {
    m.n_docs_ = j.at("n_docs").get<std::size_t>();
    m.terms_ = j.at("terms").get<std::vector<std::string>>();
    m.df_ = j.at("df").get<std::vector<std::size_t>>();
    m.age_min_ = j.at("age_min").get<int>();
    m.age_max_ = j.at("age_max").get<int>();
    m.sexes_ = j.at("sexes").get<std::vector<std::string>>();
    m.codes_ = j.at("exam_codes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("tfidf: bad model: ") + e.what());
  }
  if (m.df_.size() != m.terms_.size()) throw ValidationError("tfidf: df/terms length mismatch");
  if (!std::is_sorted(m.terms_.begin(), m.terms_.end())) {
    throw ValidationError("tfidf: terms not sorted");
  }
  m.build_index();
  return m;
}

// ---------------------------------------------------------------------------
// Linear models

LinearModel::LinearModel(std::size_t k, std::size_t d)
    : n_classes(k), dim(d), weights(k * d, 0.0), bias(k, 0.0) {}

std::vector<double> LinearModel::decision(const SparseVector& x) const {
  if (x.dim != dim) {
    throw ValidationError("linear model: feature dim " + std::to_string(x.dim) + ", expected " +
                          std::to_string(dim));
  }
  std::vector<double> out(bias);
  for (std::size_t k = 0; k < n_classes; ++k) {
    const double* w = weights.data() + k * dim;
    for (const auto& [i, v] : x.entries) out[k] += w[i] * v;
  }
  return out;
}

int LinearModel::predict(const SparseVector& x) const {
  const auto d = decision(x);
  std::size_t best = 0;
  for (std::size_t k = 1; k < d.size(); ++k) {
    if (d[k] > d[best]) best = k;
  }
  return static_cast<int>(best);
}

std::vector<int> LinearModel::predict(const std::vector<SparseVector>& xs) const {
  std::vector<int> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(predict(x));
  return out;
}

json LinearModel::to_json() const {
  return json{{"n_classes", n_classes}, {"dim", dim}, {"weights", weights}, {"bias", bias}};
}

LinearModel LinearModel::from_json(const json& j) {
  LinearModel m;
  try {
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("linear model: ") + e.what());
  }
  if (m.weights.size() != m.n_classes * m.dim || m.bias.size() != m.n_classes) {
    throw ValidationError("linear model: weight sizes do not match n_classes x dim");
  }
  return m;
}

LinearModel train_linear_svm(const std::vector<SparseVector>& x, const std::vector<int>& y,
                             std::size_t n_classes, const SvmConfig& config) {
  check_labels(x, y, n_classes, "train_linear_svm");
  if (!(config.c > 0.0)) throw ValidationError("train_linear_svm: C must be > 0");
  const std::size_t n = x.size();
  const std::size_t d = x.front().dim;
  LinearModel model(n_classes, d);
  const double lambda = 1.0 / (config.c * static_cast<double>(n));
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<double> v(d, 0.0);
    double a = 1.0;  // w = a * v
    double b = 0.0;
    std::size_t t = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t e = 0; e < config.epochs; ++e) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(derive_seed(config.seed, "svm_epoch"), e));
      rng.shuffle(order);
      const double bias_step = 0.1 / (1.0 + static_cast<double>(e));
      for (auto i : order) {
        ++t;
        const double target = y[i] == static_cast<int>(k) ? 1.0 : -1.0;
        const double eta = 1.0 / (lambda * static_cast<double>(t + n));
        const double margin = target * (a * x[i].dot(v) + b);
        a *= 1.0 - eta * lambda;
        if (margin < 1.0) {
          const double step = eta * target / a;
          for (const auto& [j, val] : x[i].entries) v[j] += step * val;
          b += bias_step * target;
        }
        if (a < 1e-9) {
          for (auto& vj : v) vj *= a;
          a = 1.0;
        }
      }
    }
    for (std::size_t j = 0; j < d; ++j) model.weights[k * d + j] = a * v[j];
    model.bias[k] = b;
  }
  return model;
}

double softmax_objective(const LinearModel& model, const std::vector<SparseVector>& x,
                         const std::vector<int>& y, double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto z = model.decision(x[i]);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    loss += mx + std::log(s) - z[static_cast<std::size_t>(y[i])];
  }
  loss /= static_cast<double>(x.size());
  double reg = 0.0;
  for (double w : model.weights) reg += w * w;
  return loss + 0.5 * l2 * reg;
}

LinearModel softmax_gradient(const LinearModel& model, const std::vector<SparseVector>& x,
                             const std::vector<int>& y, double l2) {
  LinearModel g(model.n_classes, model.dim);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto p = softmax_of(model.decision(x[i]));
    p[static_cast<std::size_t>(y[i])] -= 1.0;
    for (std::size_t k = 0; k < model.n_classes; ++k) {
      const double r = p[k] * inv_n;
      g.bias[k] += r;
      double* gw = g.weights.data() + k * model.dim;
      for (const auto& [j, v] : x[i].entries) gw[j] += r * v;
    }
  }
  for (std::size_t j = 0; j < g.weights.size(); ++j) g.weights[j] += l2 * model.weights[j];
  return g;
}

LinearModel train_softmax_reg(const std::vector<SparseVector>& x, const std::vector<int>& y,
                              std::size_t n_classes, const SoftmaxConfig& config) {
  check_labels(x, y, n_classes, "train_softmax_reg");
  if (config.l2 < 0.0) throw ValidationError("train_softmax_reg: l2 must be >= 0");
  LinearModel model(n_classes, x.front().dim);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> mw(model.weights.size()), vw(model.weights.size());
  std::vector<double> mb(n_classes), vb(n_classes);
  auto adam = [&](double& p, double g, double& m, double& v, double c1, double c2) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    p -= config.learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
  };
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    const auto g = softmax_gradient(model, x, y, config.l2);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(e));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(e));
    for (std::size_t j = 0; j < model.weights.size(); ++j) {
      adam(model.weights[j], g.weights[j], mw[j], vw[j], c1, c2);
    }
    for (std::size_t k = 0; k < n_classes; ++k) adam(model.bias[k], g.bias[k], mb[k], vb[k], c1, c2);
  }
  return model;
}

std::vector<double> predict_proba(const LinearModel& model, const SparseVector& x) {
  return softmax_of(model.decision(x));
}

// ---------------------------------------------------------------------------

std::string_view baseline_kind_id(BaselineKind kind) {
  return kind == BaselineKind::Svm ? "svm" : "softmax";
}

BaselineKind parse_baseline_kind(std::string_view id) {
  if (id == "svm") return BaselineKind::Svm;
  if (id == "softmax") return BaselineKind::Softmax;
  throw ValidationError("unknown baseline '" + std::string(id) + "' (expected svm or softmax)");
}

std::vector<int> BaselineModel::predict(const std::vector<ExamRecord>& records) const {
  return linear.predict(tfidf.transform(records));
}

std::string BaselineModel::to_json() const {
  json j{{"format", "protoassign-baseline"},
         {"version", 1},
         {"kind", baseline_kind_id(kind)},
         {"tfidf", tfidf.to_json()},
         {"linear", linear.to_json()}};
  return j.dump(1) + "\n";
}

BaselineModel BaselineModel::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("baseline model: ") + e.what());
  }
  if (j.value("format", "") != "protoassign-baseline" || j.value("version", 0) != 1) {
    throw ValidationError("baseline model: unsupported format");
  }
  BaselineModel m;
  m.kind = parse_baseline_kind(j.at("kind").get<std::string>());
  m.tfidf = TfidfModel::from_json(j.at("tfidf"));
  m.linear = LinearModel::from_json(j.at("linear"));
  if (m.linear.dim != m.tfidf.dim()) throw ValidationError("baseline model: dim mismatch");
  return m;
}

BaselineModel fit_baseline(BaselineKind kind, const std::vector<ExamRecord>& train,
                           std::size_t n_classes, const BaselineConfig& config) {
  std::vector<int> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].label) {
      throw ValidationError("fit_baseline: record " + std::to_string(i) + " has no label");
    }
    y.push_back(*train[i].label);
  }
  BaselineModel m;
  m.kind = kind;
  m.tfidf = TfidfModel::fit(train);
  const auto x = m.tfidf.transform(train);
  m.linear = kind == BaselineKind::Svm ? train_linear_svm(x, y, n_classes, config.svm)
                                       : train_softmax_reg(x, y, n_classes, config.softmax);
  return m;
}

}  // namespace protoassign
