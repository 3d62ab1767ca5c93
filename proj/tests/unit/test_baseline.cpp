#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "protoassign/baseline.hpp"
#include "protoassign/core_data.hpp"
#include "protoassign/eval_report.hpp"
#include "protoassign/synthgen.hpp"
#include "protoassign/util.hpp"
#include "support.hpp"

using namespace protoassign;

namespace {

ExamRecord text_record(const std::string& history, const std::string& diagnosis,
                       const std::string& code = "C1", const std::string& sex = "1", int age = 40) {
  ExamRecord r;
  r.exam_code = code;
  r.exam_name = "name";
  r.sex = sex;
  r.age = age;
  r.history = history;
  r.diagnosis = diagnosis;
  r.protocol_group = "G0";
  return r;
}

// words of a random_text field: split on spaces, commas become separate
// punctuation and are dropped, everything lowercased
std::vector<std::string> oracle_words(const std::string& field) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (char c : field) {
    if (c == ' ' || c == ',') {
      flush();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

std::map<std::string, std::size_t> oracle_counts(const ExamRecord& r) {
  std::map<std::string, std::size_t> c;
  for (const auto* f : {&r.history, &r.diagnosis}) {
    const auto w = oracle_words(*f);
    for (std::size_t i = 0; i < w.size(); ++i) {
      ++c[w[i]];
      if (i + 1 < w.size()) ++c[w[i] + " " + w[i + 1]];
    }
  }
  return c;
}

std::vector<double> dense(const SparseVector& v) {
  std::vector<double> d(v.dim, 0.0);
  for (const auto& [i, x] : v.entries) d[i] += x;
  return d;
}

SparseVector point(double a, double b) { return SparseVector{{{0, a}, {1, b}}, 2}; }

double train_accuracy(const LinearModel& m, const std::vector<SparseVector>& x, const std::vector<int>& y) {
  const auto p = m.predict(x);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += p[i] == y[i];
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

std::pair<std::vector<SparseVector>, std::vector<int>> separable_points(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SparseVector> x;
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    const int label = i % 2;
    const double cx = label ? 2.0 : -2.0;
    x.push_back(point(cx + rng.normal(0.0, 0.5), rng.normal(0.0, 1.0)));
    y.push_back(label);
  }
  return {x, y};
}

struct Split {
  std::vector<ExamRecord> train, test;
  std::size_t k = 0;
};

Split separable_corpus(std::uint64_t seed) {
  auto cfg = uw_ct_body_config(1.0, 0, seed);
  cfg.explicit_counts.assign(cfg.classes.size(), 40);
  cfg.marker_strength = 1.0;
  auto data = consolidate_labels(generate_dataset(cfg), 0);
  Split s;
  s.k = data.label_set.size();
  for (std::size_t i = 0; i < data.records.size(); ++i) (i % 5 == 0 ? s.test : s.train).push_back(data.records[i]);
  return s;
}

double macro_f1_of(const BaselineModel& m, const std::vector<ExamRecord>& test, std::size_t k) {
  std::vector<int> gold;
  for (const auto& r : test) gold.push_back(*r.label);
  return make_report("m", "0", confusion(gold, m.predict(test), k)).agg.macro.f1;
}

}  // namespace

TEST_CASE("fit_tfidf: single document hand example") {
  const auto m = TfidfModel::fit({text_record("a b", "")});
  CHECK(m.terms() == std::vector<std::string>{"a", "a b", "b"});
  for (const auto& t : m.terms()) {
    CHECK(m.df(t) == 1);
    CHECK(m.idf(t) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(m.n_docs() == 1);
  CHECK_THROWS_AS(TfidfModel::fit({}), ValidationError);
}

TEST_CASE("bigrams never span the history/diagnosis boundary") {
  const auto m = TfidfModel::fit({text_record("liver mass", "renal stone")});
  CHECK(m.df("mass renal") == 0);
  CHECK(m.df("liver mass") == 1);
  CHECK(m.df("renal stone") == 1);
  CHECK(m.n_terms() == 6);
}

TEST_CASE("df table matches a counting oracle on fuzzed corpora") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ExamRecord> corpus;
    const std::size_t n = 1 + rng.uniform_int(40);
    for (std::size_t i = 0; i < n; ++i) corpus.push_back(testsupport::random_record(rng));
    std::map<std::string, std::size_t> df;
    for (const auto& r : corpus) {
      for (const auto& [term, c] : oracle_counts(r)) ++df[term];
    }
    const auto m = TfidfModel::fit(corpus);
    REQUIRE(m.n_terms() == df.size());
    std::size_t i = 0;
    for (const auto& [term, d] : df) {
      CHECK(m.terms()[i] == term);
      CHECK(m.df_table()[i] == d);
      CHECK(m.idf(term) == doctest::Approx(std::log((1.0 + n) / (1.0 + d)) + 1.0).epsilon(1e-14));
      ++i;
    }
  }
}

TEST_CASE("transform: empty text, single term, dense recomputation oracle") {
  const std::vector<ExamRecord> train = {text_record("a b", "c", "C1", "1", 20),
                                         text_record("b", "", "C2", "2", 60)};
  const auto m = TfidfModel::fit(train);
  const auto empty = dense(m.transform(text_record("", "", "C2", "2", 50)));
  for (std::size_t i = 0; i < m.n_terms(); ++i) CHECK(empty[i] == 0.0);
  CHECK(empty[m.n_terms()] == doctest::Approx(0.75));
  CHECK(empty[m.n_terms() + 2] == 1.0);  // sex "2"
  CHECK(empty[m.n_terms() + 4] == 1.0);  // code "C2"

  const auto single = m.transform(text_record("c", ""));
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < m.n_terms(); ++i) {
    if (dense(single)[i] != 0.0) {
      ++nonzero;
      CHECK(dense(single)[i] == 1.0);
    }
  }
  CHECK(nonzero == 1);

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ExamRecord> corpus;
    for (int i = 0; i < 30; ++i) corpus.push_back(testsupport::random_record(rng));
    const auto model = TfidfModel::fit(corpus);
    int lo = 1000, hi = -1;
    std::set<std::string> sexes, codes;
    for (const auto& r : corpus) {
      lo = std::min(lo, r.age);
      hi = std::max(hi, r.age);
      sexes.insert(r.sex);
      codes.insert(r.exam_code);
    }
    const auto rec = testsupport::random_record(rng);
    const auto got = dense(model.transform(rec));
    REQUIRE(got.size() == model.n_terms() + 1 + sexes.size() + codes.size());
    std::vector<double> want(got.size(), 0.0);
    const auto counts = oracle_counts(rec);
    double norm = 0.0;
    for (std::size_t t = 0; t < model.n_terms(); ++t) {
      auto it = counts.find(model.terms()[t]);
      if (it == counts.end()) continue;
      want[t] = static_cast<double>(it->second) * model.idf(model.terms()[t]);
      norm += want[t] * want[t];
    }
    for (std::size_t t = 0; t < model.n_terms(); ++t) want[t] = norm > 0 ? want[t] / std::sqrt(norm) : 0.0;
    const std::size_t base = model.n_terms();
    want[base] = hi > lo ? std::clamp(static_cast<double>(rec.age - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    const auto s = sexes.find(rec.sex);
    if (s != sexes.end()) want[base + 1 + std::distance(sexes.begin(), s)] = 1.0;
    const auto c = codes.find(rec.exam_code);
    if (c != codes.end()) want[base + 1 + sexes.size() + std::distance(codes.begin(), c)] = 1.0;
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-10);
    CHECK(dense(model.transform(rec)) == got);
  }
  CHECK(dense(m.transform(train[0])) == dense(m.transform(train[0])));
}

TEST_CASE("linear svm: separable points, zero epochs, single class") {
  const auto [x, y] = separable_points(3);
  SvmConfig cfg;
  cfg.seed = 4;
  CHECK(train_accuracy(train_linear_svm(x, y, 2, cfg), x, y) == 1.0);

  cfg.epochs = 0;
  const auto zero = train_linear_svm(x, y, 2, cfg);
  CHECK(std::all_of(zero.weights.begin(), zero.weights.end(), [](double w) { return w == 0.0; }));
  for (int p : zero.predict(x)) CHECK(p == 0);

  const std::vector<int> same(x.size(), 1);
  CHECK_THROWS_AS(train_linear_svm(x, same, 2, SvmConfig{}), ValidationError);
}

TEST_CASE("linear svm: scaling inputs by s and C by 1/s^2 leaves predictions unchanged") {
  Rng rng(5);
  std::vector<SparseVector> x, x2;
  std::vector<int> y;
  for (int i = 0; i < 120; ++i) {
    const int label = static_cast<int>(rng.uniform_int(3));
    SparseVector v{{}, 4};
    for (std::size_t d = 0; d < 4; ++d) v.entries.emplace_back(d, rng.normal(label == static_cast<int>(d) ? 1.0 : 0.0, 1.0));
    auto s = v;
    for (auto& e : s.entries) e.second *= 2.0;
    x.push_back(v);
    x2.push_back(s);
    y.push_back(label);
  }
  SvmConfig a;
  a.c = 0.5;
  a.seed = 9;
  SvmConfig b = a;
  b.c = a.c / 4.0;
  const auto ma = train_linear_svm(x, y, 3, a);
  const auto mb = train_linear_svm(x2, y, 3, b);
  CHECK(ma.predict(x) == mb.predict(x2));
}

TEST_CASE("softmax regression: separable points, zero epochs, single class") {
  const auto [x, y] = separable_points(6);
  SoftmaxConfig cfg;
  CHECK(train_accuracy(train_softmax_reg(x, y, 2, cfg), x, y) == 1.0);
  cfg.epochs = 0;
  const auto zero = train_softmax_reg(x, y, 2, cfg);
  CHECK(std::all_of(zero.weights.begin(), zero.weights.end(), [](double w) { return w == 0.0; }));
  for (int p : zero.predict(x)) CHECK(p == 0);
  const std::vector<int> same(x.size(), 0);
  CHECK_THROWS_AS(train_softmax_reg(x, same, 2, SoftmaxConfig{}), ValidationError);
}

TEST_CASE("softmax objective gradient matches finite differences") {
  Rng rng(7);
  std::vector<SparseVector> x;
  std::vector<int> y;
  for (int i = 0; i < 15; ++i) {
    SparseVector v{{}, 5};
    for (std::size_t d = 0; d < 5; ++d) {
      if (rng.bernoulli(0.6)) v.entries.emplace_back(d, rng.normal(0.0, 1.0));
    }
    x.push_back(v);
    y.push_back(static_cast<int>(rng.uniform_int(3)));
  }
  LinearModel m(3, 5);
  for (auto& w : m.weights) w = rng.normal(0.0, 0.5);
  for (auto& b : m.bias) b = rng.normal(0.0, 0.5);
  const double l2 = 0.03;
  const auto g = softmax_gradient(m, x, y, l2);
  const double h = 1e-6;
  for (std::size_t i = 0; i < m.weights.size() + m.bias.size(); ++i) {
    auto up = m, down = m;
    double& u = i < m.weights.size() ? up.weights[i] : up.bias[i - m.weights.size()];
    double& d = i < m.weights.size() ? down.weights[i] : down.bias[i - m.weights.size()];
    u += h;
    d -= h;
    const double numeric = (softmax_objective(up, x, y, l2) - softmax_objective(down, x, y, l2)) / (2 * h);
    const double analytic = i < m.weights.size() ? g.weights[i] : g.bias[i - m.weights.size()];
    CHECK(std::abs(numeric - analytic) < 1e-6);
  }
}

TEST_CASE("softmax regression with no features recovers class frequencies") {
  std::vector<SparseVector> x(100, SparseVector{{}, 3});
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) y.push_back(i < 50 ? 0 : (i < 80 ? 1 : 2));
  SoftmaxConfig cfg;
  cfg.epochs = 2000;
  cfg.learning_rate = 0.05;
  const auto m = train_softmax_reg(x, y, 3, cfg);
  const auto p = predict_proba(m, x[0]);
  CHECK(std::abs(p[0] - 0.5) < 1e-3);
  CHECK(std::abs(p[1] - 0.3) < 1e-3);
  CHECK(std::abs(p[2] - 0.2) < 1e-3);
}

TEST_CASE("both baselines separate a marker_strength 1 corpus") {
  const auto s = separable_corpus(8);
  BaselineConfig bc;
  for (auto kind : {BaselineKind::Svm, BaselineKind::Softmax}) {
    CAPTURE(baseline_kind_id(kind));
    const auto model = fit_baseline(kind, s.train, s.k, bc);
    CHECK(macro_f1_of(model, s.test, s.k) >= 0.95);
  }
}

TEST_CASE("baseline model JSON round trip and unseen-vocabulary handling") {
  Rng rng(9);
  std::vector<ExamRecord> train;
  for (int i = 0; i < 60; ++i) {
    auto r = testsupport::random_record(rng, 3);
    r.label = static_cast<int>(r.protocol_group->back() - '0');
    train.push_back(r);
  }
  const auto model = fit_baseline(BaselineKind::Svm, train, 3, BaselineConfig{});
  const auto back = BaselineModel::from_json(model.to_json());
  CHECK(back.to_json() == model.to_json());
  std::vector<ExamRecord> unseen;
  for (int i = 0; i < 20; ++i) unseen.push_back(testsupport::random_record(rng, 3));
  CHECK(back.predict(unseen) == model.predict(unseen));
  const auto novel = model.tfidf.transform(text_record("zzzunseen qqqnever", "", "C99", "9", 10));
  for (const auto& [i, v] : novel.entries) CHECK((i >= model.tfidf.n_terms() || v == 0.0));
  CHECK_THROWS_AS(BaselineModel::from_json("{}"), ValidationError);
}
