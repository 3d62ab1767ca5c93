#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "protoassign/pipeline.hpp"
#include "protoassign/sampling.hpp"
#include "protoassign/synthgen.hpp"
#include "protoassign/util.hpp"

using namespace protoassign;

namespace {

std::vector<int> labels_from_counts(const std::vector<std::size_t>& counts, std::uint64_t shuffle_seed = 0) {
  std::vector<int> y;
  for (std::size_t c = 0; c < counts.size(); ++c) y.insert(y.end(), counts[c], static_cast<int>(c));
  if (shuffle_seed) {
    Rng rng(shuffle_seed);
    rng.shuffle(y);
  }
  return y;
}

std::map<int, std::size_t> class_counts(const std::vector<int>& labels, const std::vector<std::size_t>& pos) {
  std::map<int, std::size_t> c;
  for (auto p : pos) ++c[labels[p]];
  return c;
}

void check_plan(const FoldPlan& plan, const std::vector<int>& labels) {
  std::vector<std::size_t> all;
  for (const auto& f : plan.folds) {
    CHECK(std::is_sorted(f.begin(), f.end()));
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == labels.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  std::map<int, std::size_t> total;
  for (int y : labels) ++total[y];
  for (std::size_t f = 0; f < plan.k; ++f) {
    const auto c = class_counts(labels, plan.folds[f]);
    for (const auto& [cls, n] : total) {
      const double want = static_cast<double>(n) / static_cast<double>(plan.k);
      const double got = c.count(cls) ? static_cast<double>(c.at(cls)) : 0.0;
      CHECK(std::abs(got - want) < 1.0);
    }
  }
}

}  // namespace

TEST_CASE("stratified_kfold: exact divisibility and pigeonhole sizes") {
  const auto y = labels_from_counts({5, 5, 5, 5, 5}, 3);
  const auto plan = stratified_kfold(y, 5, 1);
  for (const auto& f : plan.folds) {
    CHECK(f.size() == 5);
    std::set<int> classes;
    for (auto i : f) classes.insert(y[i]);
    CHECK(classes.size() == 5);
  }
  check_plan(plan, y);

  const auto y7 = labels_from_counts({7});
  const auto p7 = stratified_kfold(y7, 5, 2);
  std::vector<std::size_t> sizes;
  for (const auto& f : p7.folds) sizes.push_back(f.size());
  std::sort(sizes.rbegin(), sizes.rend());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 1, 1, 1});
}

TEST_CASE("stratified_kfold: undersized class is named in the error") {
  const auto y = labels_from_counts({10, 3});
  try {
    stratified_kfold(y, 5, 1, {"big", "tiny group"});
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("tiny group") != std::string::npos);
  }
}

TEST_CASE("stratified_kfold on the scaled uw-ct-body corpus and fuzzed label sets") {
  const auto counts = class_count_profile(uw_ct_body_config(0.1, 10, 1));
  const auto y = labels_from_counts(counts, 5);
  for (std::uint64_t seed : {1, 2, 3}) check_plan(stratified_kfold(y, 5, seed), y);

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.uniform_int(6);
    std::vector<std::size_t> c(1 + rng.uniform_int(12));
    for (auto& n : c) n = k + rng.uniform_int(40);
    const auto yy = labels_from_counts(c, trial + 1);
    const auto plan = stratified_kfold(yy, k, trial);
    check_plan(plan, yy);
    CHECK(FoldPlan::from_json(plan.to_json()).folds == plan.folds);
    CHECK(stratified_kfold(yy, k, trial).folds == plan.folds);
  }
}

TEST_CASE("fold plan: train and test indices partition the data") {
  const auto y = labels_from_counts({12, 9, 7}, 4);
  const auto plan = stratified_kfold(y, 3, 5);
  for (std::size_t f = 0; f < 3; ++f) {
    auto tr = plan.train_indices(f);
    const auto& te = plan.test_indices(f);
    CHECK(std::is_sorted(tr.begin(), tr.end()));
    std::vector<std::size_t> both = tr;
    both.insert(both.end(), te.begin(), te.end());
    std::sort(both.begin(), both.end());
    CHECK(both.size() == y.size());
    CHECK(std::adjacent_find(both.begin(), both.end()) == both.end());
  }
}

TEST_CASE("undersample_majorities: rank arithmetic, no-op, subset") {
  const auto y = labels_from_counts({100, 80, 30, 5}, 7);
  const auto keep = undersample_majorities(y, 3);
  const auto c = class_counts(y, keep);
  CHECK(c.at(0) == 30);
  CHECK(c.at(1) == 30);
  CHECK(c.at(2) == 30);
  CHECK(c.at(3) == 5);
  CHECK(std::is_sorted(keep.begin(), keep.end()));
  CHECK(std::adjacent_find(keep.begin(), keep.end()) == keep.end());
  CHECK(undersample_majorities(y, 3) == keep);

  // class order does not matter, ranks do
  const auto y2 = labels_from_counts({5, 30, 100, 80}, 8);
  const auto c2 = class_counts(y2, undersample_majorities(y2, 1));
  CHECK(c2.at(2) == 30);
  CHECK(c2.at(3) == 30);

  const auto flat = labels_from_counts({30, 30, 30, 4});
  CHECK(undersample_majorities(flat, 2).size() == flat.size());
  CHECK_THROWS_AS(undersample_majorities(labels_from_counts({5, 6}), 1), ValidationError);
}

TEST_CASE("oversample_minorities: rank arithmetic, no-op, multiset with originals first") {
  const auto y = labels_from_counts({100, 80, 5}, 9);
  const auto pos = oversample_minorities(y, 4);
  const auto c = class_counts(y, pos);
  CHECK(c.at(0) == 100);
  CHECK(c.at(1) == 80);
  CHECK(c.at(2) == 80);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(pos[i] == i);
  for (std::size_t i = y.size(); i < pos.size(); ++i) CHECK(y[pos[i]] == 2);

  const auto balanced = labels_from_counts({100, 80, 80});
  CHECK(oversample_minorities(balanced, 1).size() == balanced.size());
  CHECK_THROWS_AS(oversample_minorities(labels_from_counts({5}), 1), ValidationError);
}

TEST_CASE("full uw-ct-body counts: undersample to 3351, oversample to 8057") {
  const auto counts = class_count_profile(builtin_profile("uw-ct-body"));
  const auto y = labels_from_counts(counts);
  const auto under = class_counts(y, undersample_majorities(y, 1));
  CHECK(under.at(0) == 3351);
  CHECK(under.at(1) == 3351);
  CHECK(under.at(2) == 3351);
  for (std::size_t c = 3; c < counts.size(); ++c) CHECK(under.at(static_cast<int>(c)) == counts[c]);
  const auto over = class_counts(y, oversample_minorities(y, 1));
  CHECK(over.at(0) == 11911);
  for (std::size_t c = 1; c < counts.size(); ++c) CHECK(over.at(static_cast<int>(c)) == 8057);
}

TEST_CASE("resampling a training fold leaves the validation fold bit-identical") {
  ExperimentConfig cfg;
  cfg.dataset.scale = 0.05;
  cfg.dataset.min_count = 10;
  cfg.exclusion_threshold = 2;
  cfg.vocab_size = 300;
  const auto data = prepare_data(cfg, synthesize(cfg));
  const auto fd = make_fold(cfg, data, 1);
  const auto test_before = fd.test;
  const auto seqs_before = fd.test_seqs;
  for (auto mode : {ResampleMode::None, ResampleMode::Undersample, ResampleMode::Oversample}) {
    const auto keep = resample_fold(cfg, fd, mode);
    for (auto p : keep) CHECK(p < fd.train.size());
    CHECK(fd.test == test_before);
    CHECK(fd.test_seqs == seqs_before);
    CHECK(resample_fold(cfg, fd, mode) == keep);
  }
  CHECK(parse_resample_mode(resample_mode_id(ResampleMode::Oversample)) == ResampleMode::Oversample);
  CHECK_THROWS_AS(parse_resample_mode("smote"), ValidationError);
}
