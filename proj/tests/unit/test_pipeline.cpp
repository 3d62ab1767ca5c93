#include <set>

#include "doctest.h"
#include "protoassign/pipeline.hpp"
#include "protoassign/util.hpp"
#include "support.hpp"

using namespace protoassign;

namespace {

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig c;
  c.dataset.scale = 0.02;
  c.exclusion_threshold = 2;
  c.vocab_size = 300;
  c.max_len = 64;
  c.encoder.d_model = 16;
  c.encoder.n_heads = 2;
  c.encoder.n_layers = 1;
  c.encoder.d_ff = 32;
  c.train.batch_size = 32;
  c.train.learning_rate = 1e-3;
  c.train.epochs = 1;
  c.pretrain.batch_size = 32;
  c.pretrain.learning_rate = 1e-3;
  c.pretrain.epochs = 1;
  c.augment.n_aug = 2;
  c.augment.class_cap = 1200;
  c.generations = 2;
  c.eval_folds = {0};
  c.seed = 3;
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config defaults carry the reference settings") {
  const ExperimentConfig c;
  CHECK(c.max_len == 200);
  CHECK(c.train.batch_size == 48);
  CHECK(c.train.epochs == 4);
  CHECK(TrainConfig::kReferenceLearningRate == 2e-5);
  CHECK(c.augment.mask_threshold == 0.1);
  CHECK(c.augment.pos_threshold == 0.2);
  CHECK(c.augment.ngram_range == std::vector<std::size_t>{1, 2, 3});
  CHECK(c.augment.n_aug == 30);
  CHECK(c.augment.class_cap == 12000);
  CHECK(c.k_folds == 5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config json round trip, hash and seed derivation") {
  auto c = tiny_config("x");
  c.n_aug_sweep = {25, 30};
  c.models = {"svm", "ban"};
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());

  auto moved = c;
  moved.output_dir = "elsewhere";
  moved.models = {"svm"};
  CHECK(moved.hash() == c.hash());
  auto reseeded = c;
  reseeded.seed = 4;
  CHECK(reseeded.hash() != c.hash());
  CHECK(reseeded.stage_seed("pretrain") != c.stage_seed("pretrain"));

  std::set<std::uint64_t> seeds;
  for (const char* s : {"synth", "folds", "pretrain", "augment", "ban"}) {
    for (std::size_t f = 0; f < 5; ++f) seeds.insert(c.stage_seed(s, f));
  }
  CHECK(seeds.size() == 25);
  CHECK(c.stage_seed("ban", 2) == tiny_config("y").stage_seed("ban", 2));
  CHECK(c.wants("ban"));
  CHECK_FALSE(c.wants("softmax"));
}

TEST_CASE("config validation names the field") {
  const auto expect_field = [](ExperimentConfig c, const std::string& field) {
    try {
      c.validate();
      FAIL("expected an error for " << field);
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  auto c = tiny_config("x");
  c.k_folds = 1;
  expect_field(c, "k_folds");
  c = tiny_config("x");
  c.eval_folds = {7};
  expect_field(c, "eval_folds");
  c = tiny_config("x");
  c.models = {"gbm"};
  expect_field(c, "models");
  c = tiny_config("x");
  c.train.batch_size = 0;
  expect_field(c, "batch_size");
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"no_such_key": 1})")),
                  ValidationError);
}

TEST_CASE("run_experiment: grid rows, n_aug sweep, shared evaluation sets, resume") {
  const auto dir = testsupport::temp_dir("pipeline_run");
  auto c = tiny_config(dir + "/out");
  c.n_aug_sweep = {2, 3};
  const auto r = run_experiment(c);
  const std::vector<std::string> want = {"svm", "softmax", "encoder_random", "encoder_pretrained",
                                         "encoder_undersample", "encoder_oversample", "ban1", "ban2"};
  for (const auto& id : want) {
    INFO(id);
    CHECK(r.rows.count(id) == 1);
  }
  CHECK(r.row_order.size() == r.rows.size());
  CHECK(r.sweep.size() == 2);

  // every row scored on the same fold-0 instances
  const auto& ref = r.rows.at("svm").folds.at(0).matrix;
  for (const auto& [id, cv] : r.rows) {
    REQUIRE(cv.folds.size() == 1);
    CHECK(cv.folds[0].fold == "0");
    CHECK(cv.folds[0].matrix.total() == ref.total());
    std::vector<std::size_t> gold_a(ref.k), gold_b(ref.k);
    for (std::size_t i = 0; i < ref.k; ++i) {
      for (std::size_t j = 0; j < ref.k; ++j) {
        gold_a[i] += ref.at(i, j);
        gold_b[i] += cv.folds[0].matrix.at(i, j);
      }
    }
    CHECK(gold_a == gold_b);
  }
  for (const char* f : {"report.md", "report.csv", "report_meta.json", "manifest.json"}) {
    CHECK(file_exists(dir + "/out/" + f));
  }
  CHECK(read_file(dir + "/out/report.md").find("n_aug") != std::string::npos);

  const auto csv = read_file(dir + "/out/report.csv");
  const auto again = run_experiment(c);
  CHECK(read_file(dir + "/out/report.csv") == csv);
  CHECK(again.rows.at("ban2").pooled.matrix == r.rows.at("ban2").pooled.matrix);

  // a narrower row selection reuses the same artifacts
  auto narrow = c;
  narrow.models = {"encoder_pretrained"};
  const auto ckpt = read_file(dir + "/out/fold0/encoder_pretrained.ckpt");
  const auto n = run_experiment(narrow);
  CHECK(n.rows.size() == 1);
  CHECK(n.rows.at("encoder_pretrained").pooled.matrix == r.rows.at("encoder_pretrained").pooled.matrix);
  CHECK(read_file(dir + "/out/fold0/encoder_pretrained.ckpt") == ckpt);
}
