#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "protoassign/distill.hpp"
#include "protoassign/util.hpp"
#include "support.hpp"

using namespace protoassign;

namespace {

SoftLabelRecord soft(std::vector<float> logits, std::optional<int> gold) {
  SoftLabelRecord r;
  r.teacher_logits = std::move(logits);
  r.gold = gold;
  return r;
}

std::vector<SoftLabelRecord> random_soft_batch(Rng& rng, std::size_t n, std::size_t k, double p_gold) {
  std::vector<SoftLabelRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> l(k);
    for (auto& x : l) x = static_cast<float>(rng.normal(0.0, 2.0));
    std::optional<int> g;
    if (rng.bernoulli(p_gold)) g = static_cast<int>(rng.uniform_int(k));
    out.push_back(soft(l, g));
  }
  return out;
}

struct Trained {
  testsupport::ToyTask task;
  EncoderClassifier<float> teacher;
  TrainConfig tc;
};

Trained separable_teacher() {
  auto task = testsupport::toy_task(4, 40, 1.0, 21);
  auto cfg = testsupport::tiny_encoder(task.vocab.size(), 4);
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.n_layers = 1;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.epochs = 30;
  tc.seed = 2;
  EncoderClassifier<float> teacher(cfg, 4);
  fine_tune(teacher, task.inputs, task.labels, tc);
  return {std::move(task), std::move(teacher), tc};
}

std::string ckpt_bytes(const EncoderClassifier<float>& m) { return serialize_checkpoint(m.to_checkpoint()); }

}  // namespace

TEST_CASE("alpha is the gold fraction of the batch, exactly") {
  Rng rng(1);
  for (std::size_t b : {1, 4, 7, 48}) {
    for (std::size_t k = 0; k <= b; ++k) {
      std::vector<SoftLabelRecord> batch;
      for (std::size_t i = 0; i < b; ++i) batch.push_back(soft({0.f, 1.f}, i < k ? std::optional<int>(1) : std::nullopt));
      CHECK(distill_alpha(batch) == static_cast<double>(k) / static_cast<double>(b));
    }
  }
}

TEST_CASE("distill_loss boundary identities on random batches") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(10);
    const std::size_t k = 2 + rng.uniform_int(6);
    const auto student = ad::constant(testsupport::random_tensor(rng, {n, k}));

    auto gold_batch = random_soft_batch(rng, n, k, 1.0);
    std::vector<int> labels;
    for (const auto& r : gold_batch) labels.push_back(*r.gold);
    const double l1 = distill_loss(student, std::span<const SoftLabelRecord>(gold_batch))->value[0];
    CHECK(std::abs(l1 - ad::cross_entropy(student, std::span<const int>(labels))->value[0]) <= 1e-12);

    auto soft_batch = random_soft_batch(rng, n, k, 0.0);
    Tensor<double> teacher({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) teacher.at(i, j) = soft_batch[i].teacher_logits[j];
    }
    const double l0 = distill_loss(student, std::span<const SoftLabelRecord>(soft_batch))->value[0];
    CHECK(std::abs(l0 - ad::mse(student, ad::constant(teacher))->value[0]) <= 1e-12);
  }
  CHECK_THROWS_AS(distill_loss(ad::constant(Tensor<double>({0, 3})), std::span<const SoftLabelRecord>()),
                  ValidationError);
}

TEST_CASE("distill_loss hand example: 2 gold, 2 soft, K=3") {
  const Tensor<double> s({4, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 0, 1, 1, 1});
  const std::vector<SoftLabelRecord> batch = {soft({9, 9, 9}, 0), soft({9, 9, 9}, 1), soft({1, 0, 0}, {}),
                                              soft({0, 0, 0}, {})};
  const double ce0 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  const double ce1 = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  const double mse = (1.0 + 3.0) / 6.0;
  const double want = 0.5 * (ce0 + ce1) / 2.0 + 0.5 * mse;
  CHECK(std::abs(distill_loss(ad::constant(s), std::span<const SoftLabelRecord>(batch))->value[0] - want) < 1e-12);

  // with MSE over gold rows too
  const double all_mse = ((64.0 + 81 + 81) + (81 + 49 + 81) + 1.0 + 3.0) / 12.0;
  const double want_gold = 0.5 * (ce0 + ce1) / 2.0 + 0.5 * all_mse;
  CHECK(std::abs(distill_loss(ad::constant(s), std::span<const SoftLabelRecord>(batch), true)->value[0] -
                 want_gold) < 1e-12);
}

TEST_CASE("distill_loss is permutation-invariant within a batch") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(8);
    const auto batch = random_soft_batch(rng, n, 4, 0.5);
    const auto s = testsupport::random_tensor(rng, {n, 4});
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<SoftLabelRecord> pb;
    Tensor<double> ps({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
      pb.push_back(batch[perm[i]]);
      for (std::size_t j = 0; j < 4; ++j) ps.at(i, j) = s.at(perm[i], j);
    }
    const double a = distill_loss(ad::constant(s), std::span<const SoftLabelRecord>(batch))->value[0];
    const double b = distill_loss(ad::constant(ps), std::span<const SoftLabelRecord>(pb))->value[0];
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("distill loss through the full encoder passes a finite-difference check") {
  Rng rng(4);
  const auto cfg = testsupport::tiny_encoder(12, 4, 8);
  EncoderClassifier<double> model(cfg, 6);
  for (const auto& [name, var] : model.params().entries()) {
    if (name.find(".gain") != std::string::npos) continue;
    for (auto& v : var->value.storage()) v = rng.normal(0.0, 0.3);
  }
  std::vector<TokenSequence> inputs;
  for (int i = 0; i < 4; ++i) {
    TokenSequence s;
    s.ids.assign(8, kPadId);
    const std::size_t len = 3 + rng.uniform_int(6);
    s.ids[0] = kClsId;
    for (std::size_t p = 1; p + 1 < len; ++p) s.ids[p] = static_cast<std::int32_t>(5 + rng.uniform_int(7));
    s.ids[len - 1] = kSepId;
    s.attention_length = len;
    inputs.push_back(s);
  }
  auto batch = random_soft_batch(rng, 4, 4, 0.0);
  batch[0].gold = 2;
  batch[2].gold = 0;
  for (bool on_gold : {false, true}) {
    const double err = testsupport::max_param_gradient_error(model.params(), [&] {
      return distill_loss(model.forward(inputs), std::span<const SoftLabelRecord>(batch), on_gold);
    });
    CHECK(err < 1e-5);
  }
  const auto s = testsupport::random_tensor(rng, {4, 4});
  CHECK(testsupport::max_gradient_error({s}, [&](const auto& p) {
          return distill_loss(p[0], std::span<const SoftLabelRecord>(batch));
        }) < 1e-5);
}

TEST_CASE("soft labels: cardinality, consistency with predict, saturated teacher") {
  const auto t = separable_teacher();
  const auto direct = predict(t.teacher, t.task.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < t.task.labels.size(); ++i) correct += direct.labels[i] == t.task.labels[i];
  REQUIRE(correct == t.task.labels.size());

  std::vector<std::optional<int>> gold(t.task.labels.begin(), t.task.labels.end());
  gold.back().reset();
  const auto soft_labels = generate_soft_labels(t.teacher, t.task.inputs, gold);
  REQUIRE(soft_labels.size() == t.task.inputs.size());
  for (std::size_t i = 0; i < soft_labels.size(); ++i) {
    CHECK(soft_labels[i].gold == gold[i]);
    for (std::size_t j = 0; j < 4; ++j) CHECK(soft_labels[i].teacher_logits[j] == direct.logits.at(i, j));
    CHECK(argmax_label(soft_labels[i].teacher_logits) == t.task.labels[i]);
  }

  auto foreign = t.task.inputs;
  foreign[0].ids[1] = static_cast<std::int32_t>(t.task.vocab.size() + 5);
  CHECK_THROWS_AS(generate_soft_labels(t.teacher, foreign, gold), ValidationError);
}

TEST_CASE("student without augmented data is plain fine-tuning") {
  const auto t = separable_teacher();
  const std::uint64_t student_seed = 99;
  auto tc = t.tc;
  tc.epochs = 3;
  tc.seed = 8;
  const auto student = train_student(t.teacher, t.task.inputs, t.task.labels, {}, tc, student_seed);
  EncoderClassifier<float> plain(t.teacher.config(), student_seed);
  plain.reset_head(derive_seed(student_seed, "head"));
  fine_tune(plain, t.task.inputs, t.task.labels, tc);
  CHECK(ckpt_bytes(student) == ckpt_bytes(plain));

  CHECK(ckpt_bytes(train_student(t.teacher, t.task.inputs, t.task.labels, {}, tc, student_seed)) ==
        ckpt_bytes(student));

  ParamSet<float> wrong;
  wrong.add("embed.token", Tensor<float>({3, 3}));
  DistillOptions opts;
  opts.init_encoder = &wrong;
  CHECK_THROWS_AS(train_student(t.teacher, t.task.inputs, t.task.labels, {}, tc, 1, opts), ValidationError);
}

TEST_CASE("born-again loop: one generation equals train_student, soft labels change per generation") {
  const auto t = separable_teacher();
  Rng rng(5);
  std::vector<TokenSequence> augmented;
  for (std::size_t i = 0; i < 40; ++i) {
    auto s = t.task.inputs[i];
    s.ids[1 + rng.uniform_int(s.attention_length - 2)] = kMaskId;
    augmented.push_back(s);
  }
  auto tc = t.tc;
  tc.epochs = 3;
  const std::uint64_t seed = 17;
  const auto gens = ban_loop(t.teacher, t.task.inputs, t.task.labels, augmented, 3, tc, seed);
  REQUIRE(gens.size() == 3);

  auto tc0 = tc;
  tc0.seed = derive_seed(derive_seed(seed, "ban_train"), 0);
  const auto single = train_student(t.teacher, t.task.inputs, t.task.labels, augmented, tc0,
                                    derive_seed(derive_seed(seed, "ban_student"), 0));
  CHECK(ckpt_bytes(single) == ckpt_bytes(gens[0].student));
  const auto one = ban_loop(t.teacher, t.task.inputs, t.task.labels, augmented, 1, tc, seed);
  CHECK(ckpt_bytes(one[0].student) == ckpt_bytes(gens[0].student));

  std::set<std::string> hashes;
  for (const auto& g : gens) hashes.insert(g.soft_label_hash);
  CHECK(hashes.size() == 3);
  CHECK(ckpt_bytes(gens[0].student) != ckpt_bytes(gens[1].student));
  std::vector<std::optional<int>> gold(t.task.labels.begin(), t.task.labels.end());
  std::vector<TokenSequence> all = t.task.inputs;
  all.insert(all.end(), augmented.begin(), augmented.end());
  gold.resize(all.size());
  CHECK(gens[1].soft_label_hash == soft_label_hash(generate_soft_labels(gens[0].student, all, gold)));
  CHECK_THROWS_AS(ban_loop(t.teacher, t.task.inputs, t.task.labels, augmented, 0, tc, seed), ValidationError);
}

TEST_CASE("soft-label file round trip") {
  Rng rng(6);
  SoftLabelTable table;
  for (int i = 0; i < 12; ++i) {
    table.records.push_back(testsupport::random_record(rng));
    std::vector<float> l(5);
    for (auto& x : l) x = static_cast<float>(rng.normal(0.0, 3.0));
    table.logits.push_back(l);
    table.gold.push_back(i % 3 == 0 ? std::optional<int>(i % 5) : std::nullopt);
  }
  const auto dir = testsupport::temp_dir("soft");
  for (auto fmt : {DatasetFormat::Tsv, DatasetFormat::Jsonl}) {
    const auto path = dir + "/soft." + std::string(dataset_format_id(fmt));
    save_soft_labels(path, table, fmt);
    const auto back = load_soft_labels(path, fmt);
    CHECK(back.records == table.records);
    CHECK(back.logits == table.logits);
    CHECK(back.gold == table.gold);
  }
}
