#include "protoassign/distill.hpp"

#include <charconv>
#include <cstring>

namespace protoassign {

std::vector<SoftLabelRecord> generate_soft_labels(const EncoderClassifier<float>& teacher,
                                                  std::span<const TokenSequence> inputs,
                                                  std::span<const std::optional<int>> gold,
                                                  std::size_t batch_size) {
  if (gold.size() != inputs.size()) {
    throw ValidationError("generate_soft_labels: " + std::to_string(inputs.size()) +
                          " inputs but " + std::to_string(gold.size()) + " gold entries");
  }
  const std::size_t k = teacher.config().n_classes;
  for (const auto& g : gold) {
    if (g && (*g < 0 || static_cast<std::size_t>(*g) >= k)) {
      throw ValidationError("generate_soft_labels: gold label " + std::to_string(*g) +
                            " outside [0," + std::to_string(k) + ")");
    }
  }
  std::vector<SoftLabelRecord> out;
  if (inputs.empty()) return out;
  const auto pred = predict(teacher, inputs, batch_size);
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    SoftLabelRecord r;
    r.input = inputs[i];
    r.teacher_logits.assign(pred.logits.data() + i * k, pred.logits.data() + (i + 1) * k);
    r.gold = gold[i];
    out.push_back(std::move(r));
  }
  return out;
}

double distill_alpha(std::span<const SoftLabelRecord> batch) {
  if (batch.empty()) throw ValidationError("distill: empty batch");
  std::size_t g = 0;
  for (const auto& r : batch) g += r.gold ? 1 : 0;
  return static_cast<double>(g) / static_cast<double>(batch.size());
}

template <typename T>
ad::Var<T> distill_loss(const ad::Var<T>& student_logits, std::span<const SoftLabelRecord> batch,
                        bool mse_on_gold) {
  if (batch.empty()) throw ValidationError("distill_loss: empty batch");
  const auto& shape = student_logits->value.shape();
  if (shape.size() != 2 || shape[0] != batch.size()) {
    throw ValidationError("distill_loss: logits " + student_logits->value.shape_string() +
                          " do not match a batch of " + std::to_string(batch.size()));
  }
  const std::size_t k = shape[1];
  std::vector<std::size_t> gold_rows, soft_rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].teacher_logits.size() != k) {
      throw ValidationError("distill_loss: record " + std::to_string(i) + " has " +
                            std::to_string(batch[i].teacher_logits.size()) +
                            " teacher logits, expected " + std::to_string(k));
    }
    if (batch[i].gold) {
      gold_rows.push_back(i);
      labels.push_back(*batch[i].gold);
    }
    if (!batch[i].gold || mse_on_gold) soft_rows.push_back(i);
  }
  const T alpha = static_cast<T>(distill_alpha(batch));

  ad::Var<T> loss;
  if (!gold_rows.empty()) {
    auto ce = ad::cross_entropy(ad::gather_rows(student_logits, std::span<const std::size_t>(gold_rows)),
                                std::span<const int>(labels));
    loss = ad::scale(ce, alpha);
  }
  if (!soft_rows.empty()) {
    Tensor<T> target({soft_rows.size(), k});
    for (std::size_t r = 0; r < soft_rows.size(); ++r) {
      const auto& t = batch[soft_rows[r]].teacher_logits;
      for (std::size_t j = 0; j < k; ++j) target[r * k + j] = static_cast<T>(t[j]);
    }
    auto m = ad::mse(ad::gather_rows(student_logits, std::span<const std::size_t>(soft_rows)),
                     ad::constant(std::move(target)));
    m = ad::scale(m, T(1) - alpha);
    loss = loss ? ad::add(loss, m) : m;
  }
  return loss;
}

EncoderClassifier<float> train_student(const EncoderClassifier<float>& teacher,
                                       std::span<const TokenSequence> originals,
                                       std::span<const int> original_labels,
                                       std::span<const TokenSequence> augmented,
                                       const TrainConfig& train, std::uint64_t student_seed,
                                       const DistillOptions& options, LossCurve* curve) {
  train.validate();
  if (originals.size() != original_labels.size()) {
    throw ValidationError("train_student: originals and labels differ in length");
  }
  if (originals.empty() && augmented.empty()) throw ValidationError("train_student: no data");

  std::vector<TokenSequence> inputs(originals.begin(), originals.end());
  inputs.insert(inputs.end(), augmented.begin(), augmented.end());
  std::vector<std::optional<int>> gold(original_labels.begin(), original_labels.end());
  gold.resize(inputs.size());
  const auto soft = generate_soft_labels(teacher, inputs, gold, train.batch_size);

  EncoderClassifier<float> student(teacher.config(), student_seed);
  if (options.init_encoder) student.load_encoder_weights(*options.init_encoder);
  student.reset_head(derive_seed(student_seed, "head"));

  std::vector<SoftLabelRecord> batch;
  auto loss_fn = [&](std::span<const std::size_t> idx, Rng& rng) -> ad::Var<float> {
    batch.clear();
    std::vector<TokenSequence> seqs;
    for (auto i : idx) {
      batch.push_back(soft[i]);
      seqs.push_back(soft[i].input);
    }
    return distill_loss(student.forward(seqs, &rng), std::span<const SoftLabelRecord>(batch),
                        options.mse_on_gold);
  };
  auto c = train_loop<float>(student.params(), soft.size(), train.batch_size, train.epochs,
                             train.learning_rate, train.seed, loss_fn);
  if (curve) *curve = std::move(c);
  return student;
}

std::vector<BanGeneration> ban_loop(const EncoderClassifier<float>& initial_teacher,
                                    std::span<const TokenSequence> originals,
                                    std::span<const int> original_labels,
                                    std::span<const TokenSequence> augmented,
                                    std::size_t generations, const TrainConfig& train,
                                    std::uint64_t seed, const DistillOptions& options) {
  if (generations == 0) throw ValidationError("ban_loop: need at least one generation");
  std::vector<BanGeneration> out;
  std::vector<TokenSequence> inputs(originals.begin(), originals.end());
  inputs.insert(inputs.end(), augmented.begin(), augmented.end());
  std::vector<std::optional<int>> gold(original_labels.begin(), original_labels.end());
  gold.resize(inputs.size());
  for (std::size_t g = 0; g < generations; ++g) {
    const auto& teacher = g == 0 ? initial_teacher : out.back().student;
    const auto hash = soft_label_hash(generate_soft_labels(teacher, inputs, gold, train.batch_size));
    TrainConfig tc = train;
    tc.seed = derive_seed(derive_seed(seed, "ban_train"), g);
    LossCurve curve;
    auto student = train_student(teacher, originals, original_labels, augmented, tc,
                                 derive_seed(derive_seed(seed, "ban_student"), g), options, &curve);
    out.push_back(BanGeneration{std::move(student), std::move(curve), hash});
  }
  return out;
}

std::string soft_label_hash(std::span<const SoftLabelRecord> records) {
  std::string buf;
  for (const auto& r : records) {
    const int g = r.gold ? *r.gold : -1;
    buf.append(reinterpret_cast<const char*>(&g), sizeof(g));
    buf.append(reinterpret_cast<const char*>(r.teacher_logits.data()),
               r.teacher_logits.size() * sizeof(float));
  }
  return git_blob_hash(buf);
}

namespace {

constexpr std::size_t kMaxLogitColumns = 4096;

std::vector<std::string> soft_label_columns(std::size_t k) {
  std::vector<std::string> cols = {"has_gold_label", "gold_label"};
  for (std::size_t j = 0; j < k; ++j) cols.push_back("logit_" + std::to_string(j));
  return cols;
}

}  // namespace

void save_soft_labels(const std::string& path, const SoftLabelTable& table, DatasetFormat format) {
  if (table.logits.size() != table.records.size() || table.gold.size() != table.records.size()) {
    throw ValidationError("save_soft_labels: columns not aligned with records");
  }
  const std::size_t k = table.logits.empty() ? 0 : table.logits.front().size();
  DatasetTable out;
  out.records = table.records;
  out.extra_columns = soft_label_columns(k);
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    if (table.logits[i].size() != k) throw ValidationError("save_soft_labels: ragged logits");
    std::vector<std::string> row = {table.gold[i] ? "true" : "false",
                                    table.gold[i] ? std::to_string(*table.gold[i]) : ""};
    for (float v : table.logits[i]) row.push_back(format_double(static_cast<double>(v)));
    out.extras.push_back(std::move(row));
  }
  save_dataset_table(path, out, format);
}

SoftLabelTable load_soft_labels(const std::string& path, DatasetFormat format) {
  auto table = load_dataset_table(path, format, soft_label_columns(kMaxLogitColumns));
  const auto& cols = table.extra_columns;
  if (cols.size() < 2 || cols[0] != "has_gold_label" || cols[1] != "gold_label") {
    throw ValidationError("soft labels: has_gold_label and gold_label columns are required");
  }
  const std::size_t k = cols.size() - 2;
  if (k == 0) throw ValidationError("soft labels: no logit columns");
  for (std::size_t j = 0; j < k; ++j) {
    if (cols[j + 2] != "logit_" + std::to_string(j)) {
      throw ValidationError("soft labels: logit columns must be logit_0..logit_" +
                            std::to_string(k - 1));
    }
  }
  SoftLabelTable out;
  out.records = std::move(table.records);
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& row = table.extras[i];
    const std::string where = "soft labels: row " + std::to_string(i + 1) + ": ";
    if (row[0] == "true") {
      int g = 0;
      auto [p, ec] = std::from_chars(row[1].data(), row[1].data() + row[1].size(), g);
      if (ec != std::errc() || p != row[1].data() + row[1].size() || g < 0 ||
          static_cast<std::size_t>(g) >= k) {
        throw ValidationError(where + "bad gold_label '" + row[1] + "'");
      }
      out.gold.emplace_back(g);
    } else if (row[0] == "false") {
      out.gold.emplace_back(std::nullopt);
    } else {
      throw ValidationError(where + "has_gold_label must be true or false");
    }
    std::vector<float> logits;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& cell = row[j + 2];
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        throw ValidationError(where + "bad logit '" + cell + "'");
      }
      logits.push_back(static_cast<float>(v));
    }
    out.logits.push_back(std::move(logits));
  }
  return out;
}

template ad::Var<float> distill_loss(const ad::Var<float>&, std::span<const SoftLabelRecord>, bool);
template ad::Var<double> distill_loss(const ad::Var<double>&, std::span<const SoftLabelRecord>,
                                      bool);

}  // namespace protoassign
