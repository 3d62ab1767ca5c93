#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protoassign/core_data.hpp"
#include "protoassign/encoder.hpp"

namespace protoassign {

struct SoftLabelRecord {
  TokenSequence input;
  std::vector<float> teacher_logits;
  std::optional<int> gold;
};

/// Teacher logits for every input; `gold[i]` is carried through unchanged.
std::vector<SoftLabelRecord> generate_soft_labels(const EncoderClassifier<float>& teacher,
                                                  std::span<const TokenSequence> inputs,
                                                  std::span<const std::optional<int>> gold,
                                                  std::size_t batch_size = 48);

/// Fraction of gold-labeled records in the batch.
double distill_alpha(std::span<const SoftLabelRecord> batch);

/// alpha * meanCE(gold subset) + (1 - alpha) * meanMSE(student vs teacher
/// logits). The MSE runs over the records without gold labels, or over the
/// whole batch when `mse_on_gold` is set. An empty subset contributes 0.
template <typename T>
ad::Var<T> distill_loss(const ad::Var<T>& student_logits, std::span<const SoftLabelRecord> batch,
                        bool mse_on_gold = false);

struct DistillOptions {
  bool mse_on_gold = false;
  /// Encoder weights the student starts from (the teacher's pretraining
  /// lineage). Null means a fresh random encoder drawn from the student seed.
  const ParamSet<float>* init_encoder = nullptr;
};

/// Student with the teacher's architecture: initial encoder per
/// `options.init_encoder`, a head drawn from `student_seed`, trained on
/// shuffled mixed batches of originals (gold) and augmented inputs (teacher
/// logits only) with distill_loss. `train.seed` drives order and dropout.
EncoderClassifier<float> train_student(const EncoderClassifier<float>& teacher,
                                       std::span<const TokenSequence> originals,
                                       std::span<const int> original_labels,
                                       std::span<const TokenSequence> augmented,
                                       const TrainConfig& train, std::uint64_t student_seed,
                                       const DistillOptions& options = {},
                                       LossCurve* curve = nullptr);

struct BanGeneration {
  EncoderClassifier<float> student;
  LossCurve curve;
  std::string soft_label_hash;  // of the teacher logits used for this generation
};

/// Born-again loop: generation g trains a student from the current teacher,
/// then that student becomes the teacher. Seeds derive from `seed` and g.
std::vector<BanGeneration> ban_loop(const EncoderClassifier<float>& initial_teacher,
                                    std::span<const TokenSequence> originals,
                                    std::span<const int> original_labels,
                                    std::span<const TokenSequence> augmented,
                                    std::size_t generations, const TrainConfig& train,
                                    std::uint64_t seed, const DistillOptions& options = {});

/// Hex digest over every record's logits and gold label.
std::string soft_label_hash(std::span<const SoftLabelRecord> records);

/// Dataset rows plus has_gold_label, gold_label and logit_0..logit_{K-1}.
struct SoftLabelTable {
  std::vector<ExamRecord> records;
  std::vector<std::vector<float>> logits;
  std::vector<std::optional<int>> gold;
};
void save_soft_labels(const std::string& path, const SoftLabelTable& table, DatasetFormat format);
SoftLabelTable load_soft_labels(const std::string& path, DatasetFormat format);

}  // namespace protoassign
