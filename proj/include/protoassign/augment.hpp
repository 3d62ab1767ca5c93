#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoassign/core_data.hpp"
#include "protoassign/text.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

struct AugmentationPolicy {
  double mask_threshold = 0.1;
  double pos_threshold = 0.2;
  std::vector<std::size_t> ngram_range = {1, 2, 3};
  std::size_t n_aug = 30;
  std::size_t class_cap = 12000;
  std::size_t max_attempts_factor = 10;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);
};

enum class AugmentBranch { Mask, PosReplace, NgramMask };
std::string_view augment_branch_name(AugmentBranch branch);

/// P < mask_threshold -> Mask, P < pos_threshold -> PosReplace, else NgramMask.
AugmentBranch branch_for(double p, const AugmentationPolicy& policy);
/// One P ~ U[0,1) from `rng`, mapped through branch_for.
AugmentBranch draw_branch(const AugmentationPolicy& policy, Rng& rng);

struct AugmentedInstance {
  ExamRecord record;  // free text altered, no label
  std::size_t origin_id = 0;
  std::string text;  // templated
  AugmentBranch branch = AugmentBranch::Mask;
  bool has_gold_label = false;
};

/// One variant of `record`. Exactly one branch applies per call, chosen by
/// P (drawn from `rng` unless `forced_p` is given). Words are the
/// whitespace-separated words of history followed by diagnosis; fields are
/// re-joined with single spaces. Throws ValidationError "not augmentable"
/// when both fields are empty.
AugmentedInstance augment_instance(const ExamRecord& record, std::size_t origin_id,
                                   const AugmentationPolicy& policy, const PosIndex& pos_index,
                                   Rng& rng, std::optional<double> forced_p = std::nullopt);

/// Variants for every labeled record in `train`, distinct from their origin
/// and from each other, with originals + variants per class <= class_cap.
/// The per-class variant budget is spread over that class's origins in a
/// seeded round-robin; each origin draws from its own stream. Output is
/// ordered by origin id, then variant index.
std::vector<AugmentedInstance> augment_dataset(const std::vector<ExamRecord>& train,
                                               const AugmentationPolicy& policy,
                                               const PosIndex& pos_index);

/// Dataset file with two extra columns: origin_id and has_gold_label.
void save_augmented(const std::string& path, const std::vector<AugmentedInstance>& instances,
                    DatasetFormat format);
std::vector<AugmentedInstance> load_augmented(const std::string& path, DatasetFormat format);

}  // namespace protoassign
