#include "protoassign/augment.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

namespace protoassign {

using nlohmann::json;

void AugmentationPolicy::validate() const {
  if (!(mask_threshold >= 0.0 && mask_threshold <= pos_threshold && pos_threshold <= 1.0)) {
    throw ValidationError("augmentation: need 0 <= mask_threshold <= pos_threshold <= 1");
  }
  if (ngram_range.empty()) throw ValidationError("augmentation: ngram_range is empty");
  for (auto n : ngram_range) {
    if (n == 0) throw ValidationError("augmentation: ngram sizes must be >= 1");
  }
  if (max_attempts_factor == 0) throw ValidationError("augmentation: max_attempts_factor must be >= 1");
}

json AugmentationPolicy::to_json() const {
  return json{{"mask_threshold", mask_threshold},
              {"pos_threshold", pos_threshold},
              {"ngram_range", ngram_range},
              {"n_aug", n_aug},
              {"class_cap", class_cap},
              {"max_attempts_factor", max_attempts_factor},
              {"seed", seed}};
}

AugmentationPolicy AugmentationPolicy::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("augmentation: expected a JSON object");
  AugmentationPolicy p;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "mask_threshold") p.mask_threshold = v.get<double>();
      else if (k == "pos_threshold") p.pos_threshold = v.get<double>();
      else if (k == "ngram_range") p.ngram_range = v.get<std::vector<std::size_t>>();
      else if (k == "n_aug") p.n_aug = v.get<std::size_t>();
      else if (k == "class_cap") p.class_cap = v.get<std::size_t>();
      else if (k == "max_attempts_factor") p.max_attempts_factor = v.get<std::size_t>();
      else if (k == "seed") p.seed = v.get<std::uint64_t>();
      else throw ValidationError("augmentation: unknown key '" + k + "'");
    } catch (const json::exception&) {
      throw ValidationError("augmentation: bad value for '" + k + "'");
    }
  }
  return p;
}

std::string_view augment_branch_name(AugmentBranch branch) {
  switch (branch) {
    case AugmentBranch::Mask: return "mask";
    case AugmentBranch::PosReplace: return "pos_replace";
    case AugmentBranch::NgramMask: return "ngram_mask";
  }
  return "?";
}

AugmentBranch branch_for(double p, const AugmentationPolicy& policy) {
  if (p < policy.mask_threshold) return AugmentBranch::Mask;
  if (p < policy.pos_threshold) return AugmentBranch::PosReplace;
  return AugmentBranch::NgramMask;
}

AugmentBranch draw_branch(const AugmentationPolicy& policy, Rng& rng) {
  return branch_for(rng.uniform(), policy);
}

AugmentedInstance augment_instance(const ExamRecord& record, std::size_t origin_id,
                                   const AugmentationPolicy& policy, const PosIndex& pos_index,
                                   Rng& rng, std::optional<double> forced_p) {
  std::vector<std::string> fields[2] = {split_whitespace(record.history),
                                        split_whitespace(record.diagnosis)};
  const std::size_t total = fields[0].size() + fields[1].size();
  if (total == 0) throw ValidationError("not augmentable: record has no history/diagnosis words");

  const double p = forced_p ? *forced_p : rng.uniform();
  const AugmentBranch branch = branch_for(p, policy);
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(total));
  const std::size_t f = pick < fields[0].size() ? 0 : 1;
  auto& words = fields[f];
  if (f == 1) pick -= fields[0].size();
  const std::string mask(kMaskToken);

  switch (branch) {
    case AugmentBranch::Mask:
      words[pick] = mask;
      break;
    case AugmentBranch::PosReplace: {
      const auto& same = pos_index.words_with(pos_tag(words[pick], pos_index));
      std::vector<const std::string*> others;
      for (const auto& w : same) {
        if (w != words[pick]) others.push_back(&w);
      }
      words[pick] = others.empty() ? mask : *others[rng.uniform_int(others.size())];
      break;
    }
    case AugmentBranch::NgramMask: {
      std::size_t n = policy.ngram_range[rng.uniform_int(policy.ngram_range.size())];
      n = std::min(n, words.size());
      const std::size_t start = static_cast<std::size_t>(rng.uniform_int(words.size() - n + 1));
      words.erase(words.begin() + static_cast<std::ptrdiff_t>(start),
                  words.begin() + static_cast<std::ptrdiff_t>(start + n));
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(start), mask);
      break;
    }
  }

  AugmentedInstance out;
  out.record = record;
  out.record.history = join(fields[0], " ");
  out.record.diagnosis = join(fields[1], " ");
  out.record.label.reset();
  out.record.protocol_group.reset();
  out.origin_id = origin_id;
  out.text = render_template(out.record, origin_id).text;
  out.branch = branch;
  return out;
}

std::vector<AugmentedInstance> augment_dataset(const std::vector<ExamRecord>& train,
                                               const AugmentationPolicy& policy,
                                               const PosIndex& pos_index) {
  policy.validate();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].label) {
      throw ValidationError("augment_dataset: record " + std::to_string(i) + " has no label");
    }
    by_class[*train[i].label].push_back(i);
  }
  std::vector<std::vector<AugmentedInstance>> per_origin(train.size());
  if (policy.n_aug == 0) return {};

  for (const auto& [label, members] : by_class) {
    const std::size_t originals = members.size();
    std::size_t budget = policy.class_cap > originals ? policy.class_cap - originals : 0;
    if (budget == 0) continue;

    struct Origin {
      std::size_t id;
      Rng rng;
      std::unordered_set<std::string> seen;
      std::size_t attempts = 0;
      std::size_t made = 0;
    };
    std::vector<Origin> origins;
    for (auto id : members) {
      if (split_whitespace(train[id].history).empty() &&
          split_whitespace(train[id].diagnosis).empty()) {
        continue;
      }
      Origin o{id, Rng(derive_seed(derive_seed(policy.seed, "augment_origin"), id)), {}, 0, 0};
      o.seen.insert(render_template(train[id], id).text);
      origins.push_back(std::move(o));
    }
    Rng order_rng(derive_seed(derive_seed(policy.seed, "augment_class"),
                              static_cast<std::uint64_t>(label)));
    std::vector<std::size_t> order(origins.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    const std::size_t max_attempts = policy.max_attempts_factor * policy.n_aug;
    bool progress = true;
    while (budget > 0 && progress) {
      progress = false;
      for (auto oi : order) {
        if (budget == 0) break;
        auto& o = origins[oi];
        while (o.made < policy.n_aug && o.attempts < max_attempts) {
          ++o.attempts;
          auto v = augment_instance(train[o.id], o.id, policy, pos_index, o.rng);
          if (!o.seen.insert(v.text).second) continue;
          per_origin[o.id].push_back(std::move(v));
          ++o.made;
          --budget;
          progress = true;
          break;
        }
      }
    }
  }

  std::vector<AugmentedInstance> out;
  for (auto& variants : per_origin) {
    for (auto& v : variants) out.push_back(std::move(v));
  }
  return out;
}

void save_augmented(const std::string& path, const std::vector<AugmentedInstance>& instances,
                    DatasetFormat format) {
  DatasetTable table;
  table.extra_columns = {"origin_id", "has_gold_label"};
  for (const auto& inst : instances) {
    table.records.push_back(inst.record);
    table.extras.push_back(
        {std::to_string(inst.origin_id), inst.has_gold_label ? "true" : "false"});
  }
  save_dataset_table(path, table, format);
}

std::vector<AugmentedInstance> load_augmented(const std::string& path, DatasetFormat format) {
  auto table = load_dataset_table(path, format, {"origin_id", "has_gold_label"});
  if (table.extra_columns.size() != 2) {
    throw ValidationError("augmented dataset: origin_id and has_gold_label columns are required");
  }
  const std::size_t origin_col = table.extra_columns[0] == "origin_id" ? 0 : 1;
  std::vector<AugmentedInstance> out;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    AugmentedInstance inst;
    inst.record = table.records[i];
    const auto& origin = table.extras[i][origin_col];
    try {
      std::size_t used = 0;
      inst.origin_id = std::stoull(origin, &used);
      if (used != origin.size()) throw std::invalid_argument(origin);
    } catch (const std::exception&) {
      throw ValidationError("augmented dataset: row " + std::to_string(i + 1) +
                            ": bad origin_id '" + origin + "'");
    }
    const auto& gold = table.extras[i][1 - origin_col];
    if (gold != "true" && gold != "false") {
      throw ValidationError("augmented dataset: row " + std::to_string(i + 1) +
                            ": has_gold_label must be true or false");
    }
    inst.has_gold_label = gold == "true";
    inst.text = render_template(inst.record, inst.origin_id).text;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace protoassign
