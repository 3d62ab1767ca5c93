#include "protoassign/sampling.hpp"

#include <algorithm>
#include <map>

#include "json.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

using nlohmann::json;

std::vector<std::size_t> FoldPlan::train_indices(std::size_t fold) const {
  if (fold >= folds.size()) throw ValidationError("fold " + std::to_string(fold) + " out of range");
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

const std::vector<std::size_t>& FoldPlan::test_indices(std::size_t fold) const {
  if (fold >= folds.size()) throw ValidationError("fold " + std::to_string(fold) + " out of range");
  return folds[fold];
}

std::string FoldPlan::to_json() const {
  json j{{"format", "protoassign-folds"}, {"version", 1}, {"k", k}, {"seed", seed}, {"folds", folds}};
  return j.dump() + "\n";
}

FoldPlan FoldPlan::from_json(std::string_view text) {
  FoldPlan p;
  try {
    auto j = json::parse(text);
    if (j.value("format", "") != "protoassign-folds") {
      throw ValidationError("fold plan: not a fold plan file");
    }
    p.k = j.at("k").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.folds = j.at("folds").get<std::vector<std::vector<std::size_t>>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fold plan: ") + e.what());
  }
  if (p.folds.size() != p.k) throw ValidationError("fold plan: fold count does not match k");
  std::vector<std::size_t> all;
  for (const auto& f : p.folds) all.insert(all.end(), f.begin(), f.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] != i) throw ValidationError("fold plan: folds do not partition 0..n-1");
  }
  return p;
}

namespace {

std::map<int, std::vector<std::size_t>> members_by_class(const std::vector<int>& labels) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

// Class ids ordered by descending count, ties to the lower id.
std::vector<int> ranked(const std::map<int, std::vector<std::size_t>>& by_class) {
  std::vector<int> ids;
  for (const auto& [c, m] : by_class) ids.push_back(c);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return by_class.at(a).size() > by_class.at(b).size();
  });
  return ids;
}

}  // namespace

FoldPlan stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
                          const std::vector<std::string>& class_names) {
  if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2");
  const auto by_class = members_by_class(labels);
  for (const auto& [c, members] : by_class) {
    if (members.size() < k) {
      const std::string name = c >= 0 && static_cast<std::size_t>(c) < class_names.size()
                                   ? class_names[static_cast<std::size_t>(c)]
                                   : std::to_string(c);
      throw ValidationError("stratified_kfold: class '" + name + "' has " +
                            std::to_string(members.size()) + " records, fewer than k=" +
                            std::to_string(k));
    }
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  std::size_t next = 0;
  for (const auto& [c, members] : by_class) {
    auto shuffled = members;
    Rng rng(derive_seed(derive_seed(seed, "kfold"), static_cast<std::uint64_t>(c)));
    rng.shuffle(shuffled);
    for (auto idx : shuffled) {
      plan.folds[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::vector<std::size_t> undersample_majorities(const std::vector<int>& labels,
                                                std::uint64_t seed) {
  const auto by_class = members_by_class(labels);
  if (by_class.size() < 3) throw ValidationError("undersample: need at least 3 classes");
  const auto order = ranked(by_class);
  const std::size_t target = by_class.at(order[2]).size();
  std::vector<std::size_t> keep;
  for (const auto& [c, members] : by_class) {
    if (c == order[0] || c == order[1]) {
      auto shuffled = members;
      Rng rng(derive_seed(derive_seed(seed, "undersample"), static_cast<std::uint64_t>(c)));
      rng.shuffle(shuffled);
      keep.insert(keep.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(target));
    } else {
      keep.insert(keep.end(), members.begin(), members.end());
    }
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

std::vector<std::size_t> oversample_minorities(const std::vector<int>& labels,
                                               std::uint64_t seed) {
  const auto by_class = members_by_class(labels);
  if (by_class.size() < 2) throw ValidationError("oversample: need at least 2 classes");
  const auto order = ranked(by_class);
  const std::size_t target = by_class.at(order[1]).size();
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  for (const auto& [c, members] : by_class) {
    if (members.size() >= target) continue;
    Rng rng(derive_seed(derive_seed(seed, "oversample"), static_cast<std::uint64_t>(c)));
    for (std::size_t n = members.size(); n < target; ++n) {
      out.push_back(members[rng.uniform_int(members.size())]);
    }
  }
  return out;
}

std::string_view resample_mode_id(ResampleMode mode) {
  switch (mode) {
    case ResampleMode::None: return "none";
    case ResampleMode::Undersample: return "undersample";
    case ResampleMode::Oversample: return "oversample";
  }
  return "?";
}

ResampleMode parse_resample_mode(std::string_view id) {
  if (id == "none") return ResampleMode::None;
  if (id == "undersample") return ResampleMode::Undersample;
  if (id == "oversample") return ResampleMode::Oversample;
  throw ValidationError("unknown resampling mode '" + std::string(id) +
                        "' (expected none, undersample or oversample)");
}

std::vector<std::size_t> resample(const std::vector<int>& labels, ResampleMode mode,
                                  std::uint64_t seed) {
  switch (mode) {
    case ResampleMode::Undersample: return undersample_majorities(labels, seed);
    case ResampleMode::Oversample: return oversample_minorities(labels, seed);
    case ResampleMode::None: break;
  }
  std::vector<std::size_t> all(labels.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

}  // namespace protoassign
