#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace protoassign {

/// k disjoint folds of record indices.
struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;  // each sorted ascending

  /// Indices of every fold except `fold`, ascending.
  std::vector<std::size_t> train_indices(std::size_t fold) const;
  const std::vector<std::size_t>& test_indices(std::size_t fold) const;

  std::string to_json() const;
  static FoldPlan from_json(std::string_view text);
};

/// Per class, shuffles the members with a seeded stream and deals them
/// round-robin; each class starts dealing at the fold after where the
/// previous class stopped so fold sizes stay balanced. Throws when a class
/// has fewer than k members, naming the class.
FoldPlan stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
                          const std::vector<std::string>& class_names = {});

/// Cuts the two largest classes (by count in `labels`) down to the count of
/// the third largest by seeded uniform removal. Returns the kept positions
/// into `labels`, ascending. Ties in rank go to the lower class id.
std::vector<std::size_t> undersample_majorities(const std::vector<int>& labels,
                                                std::uint64_t seed);

/// Brings every class below the second-largest count up to it by sampling
/// its own members with replacement. Returns positions into `labels`: all
/// originals in order, followed by the replicated ones.
std::vector<std::size_t> oversample_minorities(const std::vector<int>& labels, std::uint64_t seed);

enum class ResampleMode { None, Undersample, Oversample };
std::string_view resample_mode_id(ResampleMode mode);
ResampleMode parse_resample_mode(std::string_view id);
std::vector<std::size_t> resample(const std::vector<int>& labels, ResampleMode mode,
                                  std::uint64_t seed);

}  // namespace protoassign
