#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "protoassign/core_data.hpp"

namespace protoassign {

/// Zipf class-size profile: count(rank r) proportional to r^-exponent.
struct ZipfProfile {
  std::size_t n_classes = 0;
  double exponent = 1.0;
  std::size_t total = 0;
};

/// Word-count target for one free-text field, over all records including
/// empty ones.
struct WordCountTarget {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t max = 0;
};

struct ClassTerms {
  std::string name;
  std::vector<std::string> history_terms;
  std::vector<std::string> diagnosis_terms;
  std::vector<std::string> markers;
  std::vector<std::string> exam_codes;
  std::optional<std::pair<int, int>> age_range;  // inclusive
};

struct SynthConfig {
  /// Explicit per-class counts; when empty, `zipf` decides.
  std::vector<std::size_t> explicit_counts;
  ZipfProfile zipf;
  std::vector<ClassTerms> classes;

  /// Probability that each class signal (marker words, characteristic exam
  /// code, characteristic age range) is present, drawn independently.
  double marker_strength = 0.8;
  double history_missing_rate = 0.136;
  double diagnosis_missing_rate = 0.0001;
  WordCountTarget history{8.0, 6.57, 47};
  WordCountTarget diagnosis{10.0, 8.6, 108};

  /// Exam codes and names used when a record carries no class signal.
  std::vector<std::pair<std::string, std::string>> exam_catalog;
  double age_mean = 58.0;
  double age_sd = 17.0;
  int age_min = 18;
  int age_max = 99;

  std::uint64_t seed = 7;
};

/// Throws ValidationError on negative/invalid probabilities, zipf exponent
/// <= 0, or class/term-pool shape mismatches.
void validate(const SynthConfig& config);

std::vector<std::size_t> class_count_profile(const SynthConfig& config);

/// Group names and counts of all 27 published protocol groups, including the
/// two below the exclusion threshold (last two entries).
const std::vector<std::pair<std::string, std::size_t>>& uw_ct_body_groups();

/// The "uw-ct-body" built-in profile: the 25 retained protocol groups with
/// their published counts multiplied by `scale` (rounded, floored at
/// `min_count`). Two confusable pairs share marker words: the liver 2/3-phase
/// pair, and the IVP pair, which differs only in age range.
SynthConfig uw_ct_body_config(double scale = 1.0, std::size_t min_count = 0,
                              std::uint64_t seed = 7);

/// Named built-in profiles; currently only "uw-ct-body".
SynthConfig builtin_profile(const std::string& name, double scale = 1.0,
                            std::size_t min_count = 0, std::uint64_t seed = 7);

/// Indices (into uw_ct_body_config().classes) of the designated confusable
/// pairs, majority class first.
std::vector<std::pair<std::size_t, std::size_t>> uw_ct_body_confusable_pairs();

/// Records grouped by class in profile order; `protocol_group` holds the class
/// name and `label` stays unset.
std::vector<ExamRecord> generate_dataset(const SynthConfig& config);

/// Normal (mean, sd) whose draws, rounded and clamped to [lo, hi], have the
/// requested mean and standard deviation.
std::pair<double, double> calibrate_clipped_normal(double target_mean, double target_sd,
                                                   std::size_t lo, std::size_t hi);

}  // namespace protoassign
