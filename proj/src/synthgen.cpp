#include "protoassign/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "protoassign/util.hpp"

namespace protoassign {

namespace {

// Shared background vocabulary. Every class draws from the same pool, so
// without markers the classes are exchangeable.
const std::vector<std::string> kHistoryBackground = {
    "pain",      "abdominal", "history",   "of",         "with",      "and",
    "for",       "eval",      "follow",    "up",         "fever",     "nausea",
    "vomiting",  "weight",    "loss",      "chronic",    "acute",     "worsening",
    "patient",   "prior",     "surgery",   "noted",      "on",        "the",
    "in",        "s/p",       "r/o",       "concern",    "known",     "elevated",
    "labs",      "wbc",       "lft",       "abnormal",   "recent",    "admission",
    "ed",        "visit",     "hx",        "dm",         "htn",       "ckd",
    "copd",      "smoker",    "anemia",    "diarrhea",   "constipation", "bloating",
    "tenderness", "left",     "right",     "lower",      "upper",     "quadrant",
    "flank",     "back",      "chest",     "shortness",  "breath",    "cough",
    "fatigue",   "chills",    "jaundice",  "bleeding",   "last",      "level",
    "normal",    "stable",    "new",       "onset",      "since",     "week",
    "months",    "days",      "year",      "old",        "male",      "female",
    "presents",  "complaint", "ongoing",   "persistent", "intermittent", "severe",
};

const std::vector<std::string> kDiagnosisBackground = {
    "abdomen",   "pelvis",    "w/contrast", "contrast",  "evaluate",  "eval",
    "r/o",       "rule",      "out",        "for",       "with",      "and",
    "of",        "the",       "f/u",        "follow",    "up",        "pain",
    "abscess",   "obstruction", "mass",     "lesion",    "nodule",    "cyst",
    "fluid",     "collection", "inflammation", "infection", "process", "etiology",
    "unclear",   "suspected", "possible",   "assess",    "interval",  "change",
    "size",      "findings",  "seen",       "on",        "prior",     "imaging",
    "ultrasound", "ct",       "mri",        "recommended", "further", "workup",
    "abnormal",  "labs",      "history",    "known",     "status",    "post",
    "recurrent", "new",       "enlarging",  "small",     "large",     "bowel",
    "colon",     "stomach",   "spleen",     "bladder",   "uterus",    "ovary",
    "appendix",  "gallbladder", "duct",     "vessel",    "aorta",     "node",
    "wall",      "thickening", "free",      "air",       "hematoma",  "trauma",
    "injury",    "fracture",  "screening",  "surveillance", "baseline", "repeat",
};

struct GroupProfile {
  const char* code;
  std::vector<std::string> markers;
};

// Per-group characteristic exam code and marker words, in Table-3 order.
const std::vector<GroupProfile> kGroupProfiles = {
    {"CCHABPWC", {"staging", "lymphoma", "metastatic"}},
    {"CABPELWC", {"appendicitis", "diverticulitis", "colitis"}},
    {"CCHABPWC", {"sepsis", "embolism", "empyema"}},
    {"CABPELWC", {"crohns", "fistula", "peritonitis"}},
    {"CRENAL", {"renal", "kidney", "angiomyolipoma"}},
    {"CLIVER", {"HCC", "cirrhosis", "transplant"}},
    {"CABPELNC", {"nephrolithiasis", "stone", "calculus"}},
    {"CURO", {"hematuria", "urothelial", "ureter"}},
    {"CCHABPWO", {"perforation", "leak", "gastrografin"}},
    {"CCHABPNC", {"allergy", "anaphylaxis", "premedication"}},
    {"CENTERO", {"hernia", "CREATININE", "enterography"}},
    {"CLIVER", {"adenoma", "hemangioma", "FNH"}},
    {"CCHABDWC", {"esophageal", "gastric", "carcinoma"}},
    {"CURO", {"hematuria", "urothelial", "ureter"}},
    {"CPANC", {"pancreatic", "IPMN", "whipple"}},
    {"CABDNC", {"calcification", "hemorrhage", "dialysis"}},
    {"CCHABDWC", {"lung", "adrenal", "pheochromocytoma"}},
    {"CPELWC", {"pelvic", "prostate", "cervical"}},
    {"CABDWC", {"gastrostomy", "feeding", "tube"}},
    {"CPANC", {"pancreatitis", "necrosis", "pseudocyst"}},
    {"CABPELWO", {"ileus", "sbo", "adhesions"}},
    {"CCHABDNC", {"aneurysm", "endoleak", "EVAR"}},
    {"CPELCYS", {"cystogram", "bladder-rupture", "urethral"}},
    {"CLIVER", {"HCC", "transplant", "PNET"}},
    {"CPELWC", {"rectal", "anal", "perirectal"}},
};

const std::vector<std::pair<std::string, std::string>> kExamCatalog = {
    {"CABDWC", "CT ABDOMEN W CONTRAST"},
    {"CABDNC", "CT ABDOMEN WO CONTRAST"},
    {"CABPELWC", "CT ABDOMEN PELVIS W CONTRAST"},
    {"CABPELNC", "CT ABDOMEN PELVIS WO CONTRAST"},
    {"CABPELWO", "CT ABDOMEN PELVIS W ORAL CONTRAST"},
    {"CCHABPWC", "CT CHEST ABDOMEN PELVIS W CONTRAST"},
    {"CCHABPNC", "CT CHEST ABDOMEN PELVIS WO CONTRAST"},
    {"CCHABPWO", "CT CHEST ABDOMEN PELVIS W ORAL CONTRAST"},
    {"CCHABDWC", "CT CHEST ABDOMEN W CONTRAST"},
    {"CCHABDNC", "CT CHEST ABDOMEN WO CONTRAST"},
    {"CPELWC", "CT PELVIS W CONTRAST"},
    {"CPELCYS", "CT PELVIS CYSTOGRAM"},
    {"CRENAL", "CT RENAL MASS PROTOCOL"},
    {"CLIVER", "CT LIVER MULTIPHASE"},
    {"CURO", "CT UROGRAM"},
    {"CPANC", "CT PANCREAS MULTIPHASE"},
    {"CENTERO", "CT ENTEROGRAPHY"},
};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Mean and sd of clamp(round(N(mu, sigma)), lo, hi).
std::pair<double, double> clipped_moments(double mu, double sigma, std::size_t lo,
                                          std::size_t hi) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) {
    const double kd = static_cast<double>(k);
    const double upper = k == hi ? 1.0 : normal_cdf((kd + 0.5 - mu) / sigma);
    const double lower = k == lo ? 0.0 : normal_cdf((kd - 0.5 - mu) / sigma);
    const double p = upper - lower;
    m1 += p * kd;
    m2 += p * kd * kd;
  }
  return {m1, std::sqrt(std::max(0.0, m2 - m1 * m1))};
}

std::size_t draw_count(Rng& rng, double mu, double sigma, std::size_t lo, std::size_t hi) {
  const double x = std::round(rng.normal(mu, sigma));
  const double clamped = std::clamp(x, static_cast<double>(lo), static_cast<double>(hi));
  return static_cast<std::size_t>(clamped);
}

// Zipf-weighted draw from a pool: weight of the i-th term is 1/(i+1).
class PoolSampler {
 public:
  explicit PoolSampler(const std::vector<std::string>& pool) : pool_(&pool) {
    cumulative_.reserve(pool.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      acc += 1.0 / static_cast<double>(i + 1);
      cumulative_.push_back(acc);
    }
  }
  const std::string& draw(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
    return (*pool_)[std::min(idx, pool_->size() - 1)];
  }

 private:
  const std::vector<std::string>* pool_;
  std::vector<double> cumulative_;
};

std::string exam_name_for(const SynthConfig& config, const std::string& code) {
  for (const auto& [c, name] : config.exam_catalog) {
    if (c == code) return name;
  }
  return code;
}

}  // namespace

std::pair<double, double> calibrate_clipped_normal(double target_mean, double target_sd,
                                                   std::size_t lo, std::size_t hi) {
  double mu = target_mean;
  double sigma = std::max(target_sd, 1e-3);
  for (int iter = 0; iter < 500; ++iter) {
    auto [m, s] = clipped_moments(mu, sigma, lo, hi);
    const double dm = target_mean - m;
    mu += dm;
    if (s > 1e-9) sigma = std::max(1e-3, sigma * target_sd / s);
    if (std::abs(dm) < 1e-10 && std::abs(s - target_sd) < 1e-10) break;
  }
  return {mu, sigma};
}

void validate(const SynthConfig& config) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError(std::string("synth config: ") + name + " must be in [0,1]");
    }
  };
  prob(config.marker_strength, "marker_strength");
  prob(config.history_missing_rate, "history_missing_rate");
  prob(config.diagnosis_missing_rate, "diagnosis_missing_rate");
  if (config.explicit_counts.empty() && !(config.zipf.exponent > 0.0)) {
    throw ValidationError("synth config: zipf exponent must be > 0");
  }
  const std::size_t k =
      config.explicit_counts.empty() ? config.zipf.n_classes : config.explicit_counts.size();
  if (config.classes.size() != k) {
    throw ValidationError("synth config: " + std::to_string(k) + " classes in profile but " +
                          std::to_string(config.classes.size()) + " term sets");
  }
  if (config.age_min < 0 || config.age_max < config.age_min) {
    throw ValidationError("synth config: invalid age bounds");
  }
}

std::vector<std::size_t> class_count_profile(const SynthConfig& config) {
  if (!config.explicit_counts.empty()) return config.explicit_counts;
  const auto& z = config.zipf;
  if (z.n_classes == 0) return {};
  if (z.total == 0) throw ValidationError("class_count_profile: total N = 0 with n_classes > 0");
  if (!(z.exponent > 0.0)) throw ValidationError("class_count_profile: zipf exponent must be > 0");
  double norm = 0.0;
  for (std::size_t r = 1; r <= z.n_classes; ++r) norm += std::pow(static_cast<double>(r), -z.exponent);
  std::vector<std::size_t> counts(z.n_classes, 0);
  std::size_t assigned = 0;
  for (std::size_t r = 2; r <= z.n_classes; ++r) {
    const double share = static_cast<double>(z.total) *
                         std::pow(static_cast<double>(r), -z.exponent) / norm;
    counts[r - 1] = static_cast<std::size_t>(std::llround(share));
    assigned += counts[r - 1];
  }
  if (assigned > z.total) throw ValidationError("class_count_profile: rounding overflow");
  counts[0] = z.total - assigned;
  return counts;
}

const std::vector<std::pair<std::string, std::size_t>>& uw_ct_body_groups() {
  static const std::vector<std::pair<std::string, std::size_t>> groups = {
      {"CT CAP IV and Oral", 11911},
      {"CT Abdomen Pelvis w IV Only", 8057},
      {"CT CAP IV Only", 3351},
      {"CT Abdomen Pelvis w IV and Oral", 2941},
      {"CT Renal Mass", 2036},
      {"CT Liver 3 Phase", 1652},
      {"CT Abdomen Pelvis No Contrast", 931},
      {"CT IVP 50 yrs +", 854},
      {"CT CAP Oral Only", 531},
      {"CT CAP No Contrast", 336},
      {"CT Abd Pel Enterography", 297},
      {"CT Liver 4 Phase", 252},
      {"CT CA IV Only", 226},
      {"CT IVP < 50", 220},
      {"CT Pancreas Mass 3 Phase", 202},
      {"CT Abdomen No Contrast", 195},
      {"CT CA IV and Oral", 194},
      {"CT Pelvis IV Only", 192},
      {"CT Abdomen IV and Oral", 173},
      {"CT Pancreas Mass 2 Phase", 143},
      {"CT Abdomen Pelvis w Oral only", 132},
      {"CT CA No Contrast", 75},
      {"CT Pelvis Cystogram", 68},
      {"CT Liver 2 Phase", 51},
      {"CT Pelvis IV and Oral", 42},
      {"CT CA Oral Only", 15},
      {"CT Abdomen IV Only", 8},
  };
  return groups;
}

std::vector<std::pair<std::size_t, std::size_t>> uw_ct_body_confusable_pairs() {
  return {{5, 23}, {7, 13}};
}

SynthConfig uw_ct_body_config(double scale, std::size_t min_count, std::uint64_t seed) {
  SynthConfig config;
  config.seed = seed;
  config.exam_catalog = kExamCatalog;
  const auto& groups = uw_ct_body_groups();
  for (std::size_t i = 0; i < kGroupProfiles.size(); ++i) {
    const auto& [name, count] = groups[i];
    std::size_t scaled = scale == 1.0
                             ? count
                             : static_cast<std::size_t>(std::llround(static_cast<double>(count) * scale));
    config.explicit_counts.push_back(std::max(scaled, min_count));
    ClassTerms terms;
    terms.name = name;
    terms.history_terms = kHistoryBackground;
    terms.diagnosis_terms = kDiagnosisBackground;
    terms.markers = kGroupProfiles[i].markers;
    terms.exam_codes = {kGroupProfiles[i].code};
    config.classes.push_back(std::move(terms));
  }
  // The IVP pair is separable only through age.
  config.classes[7].age_range = std::make_pair(50, 95);
  config.classes[13].age_range = std::make_pair(18, 49);
  return config;
}

SynthConfig builtin_profile(const std::string& name, double scale, std::size_t min_count,
                            std::uint64_t seed) {
  if (name == "uw-ct-body") return uw_ct_body_config(scale, min_count, seed);
  throw ValidationError("unknown synth profile: '" + name + "'");
}

std::vector<ExamRecord> generate_dataset(const SynthConfig& config) {
  validate(config);
  const auto counts = class_count_profile(config);
  for (const auto& c : config.classes) {
    if (c.history_terms.empty() || c.diagnosis_terms.empty()) {
      throw ValidationError("generate_dataset: empty term pool for class '" + c.name + "'");
    }
  }
  if (config.exam_catalog.empty()) throw ValidationError("generate_dataset: empty exam catalog");

  // Free-text lengths: non-empty records follow a calibrated clipped normal
  // on [1, max]; emptiness is a separate Bernoulli draw. The non-empty target
  // moments are derived so the overall moments (empties included) hit the
  // configured values.
  auto nonempty_params = [](const WordCountTarget& t, double missing) {
    const double keep = 1.0 - missing;
    const double mean1 = t.mean / keep;
    const double var1 = (t.sd * t.sd + t.mean * t.mean) / keep - mean1 * mean1;
    return calibrate_clipped_normal(mean1, std::sqrt(std::max(var1, 1e-6)), 1, t.max);
  };
  const auto [h_mu, h_sigma] = nonempty_params(config.history, config.history_missing_rate);
  const auto [d_mu, d_sigma] = nonempty_params(config.diagnosis, config.diagnosis_missing_rate);

  Rng rng(config.seed);
  std::vector<ExamRecord> out;
  out.reserve(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto& cls = config.classes[c];
    const PoolSampler hist_pool(cls.history_terms);
    const PoolSampler diag_pool(cls.diagnosis_terms);
    for (std::size_t n = 0; n < counts[c]; ++n) {
      std::size_t n_hist = draw_count(rng, h_mu, h_sigma, 1, config.history.max);
      std::size_t n_diag = draw_count(rng, d_mu, d_sigma, 1, config.diagnosis.max);
      if (rng.bernoulli(config.history_missing_rate)) n_hist = 0;
      if (rng.bernoulli(config.diagnosis_missing_rate)) n_diag = 0;

      std::vector<std::string> hist, diag;
      for (std::size_t i = 0; i < n_hist; ++i) hist.push_back(hist_pool.draw(rng));
      for (std::size_t i = 0; i < n_diag; ++i) diag.push_back(diag_pool.draw(rng));

      if (!cls.markers.empty() && rng.bernoulli(config.marker_strength)) {
        // Two distinct marker words (one if the class has a single marker),
        // each overwriting a random word position.
        std::vector<std::size_t> picks(cls.markers.size());
        std::iota(picks.begin(), picks.end(), std::size_t{0});
        rng.shuffle(picks);
        const std::size_t m = std::min<std::size_t>(2, picks.size());
        for (std::size_t i = 0; i < m; ++i) {
          const std::string& marker = cls.markers[picks[i]];
          const bool to_history = !hist.empty() && (diag.empty() || rng.bernoulli(0.4));
          auto& field = to_history ? hist : diag;
          if (field.empty()) {
            field.push_back(marker);
          } else {
            field[rng.uniform_int(field.size())] = marker;
          }
        }
      }

      ExamRecord r;
      if (!cls.exam_codes.empty() && rng.bernoulli(config.marker_strength)) {
        r.exam_code = cls.exam_codes[rng.uniform_int(cls.exam_codes.size())];
      } else {
        r.exam_code = config.exam_catalog[rng.uniform_int(config.exam_catalog.size())].first;
      }
      r.exam_name = exam_name_for(config, r.exam_code);
      r.sex = rng.bernoulli(0.5) ? "1" : "2";
      if (cls.age_range && rng.bernoulli(config.marker_strength)) {
        const auto [lo, hi] = *cls.age_range;
        r.age = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
      } else {
        const double a = std::round(rng.normal(config.age_mean, config.age_sd));
        r.age = static_cast<int>(std::clamp(a, static_cast<double>(config.age_min),
                                            static_cast<double>(config.age_max)));
      }
      r.history = join(hist, " ");
      r.diagnosis = join(diag, " ");
      r.protocol_group = cls.name;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace protoassign
