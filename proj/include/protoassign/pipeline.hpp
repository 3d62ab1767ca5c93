#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoassign/augment.hpp"
#include "protoassign/baseline.hpp"
#include "protoassign/core_data.hpp"
#include "protoassign/distill.hpp"
#include "protoassign/encoder.hpp"
#include "protoassign/eval_report.hpp"
#include "protoassign/sampling.hpp"
#include "protoassign/text.hpp"

namespace protoassign {

/// Either a dataset file or a built-in synthetic profile.
struct DatasetSource {
  std::string path;    // non-empty: read this file
  std::string format;  // "tsv" / "jsonl"; empty = from the extension
  std::string profile = "uw-ct-body";
  double scale = 0.1;
  std::size_t min_count = 10;
  double marker_strength = 0.8;

  bool synthetic() const { return path.empty(); }
};

/// Model rows of the experiment grid.
inline constexpr const char* kModelIds[] = {
    "svm", "softmax", "encoder_random", "encoder_pretrained", "encoder_undersample",
    "encoder_oversample", "ban"};

struct ExperimentConfig {
  DatasetSource dataset;
  std::size_t exclusion_threshold = 20;
  std::size_t vocab_size = 2000;
  std::size_t max_len = kDefaultMaxLen;
  EncoderConfig encoder;  // vocab_size / n_classes / max_len filled per run
  TrainConfig train;
  PretrainConfig pretrain;
  AugmentationPolicy augment;
  std::vector<std::size_t> n_aug_sweep;
  std::size_t generations = 3;
  bool mse_on_gold = false;
  /// Single-stage settings for train-encoder.
  std::string init = "pretrained";  // "pretrained" | "random"
  ResampleMode resample = ResampleMode::None;
  BaselineConfig baseline;
  std::vector<std::string> models;  // run-experiment rows; empty = all
  std::size_t k_folds = 5;
  std::vector<std::size_t> eval_folds;  // empty = every fold
  std::uint64_t seed = 7;
  std::string output_dir = "out";

  /// Throws ValidationError("config: <field>: <problem>").
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  /// Hash of everything except output_dir and the row selection.
  std::string hash() const;
  std::uint64_t stage_seed(std::string_view stage, std::size_t fold = 0) const;
  std::vector<std::size_t> folds_to_run() const;
  bool wants(std::string_view model) const;
};

/// Labeled, consolidated records plus the fold plan.
struct PreparedData {
  std::vector<ExamRecord> records;
  ProtocolLabelSet label_set;
  std::vector<int> labels;
  FoldPlan plan;
  std::string dataset_hash;
};

std::vector<ExamRecord> synthesize(const ExperimentConfig& config);
PreparedData prepare_data(const ExperimentConfig& config, std::vector<ExamRecord> raw);

struct FoldData {
  std::size_t fold = 0;
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<ExamRecord> train, test;
  std::vector<int> train_labels, test_labels;
  Vocab vocab;
  std::vector<TokenSequence> train_seqs, test_seqs;
};

/// Splits one fold and fits the vocabulary on its training part only.
FoldData make_fold(const ExperimentConfig& config, const PreparedData& data, std::size_t fold);
/// Same, with a vocabulary trained elsewhere.
FoldData make_fold(const ExperimentConfig& config, const PreparedData& data, std::size_t fold,
                   Vocab vocab);

EncoderConfig resolved_encoder(const ExperimentConfig& config, const FoldData& fd,
                               std::size_t n_classes);

PretrainResult pretrain_fold(const ExperimentConfig& config, const FoldData& fd,
                             std::size_t n_classes);

/// Positions into fd.train kept (or replicated) by `mode`.
std::vector<std::size_t> resample_fold(const ExperimentConfig& config, const FoldData& fd,
                                       ResampleMode mode);

/// Fine-tunes on the training records at positions `keep`. `pretrained`
/// null = random init. `tag` separates the seed streams of grid rows.
EncoderClassifier<float> train_encoder_fold(const ExperimentConfig& config, const FoldData& fd,
                                            std::size_t n_classes,
                                            const ParamSet<float>* pretrained,
                                            const std::vector<std::size_t>& keep,
                                            const std::string& tag, LossCurve* curve = nullptr);

std::vector<AugmentedInstance> augment_fold(const ExperimentConfig& config, const FoldData& fd,
                                            std::size_t n_aug);

std::vector<BanGeneration> distill_fold(const ExperimentConfig& config, const FoldData& fd,
                                        const EncoderClassifier<float>& teacher,
                                        const std::vector<AugmentedInstance>& augmented,
                                        const ParamSet<float>* pretrained,
                                        std::size_t generations, std::string_view tag = "");

// ---------------------------------------------------------------------------
// Artifacts

/// Sidecar `<artifact>.meta.json` describing how an artifact was produced.
struct ArtifactMeta {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::string content_hash;

  nlohmann::json to_json() const;
  static ArtifactMeta from_json(const nlohmann::json& j);
};

void write_artifact(const std::string& path, const std::string& content, ArtifactMeta meta);
std::optional<ArtifactMeta> read_meta(const std::string& path);
/// True when `path` exists, its sidecar matches `expected` on stage, config
/// hash, seed and inputs, and the content hash still matches the file.
bool artifact_current(const std::string& path, const ArtifactMeta& expected);
/// Rewrites <dir>/manifest.json listing every file under `dir` with its hash.
void write_manifest(const std::string& dir);

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentResult {
  std::vector<std::string> row_order;
  std::map<std::string, CvResult> rows;
  std::map<std::size_t, CvResult> sweep;  // n_aug -> BAN1 result
  ProtocolLabelSet label_set;
  nlohmann::json metadata;
  std::vector<std::pair<std::string, std::string>> sections;
};

/// Display name of a model row ("Encoder pretrained", "BAN2", ...).
std::string model_display_name(std::string_view id, std::size_t generation = 0);

/// Runs the grid over the configured folds, writing artifacts (with
/// resume-on-hash-match) and the consolidated report under output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace protoassign
