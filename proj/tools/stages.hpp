#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "protoassign/pipeline.hpp"

namespace protoassign::cli {

struct StageContext {
  ExperimentConfig config;
  std::size_t fold = 0;
};

struct EncoderChoice {
  std::string init;  // "pretrained" | "random"
  ResampleMode resample = ResampleMode::None;

  std::string id() const;  // "<init>_<resample>"
};

void run_synth(const StageContext& ctx);
void run_build_vocab(const StageContext& ctx);
void run_pretrain(const StageContext& ctx);
void run_train_baseline(const StageContext& ctx, std::optional<BaselineKind> only);
void run_resample(const StageContext& ctx, ResampleMode mode);
void run_train_encoder(const StageContext& ctx, const EncoderChoice& choice);
void run_augment(const StageContext& ctx);
void run_distill(const StageContext& ctx);
/// `model`: svm, softmax, encoder_<init>_<resample> or ban<g>.
void run_evaluate(const StageContext& ctx, const std::string& model);
void run_report(const StageContext& ctx);
void run_full_experiment(const StageContext& ctx);

}  // namespace protoassign::cli
