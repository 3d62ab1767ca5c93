#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoassign/adam.hpp"
#include "protoassign/checkpoint.hpp"
#include "protoassign/text.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t d_ff = 512;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t n_classes = 0;
  double dropout = 0.1;
  double mlm_mask_rate = 0.15;
  // Of the positions selected for MLM, mlm_mask_share become [MASK],
  // mlm_random_share a random token, and the rest keep their token.
  double mlm_mask_share = 0.8;
  double mlm_random_share = 0.1;
  double init_std = 0.02;
  double layer_norm_eps = 1e-12;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// Optimization settings. The reference setting for a full-size pretrained
/// encoder is lr 2e-5; the compact encoder defaults to 1e-4.
struct TrainConfig {
  std::size_t batch_size = 48;
  double learning_rate = 1e-4;
  std::size_t epochs = 4;
  std::uint64_t seed = 0;

  static constexpr double kReferenceLearningRate = 2e-5;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 48;
  double learning_rate = 1e-4;
  /// Stop after this many optimizer steps; 0 = no cap.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

/// Per-epoch mean training loss plus every step's loss.
struct LossCurve {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::size_t skipped_batches = 0;
};

/// Post-LN transformer encoder with a linear classification head on [CLS].
///
/// Sequences are packed: each item contributes only its attention_length
/// positions and attention never crosses items, which is equivalent to
/// masking padded keys. Logits are therefore independent of padding.
template <typename T>
class EncoderClassifier {
 public:
  /// Random initialization of every weight from `init_seed`.
  EncoderClassifier(EncoderConfig config, std::uint64_t init_seed);
  /// Adopts `params` as-is (e.g. loaded from a checkpoint).
  EncoderClassifier(EncoderConfig config, ParamSet<T> params);

  const EncoderConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Logits [batch, n_classes]. With `dropout_rng` set, dropout masks are
  /// drawn from it (training mode); otherwise dropout is off.
  ad::Var<T> forward(std::span<const TokenSequence> batch, Rng* dropout_rng = nullptr) const;

  /// Final hidden states of all packed positions, [sum of lengths, d_model].
  /// `offsets` receives each item's first row.
  ad::Var<T> encode(std::span<const TokenSequence> batch, Rng* dropout_rng,
                    std::vector<std::size_t>* offsets) const;

  /// Copies every non-head weight from `encoder_weights` (names without the
  /// "head." / "mlm." prefixes). Shapes must match.
  void load_encoder_weights(const ParamSet<T>& encoder_weights);
  /// Re-draws the classification head from `seed`.
  void reset_head(std::uint64_t seed);
  /// Encoder-only weights (no head).
  ParamSet<T> encoder_weights() const;

  Checkpoint to_checkpoint(const nlohmann::json& extra = {}) const;
  static EncoderClassifier from_checkpoint(const Checkpoint& ckpt);

 private:
  EncoderConfig config_;
  ParamSet<T> params_;

  void check_batch(std::span<const TokenSequence> batch) const;
};

struct Prediction {
  Tensor<float> logits;     // [n, K]
  std::vector<int> labels;  // argmax, ties to the lower class id
};

template <typename T>
Prediction predict(const EncoderClassifier<T>& model, std::span<const TokenSequence> inputs,
                   std::size_t batch_size = 48);

/// Argmax with ties broken toward the lower id.
int argmax_label(std::span<const float> logits);

/// Shared mini-batch loop: per epoch, shuffle indices with a stream derived
/// from `seed`, call `batch_loss` per batch, backprop, and take an Adam step.
/// `batch_loss` returns nullptr to skip a batch.
template <typename T>
LossCurve train_loop(ParamSet<T>& params, std::size_t n_items, std::size_t batch_size,
                     std::size_t epochs, double learning_rate, std::uint64_t seed,
                     const std::function<ad::Var<T>(std::span<const std::size_t>, Rng&)>&
                         batch_loss,
                     std::size_t max_steps = 0);

/// Cross-entropy fine-tuning over shuffled mini-batches.
template <typename T>
LossCurve fine_tune(EncoderClassifier<T>& model, std::span<const TokenSequence> inputs,
                    std::span<const int> labels, const TrainConfig& config);

/// Masked-LM corruption of one batch: selects positions with probability
/// mask_rate (never [CLS]/[SEP]/[PAD]) and applies the mask/random/keep
/// split. Returns the selected packed-row indices and their original ids.
struct MlmBatch {
  std::vector<TokenSequence> corrupted;
  std::vector<std::size_t> positions;  // packed row index
  std::vector<int> targets;
};
MlmBatch corrupt_for_mlm(std::span<const TokenSequence> batch, const EncoderConfig& config,
                         Rng& rng);

struct PretrainResult {
  ParamSet<float> encoder_weights;
  ParamSet<float> mlm_head;
  LossCurve curve;
};

/// Masked-LM pretraining of the encoder body. The prediction head is a
/// linear map to the vocabulary and is discarded afterwards.
PretrainResult mlm_pretrain(std::span<const TokenSequence> corpus, const EncoderConfig& config,
                            const PretrainConfig& pretrain, std::uint64_t init_seed);

}  // namespace protoassign
