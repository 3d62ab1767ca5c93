#include "protoassign/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace protoassign {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const char* what, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ValidationError(std::string(what) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ValidationError(std::string(what) + ": unknown key '" + k + "'");
  }
}

template <typename U>
void read_key(const json& j, const char* key, U& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<U>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("bad value for '") + key + "'");
  }
}

bool is_head_name(const std::string& name) {
  return name.rfind("head.", 0) == 0 || name.rfind("mlm.", 0) == 0;
}

// Name and shape of every parameter, in creation order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> layout(const EncoderConfig& c) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  const std::size_t d = c.d_model;
  out.push_back({"embed.token", {c.vocab_size, d}});
  out.push_back({"embed.position", {c.max_len, d}});
  out.push_back({"embed.ln.gain", {d}});
  out.push_back({"embed.ln.bias", {d}});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "attn.qkv.weight", {d, 3 * d}});
    out.push_back({p + "attn.qkv.bias", {3 * d}});
    out.push_back({p + "attn.out.weight", {d, d}});
    out.push_back({p + "attn.out.bias", {d}});
    out.push_back({p + "ln1.gain", {d}});
    out.push_back({p + "ln1.bias", {d}});
    out.push_back({p + "ffn.in.weight", {d, c.d_ff}});
    out.push_back({p + "ffn.in.bias", {c.d_ff}});
    out.push_back({p + "ffn.out.weight", {c.d_ff, d}});
    out.push_back({p + "ffn.out.bias", {d}});
    out.push_back({p + "ln2.gain", {d}});
    out.push_back({p + "ln2.bias", {d}});
  }
  out.push_back({"head.weight", {d, c.n_classes}});
  out.push_back({"head.bias", {c.n_classes}});
  return out;
}

template <typename T>
Tensor<T> init_tensor(const std::string& name, const std::vector<std::size_t>& shape,
                      double std_dev, Rng& rng) {
  Tensor<T> t(shape);
  const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
  const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
  if (is_gain) {
    t.fill(T(1));
  } else if (!is_bias) {
    for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, std_dev));
  }
  return t;
}

template <typename T>
ad::Var<T> maybe_dropout(const ad::Var<T>& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  std::vector<std::uint8_t> keep(x->value.size());
  for (auto& k : keep) k = rng->bernoulli(1.0 - rate) ? 1 : 0;
  return ad::dropout(x, std::move(keep), static_cast<T>(rate));
}

template <typename T>
ad::Var<T> linear(const ParamSet<T>& p, const std::string& prefix, const ad::Var<T>& x) {
  return ad::add_bias(ad::matmul(x, p.get(prefix + ".weight")), p.get(prefix + ".bias"));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void EncoderConfig::validate() const {
  if (vocab_size <= kMaskId) throw ValidationError("encoder: vocab_size must exceed the special ids");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ValidationError("encoder: d_model " + std::to_string(d_model) +
                          " must be a positive multiple of n_heads " + std::to_string(n_heads));
  }
  if (n_layers == 0) throw ValidationError("encoder: n_layers must be >= 1");
  if (d_ff == 0) throw ValidationError("encoder: d_ff must be >= 1");
  if (max_len < 2) throw ValidationError("encoder: max_len must be >= 2");
  if (n_classes == 0) throw ValidationError("encoder: n_classes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("encoder: dropout outside [0,1)");
  if (!(mlm_mask_rate >= 0.0 && mlm_mask_rate <= 1.0)) {
    throw ValidationError("encoder: mlm_mask_rate outside [0,1]");
  }
  if (!(mlm_mask_share >= 0.0 && mlm_random_share >= 0.0 &&
        mlm_mask_share + mlm_random_share <= 1.0 + 1e-12)) {
    throw ValidationError("encoder: mlm mask/random shares must be >= 0 and sum to <= 1");
  }
  if (!(init_std > 0.0)) throw ValidationError("encoder: init_std must be > 0");
  if (!(layer_norm_eps > 0.0)) throw ValidationError("encoder: layer_norm_eps must be > 0");
}

nlohmann::json EncoderConfig::to_json() const {
  return json{{"vocab_size", vocab_size},
              {"d_model", d_model},
              {"n_heads", n_heads},
              {"n_layers", n_layers},
              {"d_ff", d_ff},
              {"max_len", max_len},
              {"n_classes", n_classes},
              {"dropout", dropout},
              {"mlm_mask_rate", mlm_mask_rate},
              {"mlm_mask_share", mlm_mask_share},
              {"mlm_random_share", mlm_random_share},
              {"init_std", init_std},
              {"layer_norm_eps", layer_norm_eps}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, "encoder config",
                      {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_len",
                       "n_classes", "dropout", "mlm_mask_rate", "mlm_mask_share",
                       "mlm_random_share", "init_std", "layer_norm_eps"});
  EncoderConfig c;
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "d_model", c.d_model);
  read_key(j, "n_heads", c.n_heads);
  read_key(j, "n_layers", c.n_layers);
  read_key(j, "d_ff", c.d_ff);
  read_key(j, "max_len", c.max_len);
  read_key(j, "n_classes", c.n_classes);
  read_key(j, "dropout", c.dropout);
  read_key(j, "mlm_mask_rate", c.mlm_mask_rate);
  read_key(j, "mlm_mask_share", c.mlm_mask_share);
  read_key(j, "mlm_random_share", c.mlm_random_share);
  read_key(j, "init_std", c.init_std);
  read_key(j, "layer_norm_eps", c.layer_norm_eps);
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return json{{"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"epochs", epochs},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, "train config", {"batch_size", "learning_rate", "epochs", "seed"});
  TrainConfig c;
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "epochs", c.epochs);
  read_key(j, "seed", c.seed);
  return c;
}

void PretrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("pretrain: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("pretrain: learning_rate must be > 0");
}

nlohmann::json PretrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"max_steps", max_steps},
              {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, "pretrain config",
                      {"epochs", "batch_size", "learning_rate", "max_steps", "seed"});
  PretrainConfig c;
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "max_steps", c.max_steps);
  read_key(j, "seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
EncoderClassifier<T>::EncoderClassifier(EncoderConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(init_seed);
  for (const auto& [name, shape] : layout(config_)) {
    params_.add(name, init_tensor<T>(name, shape, config_.init_std, rng));
  }
}

template <typename T>
EncoderClassifier<T>::EncoderClassifier(EncoderConfig config, ParamSet<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto expected = layout(config_);
  for (const auto& [name, shape] : expected) {
    if (!params_.contains(name)) throw ValidationError("encoder: missing parameter '" + name + "'");
    require_same_shape(("encoder parameter " + name).c_str(), params_.get(name)->value.shape(),
                       shape);
  }
  if (params_.entries().size() != expected.size()) {
    throw ValidationError("encoder: parameter set has " +
                          std::to_string(params_.entries().size()) + " entries, expected " +
                          std::to_string(expected.size()));
  }
}

template <typename T>
void EncoderClassifier<T>::check_batch(std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw ValidationError("encoder: empty batch");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    auto problem = check_token_sequence(s);
    if (!problem.empty()) {
      throw ValidationError("encoder: item " + std::to_string(i) + ": " + problem);
    }
    if (s.attention_length > config_.max_len) {
      throw ValidationError("encoder: item " + std::to_string(i) + " has " +
                            std::to_string(s.attention_length) + " tokens, max_len is " +
                            std::to_string(config_.max_len));
    }
    for (std::size_t p = 0; p < s.attention_length; ++p) {
      if (s.ids[p] < 0 || static_cast<std::size_t>(s.ids[p]) >= config_.vocab_size) {
        throw ValidationError("encoder: item " + std::to_string(i) + ": token id " +
                              std::to_string(s.ids[p]) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
      }
    }
  }
}

template <typename T>
ad::Var<T> EncoderClassifier<T>::encode(std::span<const TokenSequence> batch, Rng* dropout_rng,
                                        std::vector<std::size_t>* offsets) const {
  check_batch(batch);
  std::vector<std::int32_t> ids, positions;
  std::vector<std::size_t> lengths;
  if (offsets) offsets->clear();
  for (const auto& s : batch) {
    if (offsets) offsets->push_back(ids.size());
    lengths.push_back(s.attention_length);
    for (std::size_t p = 0; p < s.attention_length; ++p) {
      ids.push_back(s.ids[p]);
      positions.push_back(static_cast<std::int32_t>(p));
    }
  }
  const auto& P = params_;
  const T eps = static_cast<T>(config_.layer_norm_eps);
  const double rate = config_.dropout;

  auto h = ad::add(ad::embedding(P.get("embed.token"), std::span<const std::int32_t>(ids)),
                   ad::embedding(P.get("embed.position"), std::span<const std::int32_t>(positions)));
  h = ad::layer_norm(h, P.get("embed.ln.gain"), P.get("embed.ln.bias"), eps);
  h = maybe_dropout(h, rate, dropout_rng);

  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    auto qkv = linear(P, p + "attn.qkv", h);
    auto att = ad::packed_self_attention(qkv, std::span<const std::size_t>(lengths),
                                         config_.n_heads);
    att = maybe_dropout(linear(P, p + "attn.out", att), rate, dropout_rng);
    h = ad::layer_norm(ad::add(h, att), P.get(p + "ln1.gain"), P.get(p + "ln1.bias"), eps);
    auto ff = ad::gelu(linear(P, p + "ffn.in", h));
    ff = maybe_dropout(linear(P, p + "ffn.out", ff), rate, dropout_rng);
    h = ad::layer_norm(ad::add(h, ff), P.get(p + "ln2.gain"), P.get(p + "ln2.bias"), eps);
  }
  return h;
}

template <typename T>
ad::Var<T> EncoderClassifier<T>::forward(std::span<const TokenSequence> batch,
                                         Rng* dropout_rng) const {
  std::vector<std::size_t> offsets;
  auto h = encode(batch, dropout_rng, &offsets);
  auto cls = ad::gather_rows(h, std::span<const std::size_t>(offsets));
  cls = maybe_dropout(cls, config_.dropout, dropout_rng);
  return linear(params_, "head", cls);
}

template <typename T>
void EncoderClassifier<T>::load_encoder_weights(const ParamSet<T>& encoder_weights) {
  std::size_t loaded = 0;
  for (const auto& [name, p] : encoder_weights.entries()) {
    if (is_head_name(name)) continue;
    if (!params_.contains(name)) {
      throw ValidationError("encoder: unknown weight '" + name + "'");
    }
    params_.set(name, p->value);
    ++loaded;
  }
  std::size_t expected = 0;
  for (const auto& [name, p] : params_.entries()) expected += is_head_name(name) ? 0 : 1;
  if (loaded != expected) {
    throw ValidationError("encoder: loaded " + std::to_string(loaded) + " of " +
                          std::to_string(expected) + " encoder weights");
  }
}

template <typename T>
void EncoderClassifier<T>::reset_head(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& [name, shape] : layout(config_)) {
    if (name.rfind("head.", 0) != 0) continue;
    params_.set(name, init_tensor<T>(name, shape, config_.init_std, rng));
  }
}

template <typename T>
ParamSet<T> EncoderClassifier<T>::encoder_weights() const {
  ParamSet<T> out;
  for (const auto& [name, p] : params_.entries()) {
    if (!is_head_name(name)) out.add(name, p->value);
  }
  return out;
}

template <typename T>
Checkpoint EncoderClassifier<T>::to_checkpoint(const nlohmann::json& extra) const {
  json header{{"format", "protoassign-encoder"}, {"version", 1}, {"config", config_.to_json()}};
  if (!extra.is_null()) header["extra"] = extra;
  return make_checkpoint(params_, header.dump());
}

template <typename T>
EncoderClassifier<T> EncoderClassifier<T>::from_checkpoint(const Checkpoint& ckpt) {
  json header;
  try {
    header = json::parse(ckpt.header_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("encoder checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "protoassign-encoder") {
    throw ValidationError("encoder checkpoint: not an encoder checkpoint");
  }
  return EncoderClassifier(EncoderConfig::from_json(header.at("config")),
                           params_from_checkpoint<T>(ckpt));
}

// ---------------------------------------------------------------------------
// Inference and training

int argmax_label(std::span<const float> logits) {
  if (logits.empty()) throw ValidationError("argmax_label: empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

template <typename T>
Prediction predict(const EncoderClassifier<T>& model, std::span<const TokenSequence> inputs,
                   std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("predict: batch_size must be >= 1");
  const std::size_t k = model.config().n_classes;
  Prediction out;
  out.logits = Tensor<float>({inputs.size(), k});
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, inputs.size() - start);
    auto logits = model.forward(inputs.subspan(start, n), nullptr);
    for (std::size_t i = 0; i < n * k; ++i) {
      out.logits[start * k + i] = static_cast<float>(logits->value[i]);
    }
  }
  out.labels = argmax_rows(out.logits);
  return out;
}

template <typename T>
LossCurve train_loop(ParamSet<T>& params, std::size_t n_items, std::size_t batch_size,
                     std::size_t epochs, double learning_rate, std::uint64_t seed,
                     const std::function<ad::Var<T>(std::span<const std::size_t>, Rng&)>&
                         batch_loss,
                     std::size_t max_steps) {
  if (batch_size == 0) throw ValidationError("train: batch_size must be >= 1");
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = learning_rate;
  AdamState<T> adam(adam_cfg);
  LossCurve curve;
  Rng step_rng(derive_seed(seed, "steps"));
  std::vector<std::size_t> order(n_items);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(derive_seed(seed, "shuffle"), e));
    shuffler.shuffle(order);
    double total = 0.0;
    std::size_t counted = 0;
    bool stop = false;
    for (std::size_t start = 0; start < n_items; start += batch_size) {
      if (max_steps != 0 && adam.step_count() >= max_steps) {
        stop = true;
        break;
      }
      const std::size_t n = std::min(batch_size, n_items - start);
      auto loss = batch_loss(std::span<const std::size_t>(order.data() + start, n), step_rng);
      if (!loss) {
        ++curve.skipped_batches;
        continue;
      }
      params.zero_grad();
      ad::backward(loss);
      adam.step(params);
      const double value = static_cast<double>(loss->value[0]);
      curve.step_loss.push_back(value);
      total += value;
      ++counted;
    }
    if (counted > 0) curve.epoch_loss.push_back(total / static_cast<double>(counted));
    if (stop) break;
  }
  params.zero_grad();
  return curve;
}

template <typename T>
LossCurve fine_tune(EncoderClassifier<T>& model, std::span<const TokenSequence> inputs,
                    std::span<const int> labels, const TrainConfig& config) {
  config.validate();
  if (inputs.empty()) throw ValidationError("fine_tune: no training data");
  if (inputs.size() != labels.size()) {
    throw ValidationError("fine_tune: " + std::to_string(inputs.size()) + " inputs but " +
                          std::to_string(labels.size()) + " labels");
  }
  const auto k = static_cast<int>(model.config().n_classes);
  for (int y : labels) {
    if (y < 0 || y >= k) throw ValidationError("fine_tune: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
  }
  std::vector<TokenSequence> batch;
  std::vector<int> gold;
  auto loss_fn = [&](std::span<const std::size_t> idx, Rng& rng) -> ad::Var<T> {
    batch.clear();
    gold.clear();
    for (auto i : idx) {
      batch.push_back(inputs[i]);
      gold.push_back(labels[i]);
    }
    return ad::cross_entropy(model.forward(batch, &rng), std::span<const int>(gold));
  };
  return train_loop<T>(model.params(), inputs.size(), config.batch_size, config.epochs,
                       config.learning_rate, config.seed, loss_fn);
}

MlmBatch corrupt_for_mlm(std::span<const TokenSequence> batch, const EncoderConfig& config,
                         Rng& rng) {
  MlmBatch out;
  std::size_t offset = 0;
  const bool can_randomize = config.vocab_size > kMaskId + 1;
  for (const auto& s : batch) {
    TokenSequence c = s;
    for (std::size_t p = 0; p < s.attention_length; ++p) {
      const auto id = s.ids[p];
      if (id == kClsId || id == kSepId || id == kPadId) continue;
      if (!rng.bernoulli(config.mlm_mask_rate)) continue;
      out.positions.push_back(offset + p);
      out.targets.push_back(id);
      const double u = rng.uniform();
      if (u < config.mlm_mask_share) {
        c.ids[p] = kMaskId;
      } else if (u < config.mlm_mask_share + config.mlm_random_share && can_randomize) {
        c.ids[p] = static_cast<std::int32_t>(kMaskId + 1 +
                                             rng.uniform_int(config.vocab_size - kMaskId - 1));
      }
    }
    offset += s.attention_length;
    out.corrupted.push_back(std::move(c));
  }
  return out;
}

PretrainResult mlm_pretrain(std::span<const TokenSequence> corpus, const EncoderConfig& config,
                            const PretrainConfig& pretrain, std::uint64_t init_seed) {
  pretrain.validate();
  if (corpus.empty()) throw ValidationError("pretrain: empty corpus");
  EncoderConfig cfg = config;
  cfg.n_classes = std::max<std::size_t>(cfg.n_classes, 1);
  EncoderClassifier<float> model(cfg, init_seed);
  Rng head_rng(derive_seed(init_seed, "mlm_head"));
  model.params().add("mlm.weight",
                     init_tensor<float>("mlm.weight", {cfg.d_model, cfg.vocab_size},
                                        cfg.init_std, head_rng));
  model.params().add("mlm.bias", Tensor<float>({cfg.vocab_size}));

  auto loss_fn = [&](std::span<const std::size_t> idx, Rng& rng) -> ad::Var<float> {
    std::vector<TokenSequence> batch;
    for (auto i : idx) batch.push_back(corpus[i]);
    auto mlm = corrupt_for_mlm(batch, cfg, rng);
    if (mlm.positions.empty()) return nullptr;
    auto h = model.encode(mlm.corrupted, &rng, nullptr);
    auto picked = ad::gather_rows(h, std::span<const std::size_t>(mlm.positions));
    auto logits = linear(model.params(), "mlm", picked);
    return ad::cross_entropy(logits, std::span<const int>(mlm.targets));
  };

  PretrainResult result;
  result.curve = train_loop<float>(model.params(), corpus.size(), pretrain.batch_size,
                                   pretrain.epochs, pretrain.learning_rate, pretrain.seed,
                                   loss_fn, pretrain.max_steps);
  result.encoder_weights = model.encoder_weights();
  result.mlm_head.add("mlm.weight", model.params().get("mlm.weight")->value);
  result.mlm_head.add("mlm.bias", model.params().get("mlm.bias")->value);
  return result;
}

template class EncoderClassifier<float>;
template class EncoderClassifier<double>;
template Prediction predict(const EncoderClassifier<float>&, std::span<const TokenSequence>,
                            std::size_t);
template Prediction predict(const EncoderClassifier<double>&, std::span<const TokenSequence>,
                            std::size_t);
template LossCurve train_loop(
    ParamSet<float>&, std::size_t, std::size_t, std::size_t, double, std::uint64_t,
    const std::function<ad::Var<float>(std::span<const std::size_t>, Rng&)>&, std::size_t);
template LossCurve train_loop(
    ParamSet<double>&, std::size_t, std::size_t, std::size_t, double, std::uint64_t,
    const std::function<ad::Var<double>(std::span<const std::size_t>, Rng&)>&, std::size_t);
template LossCurve fine_tune(EncoderClassifier<float>&, std::span<const TokenSequence>,
                             std::span<const int>, const TrainConfig&);
template LossCurve fine_tune(EncoderClassifier<double>&, std::span<const TokenSequence>,
                             std::span<const int>, const TrainConfig&);

}  // namespace protoassign
