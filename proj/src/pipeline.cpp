#include "protoassign/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "protoassign/synthgen.hpp"
#include "protoassign/util.hpp"

namespace protoassign {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  throw ValidationError("config: " + field + ": " + what);
}

template <typename U>
U get_field(const json& j, const std::string& field) {
  try {
    return j.get<U>();
  } catch (const json::exception&) {
    config_error(field, "wrong type (" + std::string(j.type_name()) + ")");
  }
}

// Runs `fn`, prefixing any ValidationError with the field name.
template <typename F>
auto with_field(const std::string& field, F&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    if (msg.rfind("config: ", 0) == 0) throw;
    config_error(field, msg);
  }
}

json dataset_to_json(const DatasetSource& d) {
  if (!d.synthetic()) return json{{"path", d.path}, {"format", d.format}};
  return json{{"synth",
               {{"profile", d.profile},
                {"scale", d.scale},
                {"min_count", d.min_count},
                {"marker_strength", d.marker_strength}}}};
}

DatasetSource dataset_from_json(const json& j) {
  if (!j.is_object()) config_error("dataset", "expected an object");
  DatasetSource d;
  for (const auto& [k, v] : j.items()) {
    if (k == "path") {
      d.path = get_field<std::string>(v, "dataset.path");
      if (d.path.empty()) config_error("dataset.path", "must not be empty");
    } else if (k == "format") {
      d.format = get_field<std::string>(v, "dataset.format");
    } else if (k == "synth") {
      if (!v.is_object()) config_error("dataset.synth", "expected an object");
      for (const auto& [sk, sv] : v.items()) {
        const std::string f = "dataset.synth." + sk;
        if (sk == "profile") d.profile = get_field<std::string>(sv, f);
        else if (sk == "scale") d.scale = get_field<double>(sv, f);
        else if (sk == "min_count") d.min_count = get_field<std::size_t>(sv, f);
        else if (sk == "marker_strength") d.marker_strength = get_field<double>(sv, f);
        else config_error(f, "unknown key");
      }
    } else {
      config_error("dataset." + k, "unknown key");
    }
  }
  if (!d.path.empty() && j.contains("synth")) {
    config_error("dataset", "give either path or synth, not both");
  }
  return d;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.synthetic()) {
    with_field("dataset.synth.profile", [&] { builtin_profile(dataset.profile, 1.0); return 0; });
    if (!(dataset.scale > 0.0)) config_error("dataset.synth.scale", "must be > 0");
    if (!(dataset.marker_strength >= 0.0 && dataset.marker_strength <= 1.0)) {
      config_error("dataset.synth.marker_strength", "must be in [0,1]");
    }
  } else if (!dataset.format.empty()) {
    with_field("dataset.format", [&] { return parse_dataset_format(dataset.format); });
  }
  if (vocab_size <= kNumSpecials) config_error("vocab_size", "must exceed the 5 special tokens");
  if (max_len < 2) config_error("max_len", "must be >= 2");
  with_field("encoder", [&] {
    EncoderConfig e = encoder;
    e.vocab_size = vocab_size;
    e.max_len = max_len;
    e.n_classes = std::max<std::size_t>(e.n_classes, 1);
    e.validate();
    return 0;
  });
  with_field("train", [&] { train.validate(); return 0; });
  with_field("pretrain", [&] { pretrain.validate(); return 0; });
  with_field("augment", [&] { augment.validate(); return 0; });
  if (generations == 0) config_error("distill.generations", "must be >= 1");
  if (init != "pretrained" && init != "random") {
    config_error("init", "must be \"pretrained\" or \"random\"");
  }
  for (const auto& m : models) {
    if (std::find_if(std::begin(kModelIds), std::end(kModelIds),
                     [&](const char* id) { return m == id; }) == std::end(kModelIds)) {
      config_error("models", "unknown model '" + m + "'");
    }
  }
  if (k_folds < 2) config_error("k_folds", "must be >= 2");
  for (auto f : eval_folds) {
    if (f >= k_folds) config_error("eval_folds", "fold " + std::to_string(f) + " >= k_folds");
  }
  if (!(baseline.svm.c > 0.0)) config_error("baseline.svm.c", "must be > 0");
  if (baseline.softmax.l2 < 0.0) config_error("baseline.softmax.l2", "must be >= 0");
  if (output_dir.empty()) config_error("output_dir", "must not be empty");
}

json ExperimentConfig::to_json() const {
  json enc = encoder.to_json();
  enc.erase("vocab_size");
  enc.erase("n_classes");
  enc.erase("max_len");
  json j{{"dataset", dataset_to_json(dataset)},
         {"exclusion_threshold", exclusion_threshold},
         {"vocab_size", vocab_size},
         {"max_len", max_len},
         {"encoder", enc},
         {"train", train.to_json()},
         {"pretrain", pretrain.to_json()},
         {"augment", augment.to_json()},
         {"n_aug_sweep", n_aug_sweep},
         {"distill", {{"generations", generations}, {"mse_on_gold", mse_on_gold}}},
         {"init", init},
         {"resample", resample_mode_id(resample)},
         {"baseline",
          {{"svm", {{"c", baseline.svm.c}, {"epochs", baseline.svm.epochs}}},
           {"softmax",
            {{"l2", baseline.softmax.l2},
             {"epochs", baseline.softmax.epochs},
             {"learning_rate", baseline.softmax.learning_rate}}}}},
         {"models", models},
         {"k_folds", k_folds},
         {"eval_folds", eval_folds},
         {"seed", seed},
         {"output_dir", output_dir}};
  j["train"].erase("seed");
  j["pretrain"].erase("seed");
  j["augment"].erase("seed");
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  ExperimentConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "dataset") {
      c.dataset = dataset_from_json(v);
    } else if (k == "exclusion_threshold") {
      c.exclusion_threshold = get_field<std::size_t>(v, k);
    } else if (k == "vocab_size") {
      c.vocab_size = get_field<std::size_t>(v, k);
    } else if (k == "max_len") {
      c.max_len = get_field<std::size_t>(v, k);
    } else if (k == "encoder") {
      c.encoder = with_field(k, [&] { return EncoderConfig::from_json(v); });
    } else if (k == "train") {
      c.train = with_field(k, [&] { return TrainConfig::from_json(v); });
    } else if (k == "pretrain") {
      c.pretrain = with_field(k, [&] { return PretrainConfig::from_json(v); });
    } else if (k == "augment") {
      c.augment = with_field(k, [&] { return AugmentationPolicy::from_json(v); });
    } else if (k == "n_aug_sweep") {
      c.n_aug_sweep = get_field<std::vector<std::size_t>>(v, k);
    } else if (k == "distill") {
      if (!v.is_object()) config_error(k, "expected an object");
      for (const auto& [dk, dv] : v.items()) {
        if (dk == "generations") c.generations = get_field<std::size_t>(dv, "distill." + dk);
        else if (dk == "mse_on_gold") c.mse_on_gold = get_field<bool>(dv, "distill." + dk);
        else config_error("distill." + dk, "unknown key");
      }
    } else if (k == "init") {
      c.init = get_field<std::string>(v, k);
    } else if (k == "resample") {
      c.resample = with_field(k, [&] { return parse_resample_mode(get_field<std::string>(v, k)); });
    } else if (k == "baseline") {
      if (!v.is_object()) config_error(k, "expected an object");
      for (const auto& [bk, bv] : v.items()) {
        if (!bv.is_object()) config_error("baseline." + bk, "expected an object");
        for (const auto& [pk, pv] : bv.items()) {
          const std::string f = "baseline." + bk + "." + pk;
          if (bk == "svm" && pk == "c") c.baseline.svm.c = get_field<double>(pv, f);
          else if (bk == "svm" && pk == "epochs") c.baseline.svm.epochs = get_field<std::size_t>(pv, f);
          else if (bk == "softmax" && pk == "l2") c.baseline.softmax.l2 = get_field<double>(pv, f);
          else if (bk == "softmax" && pk == "epochs") c.baseline.softmax.epochs = get_field<std::size_t>(pv, f);
          else if (bk == "softmax" && pk == "learning_rate") c.baseline.softmax.learning_rate = get_field<double>(pv, f);
          else config_error(f, "unknown key");
        }
      }
    } else if (k == "models") {
      c.models = get_field<std::vector<std::string>>(v, k);
    } else if (k == "k_folds") {
      c.k_folds = get_field<std::size_t>(v, k);
    } else if (k == "eval_folds") {
      c.eval_folds = get_field<std::vector<std::size_t>>(v, k);
    } else if (k == "seed") {
      c.seed = get_field<std::uint64_t>(v, k);
    } else if (k == "output_dir") {
      c.output_dir = get_field<std::string>(v, k);
    } else {
      config_error(k, "unknown key");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("models");
  return git_blob_hash(j.dump());
}

std::uint64_t ExperimentConfig::stage_seed(std::string_view stage, std::size_t fold) const {
  return derive_seed(derive_seed(seed, stage), fold);
}

std::vector<std::size_t> ExperimentConfig::folds_to_run() const {
  if (!eval_folds.empty()) {
    std::set<std::size_t> s(eval_folds.begin(), eval_folds.end());
    return {s.begin(), s.end()};
  }
  std::vector<std::size_t> all(k_folds);
  for (std::size_t i = 0; i < k_folds; ++i) all[i] = i;
  return all;
}

bool ExperimentConfig::wants(std::string_view model) const {
  return models.empty() || std::find(models.begin(), models.end(), model) != models.end();
}

// ---------------------------------------------------------------------------
// Data

std::vector<ExamRecord> synthesize(const ExperimentConfig& config) {
  if (!config.dataset.synthetic()) {
    throw ValidationError("synth: the configured dataset is a file, not a synthetic profile");
  }
  auto sc = builtin_profile(config.dataset.profile, config.dataset.scale,
                            config.dataset.min_count, config.stage_seed("synth"));
  sc.marker_strength = config.dataset.marker_strength;
  return generate_dataset(sc);
}

PreparedData prepare_data(const ExperimentConfig& config, std::vector<ExamRecord> raw) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw[i].protocol_group) {
      throw ValidationError("dataset: record " + std::to_string(i) + " has no protocol_group");
    }
  }
  PreparedData d;
  d.dataset_hash = git_blob_hash(serialize_dataset(DatasetTable{raw, {}, {}}, DatasetFormat::Tsv));
  auto consolidated = consolidate_labels(std::move(raw), config.exclusion_threshold);
  d.records = std::move(consolidated.records);
  d.label_set = std::move(consolidated.label_set);
  for (const auto& r : d.records) d.labels.push_back(*r.label);
  d.plan = stratified_kfold(d.labels, config.k_folds, config.stage_seed("folds"),
                            d.label_set.names());
  return d;
}

namespace {

std::vector<TokenSequence> encode_records(const std::vector<ExamRecord>& records,
                                          const Vocab& vocab, std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_text(render_template(r).text, vocab, max_len));
  return out;
}

}  // namespace

FoldData make_fold(const ExperimentConfig& config, const PreparedData& data, std::size_t fold,
                   Vocab vocab) {
  FoldData fd;
  fd.fold = fold;
  fd.train_idx = data.plan.train_indices(fold);
  fd.test_idx = data.plan.test_indices(fold);
  for (auto i : fd.train_idx) {
    fd.train.push_back(data.records[i]);
    fd.train_labels.push_back(data.labels[i]);
  }
  for (auto i : fd.test_idx) {
    fd.test.push_back(data.records[i]);
    fd.test_labels.push_back(data.labels[i]);
  }
  fd.vocab = std::move(vocab);
  fd.train_seqs = encode_records(fd.train, fd.vocab, config.max_len);
  fd.test_seqs = encode_records(fd.test, fd.vocab, config.max_len);
  return fd;
}

FoldData make_fold(const ExperimentConfig& config, const PreparedData& data, std::size_t fold) {
  std::vector<TemplatedSequence> corpus;
  for (auto i : data.plan.train_indices(fold)) corpus.push_back(render_template(data.records[i], i));
  return make_fold(config, data, fold, train_vocab(corpus, config.vocab_size));
}

EncoderConfig resolved_encoder(const ExperimentConfig& config, const FoldData& fd,
                               std::size_t n_classes) {
  EncoderConfig e = config.encoder;
  e.vocab_size = fd.vocab.size();
  e.max_len = config.max_len;
  e.n_classes = n_classes;
  e.validate();
  return e;
}

PretrainResult pretrain_fold(const ExperimentConfig& config, const FoldData& fd,
                             std::size_t n_classes) {
  PretrainConfig pc = config.pretrain;
  pc.seed = config.stage_seed("pretrain", fd.fold);
  return mlm_pretrain(fd.train_seqs, resolved_encoder(config, fd, n_classes), pc,
                      config.stage_seed("pretrain_init", fd.fold));
}

std::vector<std::size_t> resample_fold(const ExperimentConfig& config, const FoldData& fd,
                                       ResampleMode mode) {
  return resample(fd.train_labels, mode, config.stage_seed("resample", fd.fold));
}

EncoderClassifier<float> train_encoder_fold(const ExperimentConfig& config, const FoldData& fd,
                                            std::size_t n_classes,
                                            const ParamSet<float>* pretrained,
                                            const std::vector<std::size_t>& keep,
                                            const std::string& tag, LossCurve* curve) {
  EncoderClassifier<float> model(resolved_encoder(config, fd, n_classes),
                                 config.stage_seed("encoder_init_" + tag, fd.fold));
  if (pretrained) model.load_encoder_weights(*pretrained);
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
  for (auto i : keep) {
    if (i >= fd.train.size()) {
      throw ValidationError("train-encoder: training position " + std::to_string(i) +
                            " outside the fold's " + std::to_string(fd.train.size()) + " records");
    }
    seqs.push_back(fd.train_seqs[i]);
    labels.push_back(fd.train_labels[i]);
  }
  TrainConfig tc = config.train;
  tc.seed = config.stage_seed("encoder_train_" + tag, fd.fold);
  auto c = fine_tune(model, seqs, labels, tc);
  if (curve) *curve = std::move(c);
  return model;
}

std::vector<AugmentedInstance> augment_fold(const ExperimentConfig& config, const FoldData& fd,
                                            std::size_t n_aug) {
  AugmentationPolicy policy = config.augment;
  policy.n_aug = n_aug;
  policy.seed = config.stage_seed("augment", fd.fold);
  std::vector<ExamRecord> train = fd.train;
  const auto pos = PosIndex::from_records(train, LexiconTagger());
  return augment_dataset(train, policy, pos);
}

std::vector<BanGeneration> distill_fold(const ExperimentConfig& config, const FoldData& fd,
                                        const EncoderClassifier<float>& teacher,
                                        const std::vector<AugmentedInstance>& augmented,
                                        const ParamSet<float>* pretrained,
                                        std::size_t generations, std::string_view tag) {
  if (teacher.config().vocab_size != fd.vocab.size()) {
    throw ValidationError("distill: teacher vocabulary size " +
                          std::to_string(teacher.config().vocab_size) +
                          " does not match the fold vocabulary (" +
                          std::to_string(fd.vocab.size()) + ")");
  }
  std::vector<TokenSequence> aug;
  aug.reserve(augmented.size());
  for (const auto& a : augmented) aug.push_back(encode_text(a.text, fd.vocab, config.max_len));
  DistillOptions opts;
  opts.mse_on_gold = config.mse_on_gold;
  opts.init_encoder = pretrained;
  return ban_loop(teacher, fd.train_seqs, fd.train_labels, aug, generations, config.train,
                  config.stage_seed("ban" + std::string(tag), fd.fold), opts);
}

// ---------------------------------------------------------------------------
// Artifacts

json ArtifactMeta::to_json() const {
  return json{{"stage", stage},
              {"config_hash", config_hash},
              {"seed", seed},
              {"inputs", inputs},
              {"content_hash", content_hash}};
}

ArtifactMeta ArtifactMeta::from_json(const json& j) {
  ArtifactMeta m;
  try {
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.content_hash = j.at("content_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("artifact metadata: ") + e.what());
  }
  return m;
}

void write_artifact(const std::string& path, const std::string& content, ArtifactMeta meta) {
  meta.content_hash = git_blob_hash(content);
  write_file(path, content);
  write_file(path + ".meta.json", meta.to_json().dump(2) + "\n");
}

std::optional<ArtifactMeta> read_meta(const std::string& path) {
  const std::string side = path + ".meta.json";
  if (!file_exists(side)) return std::nullopt;
  try {
    return ArtifactMeta::from_json(json::parse(read_file(side)));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

bool artifact_current(const std::string& path, const ArtifactMeta& expected) {
  if (!file_exists(path)) return false;
  const auto meta = read_meta(path);
  if (!meta) return false;
  return meta->stage == expected.stage && meta->config_hash == expected.config_hash &&
         meta->seed == expected.seed && meta->inputs == expected.inputs &&
         meta->content_hash == git_blob_hash(read_file(path));
}

void write_manifest(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    list.push_back({{"path", f}, {"hash", git_blob_hash(read_file(dir + "/" + f))}});
  }
  write_file(dir + "/manifest.json", json{{"artifacts", list}}.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Experiment

std::string model_display_name(std::string_view id, std::size_t generation) {
  if (id == "svm") return "SVM";
  if (id == "softmax") return "Softmax regression";
  if (id == "encoder_random") return "Encoder random-init";
  if (id == "encoder_pretrained") return "Encoder MLM-pretrained";
  if (id == "encoder_undersample") return "Encoder MLM-pretrained undersample";
  if (id == "encoder_oversample") return "Encoder MLM-pretrained oversample";
  if (id == "ban") return "BAN" + std::to_string(generation);
  return std::string(id);
}

namespace {

std::string preds_json(const std::vector<int>& preds) { return json{{"preds", preds}}.dump() + "\n"; }

std::vector<int> parse_preds(const std::string& text) {
  return json::parse(text).at("preds").get<std::vector<int>>();
}

class FoldRunner {
 public:
  FoldRunner(const ExperimentConfig& config, const PreparedData& data, std::size_t fold)
      : config_(config), data_(data), fold_(fold),
        dir_(config.output_dir + "/fold" + std::to_string(fold)) {}

  const FoldData& fold_data() {
    if (!fd_) {
      const std::string vocab_path = dir_ + "/vocab.txt";
      const auto meta = base_meta("build-vocab", config_.stage_seed("vocab", fold_));
      if (artifact_current(vocab_path, meta)) {
        fd_ = make_fold(config_, data_, fold_, Vocab::parse(read_file(vocab_path)));
      } else {
        fd_ = make_fold(config_, data_, fold_);
        write_artifact(vocab_path, fd_->vocab.serialize(), meta);
      }
    }
    return *fd_;
  }

  std::size_t k() const { return data_.label_set.size(); }

  ArtifactMeta base_meta(const std::string& stage, std::uint64_t seed) const {
    ArtifactMeta m;
    m.stage = stage;
    m.config_hash = config_.hash();
    m.seed = seed;
    m.inputs["dataset"] = data_.dataset_hash;
    m.inputs["fold"] = std::to_string(fold_);
    return m;
  }

  template <typename F>
  std::vector<int> cached_preds(const std::string& key, F&& compute) {
    const std::string path = dir_ + "/pred_" + key + ".json";
    const auto meta = base_meta("predict:" + key, config_.stage_seed(key, fold_));
    if (artifact_current(path, meta)) return parse_preds(read_file(path));
    auto preds = compute();
    write_artifact(path, preds_json(preds), meta);
    return preds;
  }

  bool preds_cached(const std::string& key) const {
    return artifact_current(dir_ + "/pred_" + key + ".json",
                            base_meta("predict:" + key, config_.stage_seed(key, fold_)));
  }

  const ParamSet<float>& pretrained() {
    if (!pretrained_) {
      const std::string path = dir_ + "/pretrain.ckpt";
      const auto meta = base_meta("pretrain", config_.stage_seed("pretrain", fold_));
      if (artifact_current(path, meta)) {
        pretrained_ = params_from_checkpoint<float>(load_checkpoint(path));
      } else {
        auto res = pretrain_fold(config_, fold_data(), k());
        json header{{"format", "protoassign-pretrain"},
                    {"epoch_loss", res.curve.epoch_loss},
                    {"skipped_batches", res.curve.skipped_batches}};
        write_artifact(path, serialize_checkpoint(make_checkpoint(res.encoder_weights, header.dump())),
                       meta);
        pretrained_ = std::move(res.encoder_weights);
      }
    }
    return *pretrained_;
  }

  EncoderClassifier<float> encoder(const std::string& key, bool use_pretrained, ResampleMode mode) {
    const std::string path = dir_ + "/encoder_" + key + ".ckpt";
    const auto meta = base_meta("train-encoder:" + key, config_.stage_seed(key, fold_));
    if (artifact_current(path, meta)) {
      return EncoderClassifier<float>::from_checkpoint(load_checkpoint(path));
    }
    LossCurve curve;
    auto model = train_encoder_fold(config_, fold_data(), k(),
                                    use_pretrained ? &pretrained() : nullptr,
                                    resample_fold(config_, fold_data(), mode), key, &curve);
    write_artifact(path, serialize_checkpoint(model.to_checkpoint(json{{"epoch_loss", curve.epoch_loss}})),
                   meta);
    return model;
  }

  std::vector<int> predict_encoder(const EncoderClassifier<float>& model) {
    return predict(model, fold_data().test_seqs, config_.train.batch_size).labels;
  }

  // BAN generations for one n_aug value; returns predictions per generation.
  std::vector<std::vector<int>> ban(std::size_t n_aug, std::size_t generations,
                                    const std::string& tag) {
    std::vector<std::string> keys;
    for (std::size_t g = 1; g <= generations; ++g) {
      keys.push_back("ban" + std::to_string(g) + tag);
    }
    bool all_cached = true;
    for (const auto& key : keys) all_cached = all_cached && preds_cached(key);
    std::vector<std::vector<int>> out;
    if (all_cached) {
      for (const auto& key : keys) out.push_back(cached_preds(key, [] { return std::vector<int>{}; }));
      return out;
    }
    const auto teacher = encoder("pretrained", true, ResampleMode::None);
    const std::string aug_path = dir_ + "/augmented" + tag + ".tsv";
    auto aug_meta = base_meta("augment", config_.stage_seed("augment", fold_));
    aug_meta.inputs["n_aug"] = std::to_string(n_aug);
    std::vector<AugmentedInstance> augmented;
    if (artifact_current(aug_path, aug_meta)) {
      augmented = load_augmented(aug_path, DatasetFormat::Tsv);
    } else {
      augmented = augment_fold(config_, fold_data(), n_aug);
      std::string tmp = aug_path + ".tmp";
      save_augmented(tmp, augmented, DatasetFormat::Tsv);
      const auto content = read_file(tmp);
      fs::remove(tmp);
      write_artifact(aug_path, content, aug_meta);
    }
    auto gens = distill_fold(config_, fold_data(), teacher, augmented, &pretrained(), generations, tag);
    for (std::size_t g = 0; g < gens.size(); ++g) {
      auto meta = base_meta("distill:" + keys[g], config_.stage_seed(keys[g], fold_));
      meta.inputs["soft_labels"] = gens[g].soft_label_hash;
      write_artifact(dir_ + "/" + keys[g] + ".ckpt",
                     serialize_checkpoint(gens[g].student.to_checkpoint(
                         json{{"generation", g + 1}, {"epoch_loss", gens[g].curve.epoch_loss}})),
                     meta);
      const auto& student = gens[g].student;
      out.push_back(cached_preds(keys[g], [&] { return predict_encoder(student); }));
    }
    return out;
  }

 private:
  const ExperimentConfig& config_;
  const PreparedData& data_;
  std::size_t fold_;
  std::string dir_;
  std::optional<FoldData> fd_;
  std::optional<ParamSet<float>> pretrained_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::string& out = config.output_dir;
  std::vector<ExamRecord> raw;
  if (config.dataset.synthetic()) {
    raw = synthesize(config);
  } else {
    const auto fmt = config.dataset.format.empty() ? dataset_format_from_path(config.dataset.path)
                                                   : parse_dataset_format(config.dataset.format);
    raw = load_dataset(config.dataset.path, fmt);
  }
  const PreparedData data = prepare_data(config, raw);
  const std::size_t k = data.label_set.size();
  {
    ArtifactMeta m;
    m.stage = "prepare";
    m.config_hash = config.hash();
    m.seed = config.stage_seed("folds");
    m.inputs["dataset"] = data.dataset_hash;
    if (config.dataset.synthetic()) {
      write_artifact(out + "/dataset.tsv",
                     serialize_dataset(DatasetTable{raw, {}, {}}, DatasetFormat::Tsv), m);
    }
    write_artifact(out + "/labels.json", data.label_set.to_json(), m);
    write_artifact(out + "/folds.json", data.plan.to_json(), m);
  }

  const auto folds = config.folds_to_run();
  // model key -> fold -> predictions
  std::map<std::string, std::map<std::size_t, std::vector<int>>> preds;
  std::vector<std::string> keys;
  auto record = [&](const std::string& key, std::size_t fold, std::vector<int> p) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    preds[key][fold] = std::move(p);
  };

  for (auto f : folds) {
    FoldRunner run(config, data, f);
    for (const char* kind : {"svm", "softmax"}) {
      if (!config.wants(kind)) continue;
      record(kind, f, run.cached_preds(kind, [&] {
        const auto& fd = run.fold_data();
        auto model = fit_baseline(parse_baseline_kind(kind), fd.train, k, config.baseline);
        return model.predict(fd.test);
      }));
    }
    if (config.wants("encoder_random")) {
      record("encoder_random", f, run.cached_preds("encoder_random", [&] {
        return run.predict_encoder(run.encoder("random", false, ResampleMode::None));
      }));
    }
    if (config.wants("encoder_pretrained")) {
      record("encoder_pretrained", f, run.cached_preds("encoder_pretrained", [&] {
        return run.predict_encoder(run.encoder("pretrained", true, ResampleMode::None));
      }));
    }
    if (config.wants("encoder_undersample")) {
      record("encoder_undersample", f, run.cached_preds("encoder_undersample", [&] {
        return run.predict_encoder(run.encoder("undersample", true, ResampleMode::Undersample));
      }));
    }
    if (config.wants("encoder_oversample")) {
      record("encoder_oversample", f, run.cached_preds("encoder_oversample", [&] {
        return run.predict_encoder(run.encoder("oversample", true, ResampleMode::Oversample));
      }));
    }
    if (config.wants("ban")) {
      auto gens = run.ban(config.augment.n_aug, config.generations, "");
      for (std::size_t g = 0; g < gens.size(); ++g) {
        record("ban" + std::to_string(g + 1), f, std::move(gens[g]));
      }
      for (auto n : config.n_aug_sweep) {
        auto sweep = run.ban(n, 1, "_naug" + std::to_string(n));
        record("sweep" + std::to_string(n), f, std::move(sweep[0]));
      }
    }
  }

  ExperimentResult result;
  result.label_set = data.label_set;
  ReportBundle bundle;
  bundle.class_names = data.label_set.names();
  auto cv_for = [&](const std::string& key, const std::string& name) {
    const auto& by_fold = preds.at(key);
    return cross_validate(name, data.labels, k, data.plan,
                          [&](const std::vector<std::size_t>&, const std::vector<std::size_t>&,
                              std::size_t fold) { return by_fold.at(fold); },
                          folds);
  };
  for (const auto& key : keys) {
    if (key.rfind("sweep", 0) == 0) {
      const std::size_t n = std::stoul(key.substr(5));
      result.sweep[n] = cv_for(key, "BAN1 n_aug=" + std::to_string(n));
      continue;
    }
    const std::string name = key.rfind("ban", 0) == 0
                                 ? model_display_name("ban", std::stoul(key.substr(3)))
                                 : model_display_name(key);
    auto cv = cv_for(key, name);
    result.row_order.push_back(key);
    for (const auto& r : cv.folds) bundle.reports.push_back(r);
    bundle.reports.push_back(cv.mean);
    bundle.reports.push_back(cv.pooled);
    result.rows[key] = std::move(cv);
  }

  std::vector<std::string> fold_names;
  for (auto f : folds) fold_names.push_back(std::to_string(f));
  result.metadata = json{{"seed", config.seed},
                         {"config_hash", config.hash()},
                         {"dataset_hash", data.dataset_hash},
                         {"records", data.records.size()},
                         {"classes", k},
                         {"folds_evaluated", join(fold_names, ",")},
                         {"k_folds", config.k_folds},
                         {"learning_rate", config.train.learning_rate},
                         {"reference_learning_rate", TrainConfig::kReferenceLearningRate},
                         {"headline", "pooled predictions over the evaluated folds"}};

  if (!result.row_order.empty()) {
    std::vector<MetricsReport> means;
    for (const auto& key : result.row_order) means.push_back(result.rows.at(key).mean);
    result.sections.push_back({"Mean over folds", model_table(means)});
  }
  if (!result.sweep.empty()) {
    std::ostringstream os;
    os << "| n_aug | Macro F1 | Weighted F1 |\n|---|---|---|\n";
    for (const auto& [n, cv] : result.sweep) {
      os << "| " << n << " | " << format_metric(cv.pooled.agg.macro.f1) << " | "
         << format_metric(cv.pooled.agg.weighted.f1) << " |\n";
    }
    result.sections.push_back({"Augmentation count sweep (BAN1)", os.str()});
    for (const auto& [n, cv] : result.sweep) {
      bundle.reports.push_back(cv.pooled);
    }
  }
  for (const char* key : {"encoder_pretrained", "ban1"}) {
    if (!result.rows.count(key)) continue;
    result.sections.push_back(
        {"Top confusions: " + result.rows.at(key).pooled.model,
         confusion_pairs_table(result.rows.at(key).pooled.matrix, bundle.class_names, 10)});
  }
  result.sections.push_back(
      {"Notes",
       "GBM and random-forest baselines are not implemented; softmax regression is the second "
       "linear baseline.\n"});

  if (!bundle.reports.empty()) {
    bundle.metadata = result.metadata;
    bundle.sections = result.sections;
    emit_report(out, bundle);
  }
  write_manifest(out);
  return result;
}

}  // namespace protoassign
