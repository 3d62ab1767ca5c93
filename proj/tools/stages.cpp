#include "stages.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <regex>
#include <set>

#include "protoassign/util.hpp"

namespace protoassign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string EncoderChoice::id() const {
  return init + "_" + std::string(resample_mode_id(resample));
}

namespace {

void note(const std::string& msg) { std::cerr << msg << "\n"; }

std::string path_of(const StageContext& ctx, const std::string& rel) {
  return ctx.config.output_dir + "/" + rel;
}

std::string fold_rel(const StageContext& ctx, const std::string& name) {
  return "fold" + std::to_string(ctx.fold) + "/" + name;
}

// Content hash of an upstream artifact. Missing -> RuntimeError naming the
// stage that makes it; produced under another config -> ValidationError.
std::string require(const StageContext& ctx, const std::string& rel, const std::string& stage) {
  const std::string path = path_of(ctx, rel);
  if (!file_exists(path)) throw RuntimeError("missing " + path + ": run `" + stage + "` first");
  const auto meta = read_meta(path);
  if (!meta) throw RuntimeError(path + " has no metadata sidecar: re-run `" + stage + "`");
  const std::string want = ctx.config.hash();
  if (meta->config_hash != want) {
    throw ValidationError(path + " comes from config " + meta->config_hash.substr(0, 12) +
                          ", current config is " + want.substr(0, 12) + ": re-run `" + stage +
                          "`");
  }
  if (meta->content_hash != git_blob_hash(read_file(path))) {
    throw ValidationError(path + " changed after `" + stage + "` wrote it: re-run `" + stage + "`");
  }
  return meta->content_hash;
}

ArtifactMeta meta_for(const StageContext& ctx, std::string stage, std::uint64_t seed,
                      std::map<std::string, std::string> inputs) {
  ArtifactMeta m;
  m.stage = std::move(stage);
  m.config_hash = ctx.config.hash();
  m.seed = seed;
  m.inputs = std::move(inputs);
  return m;
}

bool up_to_date(const StageContext& ctx, const std::string& rel, const ArtifactMeta& meta) {
  if (!artifact_current(path_of(ctx, rel), meta)) return false;
  note(meta.stage + ": " + path_of(ctx, rel) + " is up to date");
  return true;
}

void emit(const StageContext& ctx, const std::string& rel, const std::string& content,
          const ArtifactMeta& meta) {
  write_artifact(path_of(ctx, rel), content, meta);
  note(meta.stage + ": wrote " + path_of(ctx, rel));
}

void finish(const StageContext& ctx) { write_manifest(ctx.config.output_dir); }

// Dataset, labels and folds as build-vocab left them.
struct Loaded {
  PreparedData data;
  std::map<std::string, std::string> inputs;  // lineage of the fold inputs
};

std::vector<ExamRecord> raw_records(const StageContext& ctx, std::map<std::string, std::string>& inputs) {
  const auto& ds = ctx.config.dataset;
  if (ds.synthetic()) {
    inputs["dataset.tsv"] = require(ctx, "dataset.tsv", "synth");
    return load_dataset(path_of(ctx, "dataset.tsv"), DatasetFormat::Tsv);
  }
  const auto fmt = ds.format.empty() ? dataset_format_from_path(ds.path)
                                     : parse_dataset_format(ds.format);
  if (!file_exists(ds.path)) throw RuntimeError("dataset file not found: " + ds.path);
  return load_dataset(ds.path, fmt);
}

Loaded load_prepared(const StageContext& ctx) {
  Loaded l;
  auto raw = raw_records(ctx, l.inputs);
  l.data = prepare_data(ctx.config, std::move(raw));
  l.inputs["labels.json"] = require(ctx, "labels.json", "build-vocab");
  l.inputs["folds.json"] = require(ctx, "folds.json", "build-vocab");
  if (read_file(path_of(ctx, "folds.json")) != l.data.plan.to_json()) {
    throw ValidationError(path_of(ctx, "folds.json") + " does not match the dataset: re-run `build-vocab`");
  }
  if (ctx.fold >= ctx.config.k_folds) {
    throw ValidationError("--fold " + std::to_string(ctx.fold) + " is outside 0.." +
                          std::to_string(ctx.config.k_folds - 1));
  }
  l.inputs["dataset"] = l.data.dataset_hash;
  l.inputs["fold"] = std::to_string(ctx.fold);
  return l;
}

FoldData load_fold(const StageContext& ctx, Loaded& l) {
  const std::string rel = fold_rel(ctx, "vocab.txt");
  l.inputs["vocab.txt"] = require(ctx, rel, "build-vocab");
  return make_fold(ctx.config, l.data, ctx.fold, Vocab::parse(read_file(path_of(ctx, rel))));
}

ParamSet<float> load_pretrained(const StageContext& ctx, std::map<std::string, std::string>& inputs) {
  const std::string rel = fold_rel(ctx, "pretrain.ckpt");
  inputs["pretrain.ckpt"] = require(ctx, rel, "pretrain");
  return params_from_checkpoint<float>(load_checkpoint(path_of(ctx, rel)));
}

std::string encoder_rel(const StageContext& ctx, const EncoderChoice& c) {
  return fold_rel(ctx, "encoder_" + c.id() + ".ckpt");
}

std::string encoder_stage_hint(const EncoderChoice& c) {
  return "train-encoder --init " + c.init + " --resample " + std::string(resample_mode_id(c.resample));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::string display_name(const std::string& model) {
  static const std::regex ban_re("ban([0-9]+)");
  std::smatch m;
  if (std::regex_match(model, m, ban_re)) return model_display_name("ban", std::stoul(m[1]));
  if (model == "svm" || model == "softmax") return model_display_name(model);
  if (model == "encoder_random_none") return model_display_name("encoder_random");
  if (model == "encoder_pretrained_none") return model_display_name("encoder_pretrained");
  if (model == "encoder_pretrained_undersample") return model_display_name("encoder_undersample");
  if (model == "encoder_pretrained_oversample") return model_display_name("encoder_oversample");
  return model;
}

}  // namespace

void run_synth(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  if (!cfg.dataset.synthetic()) {
    throw ValidationError("synth: config dataset is the file " + cfg.dataset.path +
                          "; synth needs dataset.synth");
  }
  const auto meta = meta_for(ctx, "synth", cfg.stage_seed("synth"), {});
  if (!up_to_date(ctx, "dataset.tsv", meta)) {
    const auto records = synthesize(cfg);
    emit(ctx, "dataset.tsv", serialize_dataset(DatasetTable{records, {}, {}}, DatasetFormat::Tsv), meta);
  }
  finish(ctx);
}

void run_build_vocab(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  std::map<std::string, std::string> inputs;
  auto data = prepare_data(cfg, raw_records(ctx, inputs));
  inputs["dataset"] = data.dataset_hash;
  const auto meta = meta_for(ctx, "build-vocab", cfg.stage_seed("folds"), inputs);
  if (!up_to_date(ctx, "labels.json", meta)) emit(ctx, "labels.json", data.label_set.to_json(), meta);
  if (!up_to_date(ctx, "folds.json", meta)) emit(ctx, "folds.json", data.plan.to_json(), meta);
  auto folds = cfg.folds_to_run();
  if (std::find(folds.begin(), folds.end(), ctx.fold) == folds.end() && ctx.fold < cfg.k_folds) {
    folds.push_back(ctx.fold);
  }
  for (auto f : folds) {
    StageContext fc = ctx;
    fc.fold = f;
    auto vmeta = meta_for(ctx, "build-vocab", cfg.stage_seed("vocab", f), inputs);
    vmeta.inputs["fold"] = std::to_string(f);
    const std::string rel = fold_rel(fc, "vocab.txt");
    if (up_to_date(ctx, rel, vmeta)) continue;
    const auto fd = make_fold(cfg, data, f);
    emit(ctx, rel, fd.vocab.serialize(), vmeta);
  }
  finish(ctx);
}

void run_pretrain(const StageContext& ctx) {
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  const auto meta = meta_for(ctx, "pretrain", ctx.config.stage_seed("pretrain", ctx.fold), l.inputs);
  const std::string rel = fold_rel(ctx, "pretrain.ckpt");
  if (!up_to_date(ctx, rel, meta)) {
    auto res = pretrain_fold(ctx.config, fd, l.data.label_set.size());
    json header{{"format", "protoassign-pretrain"},
                {"epoch_loss", res.curve.epoch_loss},
                {"skipped_batches", res.curve.skipped_batches}};
    emit(ctx, rel, serialize_checkpoint(make_checkpoint(res.encoder_weights, header.dump())), meta);
  }
  finish(ctx);
}

void run_train_baseline(const StageContext& ctx, std::optional<BaselineKind> only) {
  auto l = load_prepared(ctx);
  const auto plan = l.data.plan;
  std::vector<ExamRecord> train;
  for (auto i : plan.train_indices(ctx.fold)) train.push_back(l.data.records[i]);
  for (auto kind : {BaselineKind::Svm, BaselineKind::Softmax}) {
    if (only && *only != kind) continue;
    const std::string id(baseline_kind_id(kind));
    const auto meta = meta_for(ctx, "train-baseline:" + id, ctx.config.stage_seed(id, ctx.fold), l.inputs);
    const std::string rel = fold_rel(ctx, "baseline_" + id + ".json");
    if (up_to_date(ctx, rel, meta)) continue;
    const auto model = fit_baseline(kind, train, l.data.label_set.size(), ctx.config.baseline);
    emit(ctx, rel, model.to_json(), meta);
  }
  finish(ctx);
}

void run_resample(const StageContext& ctx, ResampleMode mode) {
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  const std::string id(resample_mode_id(mode));
  const auto meta = meta_for(ctx, "resample:" + id, ctx.config.stage_seed("resample", ctx.fold), l.inputs);
  const std::string rel = fold_rel(ctx, "resample_" + id + ".json");
  if (!up_to_date(ctx, rel, meta)) {
    const auto keep = resample_fold(ctx.config, fd, mode);
    json j{{"format", "protoassign-resample"}, {"mode", id}, {"positions", keep}};
    emit(ctx, rel, j.dump() + "\n", meta);
  }
  finish(ctx);
}

void run_train_encoder(const StageContext& ctx, const EncoderChoice& choice) {
  if (choice.init != "pretrained" && choice.init != "random") {
    throw ValidationError("--init must be pretrained or random, got '" + choice.init + "'");
  }
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  std::optional<ParamSet<float>> pretrained;
  if (choice.init == "pretrained") pretrained = load_pretrained(ctx, l.inputs);
  std::vector<std::size_t> keep = iota(fd.train.size());
  if (choice.resample != ResampleMode::None) {
    const std::string id(resample_mode_id(choice.resample));
    const std::string rel = fold_rel(ctx, "resample_" + id + ".json");
    l.inputs["resample"] = require(ctx, rel, "resample --resample " + id);
    keep = json::parse(read_file(path_of(ctx, rel))).at("positions").get<std::vector<std::size_t>>();
  }
  const std::string key = "encoder_" + choice.id();
  const auto meta = meta_for(ctx, "train-encoder:" + choice.id(),
                             ctx.config.stage_seed("encoder_train_" + choice.id(), ctx.fold), l.inputs);
  const std::string rel = encoder_rel(ctx, choice);
  if (!up_to_date(ctx, rel, meta)) {
    LossCurve curve;
    auto model = train_encoder_fold(ctx.config, fd, l.data.label_set.size(),
                                    pretrained ? &*pretrained : nullptr, keep, choice.id(), &curve);
    emit(ctx, rel, serialize_checkpoint(model.to_checkpoint(json{{"epoch_loss", curve.epoch_loss}})), meta);
  }
  finish(ctx);
}

void run_augment(const StageContext& ctx) {
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  auto meta = meta_for(ctx, "augment", ctx.config.stage_seed("augment", ctx.fold), l.inputs);
  meta.inputs["n_aug"] = std::to_string(ctx.config.augment.n_aug);
  const std::string rel = fold_rel(ctx, "augmented.tsv");
  if (!up_to_date(ctx, rel, meta)) {
    const auto augmented = augment_fold(ctx.config, fd, ctx.config.augment.n_aug);
    const std::string tmp = path_of(ctx, rel) + ".tmp";
    save_augmented(tmp, augmented, DatasetFormat::Tsv);
    const auto content = read_file(tmp);
    fs::remove(tmp);
    emit(ctx, rel, content, meta);
  }
  finish(ctx);
}

void run_distill(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  const EncoderChoice teacher_choice{"pretrained", ResampleMode::None};
  l.inputs["teacher"] = require(ctx, encoder_rel(ctx, teacher_choice), encoder_stage_hint(teacher_choice));
  l.inputs["augmented.tsv"] = require(ctx, fold_rel(ctx, "augmented.tsv"), "augment");
  const auto pretrained = load_pretrained(ctx, l.inputs);

  std::vector<ArtifactMeta> metas;
  bool all_current = true;
  for (std::size_t g = 1; g <= cfg.generations; ++g) {
    auto m = meta_for(ctx, "distill:ban" + std::to_string(g), cfg.stage_seed("ban", ctx.fold), l.inputs);
    m.inputs["generation"] = std::to_string(g);
    all_current = all_current && artifact_current(path_of(ctx, fold_rel(ctx, "ban" + std::to_string(g) + ".ckpt")), m);
    metas.push_back(std::move(m));
  }
  if (all_current) {
    note("distill: ban1..ban" + std::to_string(cfg.generations) + " are up to date");
    finish(ctx);
    return;
  }

  const auto teacher = EncoderClassifier<float>::from_checkpoint(
      load_checkpoint(path_of(ctx, encoder_rel(ctx, teacher_choice))));
  const auto augmented = load_augmented(path_of(ctx, fold_rel(ctx, "augmented.tsv")), DatasetFormat::Tsv);
  const auto gens = distill_fold(cfg, fd, teacher, augmented, &pretrained, cfg.generations);

  // Soft labels each generation was trained against.
  std::vector<TokenSequence> inputs = fd.train_seqs;
  std::vector<std::optional<int>> gold(fd.train_labels.begin(), fd.train_labels.end());
  SoftLabelTable table;
  table.records = fd.train;
  for (const auto& a : augmented) {
    inputs.push_back(encode_text(a.text, fd.vocab, cfg.max_len));
    gold.push_back(std::nullopt);
    table.records.push_back(a.record);
  }
  table.gold = gold;
  const EncoderClassifier<float>* current = &teacher;
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const std::string tag = std::to_string(g + 1);
    const auto soft = generate_soft_labels(*current, inputs, gold, cfg.train.batch_size);
    table.logits.clear();
    for (const auto& s : soft) table.logits.push_back(s.teacher_logits);
    const std::string soft_rel = fold_rel(ctx, "soft_labels_g" + tag + ".tsv");
    save_soft_labels(path_of(ctx, soft_rel), table, DatasetFormat::Tsv);
    auto smeta = metas[g];
    smeta.stage = "distill:soft_labels_g" + tag;
    emit(ctx, soft_rel, read_file(path_of(ctx, soft_rel)), smeta);

    const auto& m = metas[g];
    emit(ctx, fold_rel(ctx, "ban" + tag + ".ckpt"),
         serialize_checkpoint(gens[g].student.to_checkpoint(
             json{{"generation", g + 1},
                  {"epoch_loss", gens[g].curve.epoch_loss},
                  {"soft_label_hash", gens[g].soft_label_hash}})),
         m);
    current = &gens[g].student;
  }
  finish(ctx);
}

void run_evaluate(const StageContext& ctx, const std::string& model) {
  auto l = load_prepared(ctx);
  const auto fd = load_fold(ctx, l);
  static const std::regex enc_re("encoder_(pretrained|random)_(none|undersample|oversample)");
  static const std::regex ban_re("ban([0-9]+)");
  std::smatch m;
  std::vector<int> preds;
  std::string rel;
  if (model == "svm" || model == "softmax") {
    rel = fold_rel(ctx, "baseline_" + model + ".json");
    require(ctx, rel, "train-baseline --model " + model);
    preds = BaselineModel::from_json(read_file(path_of(ctx, rel))).predict(fd.test);
  } else if (std::regex_match(model, m, enc_re) || std::regex_match(model, m, ban_re)) {
    if (model.rfind("encoder_", 0) == 0) {
      const EncoderChoice c{m[1].str(), parse_resample_mode(m[2].str())};
      rel = encoder_rel(ctx, c);
      require(ctx, rel, encoder_stage_hint(c));
    } else {
      rel = fold_rel(ctx, model + ".ckpt");
      require(ctx, rel, "distill");
    }
    const auto enc = EncoderClassifier<float>::from_checkpoint(load_checkpoint(path_of(ctx, rel)));
    if (enc.config().vocab_size != fd.vocab.size()) {
      throw ValidationError(path_of(ctx, rel) + " was trained with another vocabulary");
    }
    preds = predict(enc, fd.test_seqs, ctx.config.train.batch_size).labels;
  } else {
    throw ValidationError("unknown --model '" + model +
                          "' (svm, softmax, encoder_<pretrained|random>_<none|undersample|oversample>, ban<g>)");
  }
  const auto meta = read_meta(path_of(ctx, rel));
  if (!meta || meta->inputs.count("dataset") == 0 || meta->inputs.at("dataset") != l.data.dataset_hash) {
    throw ValidationError(path_of(ctx, rel) + " was trained on a different dataset");
  }
  if (meta->inputs.count("fold") == 0 || meta->inputs.at("fold") != std::to_string(ctx.fold)) {
    throw ValidationError(path_of(ctx, rel) + " belongs to another fold");
  }

  const std::size_t k = l.data.label_set.size();
  const auto report = make_report(display_name(model), std::to_string(ctx.fold),
                                  confusion(fd.test_labels, preds, k));
  json j{{"format", "protoassign-metrics"},
         {"model", model},
         {"fold", ctx.fold},
         {"test_indices", fd.test_idx},
         {"gold", fd.test_labels},
         {"pred", preds},
         {"macro_f1", report.agg.macro.f1},
         {"weighted_f1", report.agg.weighted.f1},
         {"accuracy", report.accuracy}};
  auto inputs = l.inputs;
  inputs["model"] = meta->content_hash;
  const auto out_meta = meta_for(ctx, "evaluate:" + model, meta->seed, inputs);
  emit(ctx, fold_rel(ctx, "metrics_" + model + ".json"), j.dump(1) + "\n", out_meta);
  std::cout << model << " fold " << ctx.fold << ": macro-F1 " << format_metric(report.agg.macro.f1)
            << ", weighted-F1 " << format_metric(report.agg.weighted.f1) << ", accuracy "
            << format_metric(report.accuracy) << "\n";
  finish(ctx);
}

void run_report(const StageContext& ctx) {
  const auto labels_hash = require(ctx, "labels.json", "build-vocab");
  const auto labels = ProtocolLabelSet::from_json(read_file(path_of(ctx, "labels.json")));
  const std::size_t k = labels.size();
  // model -> fold -> report
  std::map<std::string, std::map<std::size_t, MetricsReport>> found;
  std::vector<std::string> order;
  const std::string dir = ctx.config.output_dir;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory() || entry.path().filename().string().rfind("fold", 0) != 0) continue;
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const auto name = f.path().filename().string();
      if (name.rfind("metrics_", 0) != 0 || name.ends_with(".meta.json")) continue;
      if (f.path().extension() == ".json") files.push_back(f.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto rel = fs::relative(p, dir).generic_string();
    require(ctx, rel, "evaluate");
    const auto j = json::parse(read_file(p.string()));
    const std::string model = j.at("model").get<std::string>();
    const auto fold = j.at("fold").get<std::size_t>();
    auto r = make_report(display_name(model), std::to_string(fold),
                         confusion(j.at("gold").get<std::vector<int>>(),
                                   j.at("pred").get<std::vector<int>>(), k));
    if (!found.count(model)) order.push_back(model);
    found[model][fold] = std::move(r);
  }
  if (found.empty()) throw RuntimeError("no metrics under " + dir + "/fold*/: run `evaluate` first");

  static const std::vector<std::string> rank = {
      "svm", "softmax", "encoder_random_none", "encoder_pretrained_none",
      "encoder_pretrained_undersample", "encoder_pretrained_oversample"};
  auto pos = [&](const std::string& m) {
    auto it = std::find(rank.begin(), rank.end(), m);
    return it == rank.end() ? rank.size() : static_cast<std::size_t>(it - rank.begin());
  };
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    if (pos(a) != pos(b)) return pos(a) < pos(b);
    return a < b;
  });

  ReportBundle bundle;
  bundle.class_names = labels.names();
  std::set<std::size_t> folds_seen;
  for (const auto& model : order) {
    std::vector<MetricsReport> per_fold;
    ConfusionMatrix pooled(k);
    for (const auto& [f, r] : found.at(model)) {
      per_fold.push_back(r);
      pooled += r.matrix;
      folds_seen.insert(f);
    }
    for (const auto& r : per_fold) bundle.reports.push_back(r);
    bundle.reports.push_back(mean_report(display_name(model), per_fold));
    bundle.reports.push_back(make_report(display_name(model), "pooled", pooled));
  }
  std::vector<std::string> fold_names;
  for (auto f : folds_seen) fold_names.push_back(std::to_string(f));
  bundle.metadata = json{{"config_hash", ctx.config.hash()},
                         {"seed", ctx.config.seed},
                         {"labels_hash", labels_hash},
                         {"folds_evaluated", join(fold_names, ",")},
                         {"headline", "pooled predictions over the evaluated folds"}};
  emit_report(dir, bundle);
  note("report: wrote " + dir + "/report.md, report.csv, report_meta.json");
  finish(ctx);
}

void run_full_experiment(const StageContext& ctx) {
  const auto result = run_experiment(ctx.config);
  for (const auto& key : result.row_order) {
    const auto& p = result.rows.at(key).pooled;
    std::cout << p.model << ": macro-F1 " << format_metric(p.agg.macro.f1) << ", weighted-F1 "
              << format_metric(p.agg.weighted.f1) << "\n";
  }
  for (const auto& [n, cv] : result.sweep) {
    std::cout << "BAN1 n_aug=" << n << ": macro-F1 " << format_metric(cv.pooled.agg.macro.f1) << "\n";
  }
  note("run-experiment: report in " + ctx.config.output_dir + "/report.md");
}

}  // namespace protoassign::cli
