// protoassign: staged command line for the protocol-assignment workbench.
//
//   protoassign synth --config exp.json
//   protoassign build-vocab --config exp.json
//   protoassign train-encoder --config exp.json --fold 0 --init random
//   protoassign run-experiment --config exp.json --seed 3 --out runs/s3

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "protoassign/util.hpp"
#include "stages.hpp"

using namespace protoassign;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t fold = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "experiment config (JSON); defaults apply when omitted");
  sub->add_option("--seed", c.seed, "master seed, overrides the config");
  sub->add_option("--out", c.out, "output directory, overrides the config");
  sub->add_option("--fold", c.fold, "fold for per-fold stages")->capture_default_str();
}

cli::StageContext make_context(const Common& c) {
  cli::StageContext ctx;
  ctx.config = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
  if (c.seed) ctx.config.seed = *c.seed;
  if (!c.out.empty()) ctx.config.output_dir = c.out;
  ctx.config.validate();
  ctx.fold = c.fold;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiology protocol assignment: data, encoder training, distillation, evaluation"};
  app.require_subcommand(1);
  Common common;
  std::string model;
  std::string init;
  std::string resample;
  std::string baseline;

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  auto* vocab = app.add_subcommand("build-vocab", "consolidate labels, split folds, train vocabularies");
  auto* pretrain = app.add_subcommand("pretrain", "masked-LM pretraining on the fold's training text");
  auto* train_baseline = app.add_subcommand("train-baseline", "fit the TF-IDF SVM / softmax baselines");
  auto* train_encoder = app.add_subcommand("train-encoder", "fine-tune the encoder classifier");
  auto* augment = app.add_subcommand("augment", "masked data augmentation of the training fold");
  auto* distill = app.add_subcommand("distill", "born-again distillation generations");
  auto* resample_cmd = app.add_subcommand("resample", "under/oversample the training fold");
  auto* evaluate = app.add_subcommand("evaluate", "score a trained model on the fold's test part");
  auto* report = app.add_subcommand("report", "aggregate evaluated metrics into report.md/csv");
  auto* run = app.add_subcommand("run-experiment", "full grid with cross-validation and report");
  for (auto* sub : app.get_subcommands({})) add_common(sub, common);

  train_baseline->add_option("--model", baseline, "svm or softmax (default: both)");
  train_encoder->add_option("--init", init, "pretrained or random (default: config init)");
  train_encoder->add_option("--resample", resample, "none, undersample or oversample (default: config)");
  resample_cmd->add_option("--resample", resample, "undersample or oversample (default: config)");
  evaluate->add_option("--model", model,
                       "svm, softmax, encoder_<pretrained|random>_<none|undersample|oversample>, ban<g>")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto ctx = make_context(common);
    const auto mode = [&] {
      return resample.empty() ? ctx.config.resample : parse_resample_mode(resample);
    };
    if (synth->parsed()) cli::run_synth(ctx);
    else if (vocab->parsed()) cli::run_build_vocab(ctx);
    else if (pretrain->parsed()) cli::run_pretrain(ctx);
    else if (train_baseline->parsed()) {
      std::optional<BaselineKind> only;
      if (!baseline.empty()) only = parse_baseline_kind(baseline);
      cli::run_train_baseline(ctx, only);
    } else if (train_encoder->parsed()) {
      cli::run_train_encoder(ctx, {init.empty() ? ctx.config.init : init, mode()});
    } else if (augment->parsed()) cli::run_augment(ctx);
    else if (distill->parsed()) cli::run_distill(ctx);
    else if (resample_cmd->parsed()) cli::run_resample(ctx, mode());
    else if (evaluate->parsed()) cli::run_evaluate(ctx, model);
    else if (report->parsed()) cli::run_report(ctx);
    else if (run->parsed()) cli::run_full_experiment(ctx);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
