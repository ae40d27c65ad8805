// mceage command-line driver.
//
// Exit codes: 0 success, 1 other failure, 2 missing input artifact,
// 3 configuration or usage error, 4 corrupt or unreadable artifact,
// 5 numerical failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "mceage/error.hpp"

using namespace mceage;
using namespace mceage::cli;

namespace {

struct Hyper {
  std::vector<std::string> views{"axial", "coronal"};
  int m = 2;
  int a = 0;
  int b = 10;
  std::vector<int> offsets{-2, 2, -4, 4};
  bool noAugment = false;
  std::optional<double> fixedCenter;
  int igSteps = 256;
  int blocks = 4;
  int baseChannels = 8;
  int features = 64;
  double hiddenDropout = 0.1;
  double outputDropout = 0.1;
  double eta1 = 3e-3;
  int batchSize = 4;
  int epochs = 40;
  int patience = 10;
};

void addGlobals(CLI::App& app, RunConfig& cfg, Hyper& h) {
  app.set_config("--config", "", "key = value configuration file; flags given on the command line win");
  app.add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "worker threads; 1 is fully sequential")->capture_default_str();
  app.add_option("--views", h.views, "slice views (axial, coronal, sagittal)")->capture_default_str();
  app.add_option("--window-m", h.m, "slices per view")->capture_default_str();
  app.add_option("--window-a", h.a, "window extent below the centre")->capture_default_str();
  app.add_option("--window-b", h.b, "window extent above the centre")->capture_default_str();
  app.add_option("--offsets", h.offsets, "centre offsets for augmentation")->capture_default_str();
  app.add_flag("--no-augment", h.noAugment, "train on the base window only");
  app.add_option("--fixed-center", h.fixedCenter, "use this window centre instead of IG selection");
  app.add_option("--ig-steps", h.igSteps, "Riemann steps for integrated gradients")->capture_default_str();
  app.add_option("--blocks", h.blocks, "conv blocks per branch")->capture_default_str();
  app.add_option("--base-channels", h.baseChannels, "channels of the first conv block")->capture_default_str();
  app.add_option("--features", h.features, "branch feature length")->capture_default_str();
  app.add_option("--hidden-dropout", h.hiddenDropout, "fusion hidden dropout")->capture_default_str();
  app.add_option("--output-dropout", h.outputDropout, "fusion output dropout")->capture_default_str();
  app.add_option("--eta1", h.eta1, "stage-1 peak learning rate")->capture_default_str();
  app.add_option("--batch-size", h.batchSize, "minibatch size")->capture_default_str();
  app.add_option("--epochs", h.epochs, "stage-2 epoch limit")->capture_default_str();
  app.add_option("--patience", h.patience, "early-stopping patience")->capture_default_str();
  app.add_option("--betas", cfg.betas, "interval coverage levels")->capture_default_str();
  app.add_option("--threshold", cfg.threshold, "minimum age threshold in years")->capture_default_str();
  app.add_option("--trees", cfg.trees, "random forest size")->capture_default_str();
  app.add_option("--shape-samples", cfg.shapeSamples, "surface samples per shape distribution")->capture_default_str();
  app.add_option("--bootstrap", cfg.bootstrap, "bootstrap resamples")->capture_default_str();
}

void finalize(RunConfig& cfg, const Hyper& h) {
  PipelineConfig& p = cfg.pipeline;
  p.views.clear();
  try {
    for (const auto& v : h.views) p.views.push_back(viewFromString(v));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  p.window = {h.m, h.a, h.b};
  p.augmentation.centerOffsets = h.offsets;
  p.augment = !h.noAugment;
  p.fixedCenter = h.fixedCenter;
  p.igSteps = h.igSteps;
  p.branch.blocks = h.blocks;
  p.branch.baseChannels = h.baseChannels;
  p.branch.features = h.features;
  p.fusion.hiddenDropout = h.hiddenDropout;
  p.fusion.outputDropout = h.outputDropout;
  p.train.eta1 = h.eta1;
  p.train.batchSize = h.batchSize;
  p.train.maxEpochs = h.epochs;
  p.train.earlyStopPatience = h.patience;
  p.train.seed = cfg.seed;
  cfg.validate();
}

CLI::App* sub(CLI::App& app, const std::string& name, const std::string& desc) {
  CLI::App* s = app.add_subcommand(name, desc);
  s->fallthrough();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clavicle-based forensic age estimation"};
  app.require_subcommand(1);
  RunConfig cfg;
  Hyper h;
  addGlobals(app, cfg, h);

  PhantomGenOptions pg;
  auto* cPg = sub(app, "phantom-gen", "generate a synthetic phantom dataset");
  cPg->add_option("--out", pg.out, "dataset directory")->required();
  cPg->add_option("--n", pg.n, "subjects")->capture_default_str();
  cPg->add_option("--age-lo", pg.ageLo, "youngest age")->capture_default_str();
  cPg->add_option("--age-hi", pg.ageHi, "oldest age")->capture_default_str();

  DetectTrainOptions dt;
  auto* cDt = sub(app, "detect-train", "train the clavicle detector on the training split");
  cDt->add_option("--data", dt.data, "dataset directory")->required();
  cDt->add_option("--out", dt.out, "output directory")->required();
  cDt->add_option("--labels", dt.labels, "annotator file listing clavicle component ids per subject");

  DetectOptions de;
  auto* cDe = sub(app, "detect", "detect and lateralize clavicles");
  cDe->add_option("--data", de.data, "dataset directory")->required();
  cDe->add_option("--detector", de.detector, "detector.json")->required();
  cDe->add_option("--out", de.out, "output directory")->required();
  cDe->add_option("--split", de.split, "train, val or test (default: all subjects)");

  ExtractOptions ex;
  auto* cEx = sub(app, "extract-mce", "localize and standardize the medial epiphyses");
  cEx->add_option("--data", ex.data, "dataset directory")->required();
  cEx->add_option("--detections", ex.detections, "detect output directory");
  cEx->add_flag("--truth", ex.truth, "use the phantom's ground-truth clavicle boxes");
  cEx->add_option("--out", ex.out, "output directory")->required();

  SelectOptions se;
  auto* cSe = sub(app, "select-slices", "train slice-importance models and select window centres");
  cSe->add_option("--data", se.data, "dataset directory")->required();
  cSe->add_option("--mce", se.mce, "extract-mce output directory")->required();
  cSe->add_option("--out", se.out, "output directory")->required();

  TrainAgeOptions ta;
  auto* cTa = sub(app, "train-age", "train the multi-branch age regressor");
  cTa->add_option("--data", ta.data, "dataset directory")->required();
  cTa->add_option("--mce", ta.mce, "extract-mce output directory")->required();
  cTa->add_option("--slices", ta.slices, "select-slices output directory")->required();
  cTa->add_option("--out", ta.out, "model directory")->required();

  CalibrateOptions ca;
  auto* cCa = sub(app, "calibrate", "conformal calibration on held-out residuals");
  cCa->add_option("--data", ca.data, "dataset directory")->required();
  cCa->add_option("--mce", ca.mce, "extract-mce output directory")->required();
  cCa->add_option("--model", ca.model, "model directory")->required();
  cCa->add_option("--out", ca.out, "output directory")->required();
  cCa->add_option("--split", ca.split, "calibration split")->capture_default_str();

  PredictOptions pr;
  auto* cPr = sub(app, "predict", "predict ages with optional intervals and heatmaps");
  cPr->add_option("--data", pr.data, "dataset directory")->required();
  cPr->add_option("--mce", pr.mce, "extract-mce output directory")->required();
  cPr->add_option("--model", pr.model, "model directory")->required();
  cPr->add_option("--calibrator", pr.calibrator, "calibrator.json");
  cPr->add_option("--out", pr.out, "output directory")->required();
  cPr->add_option("--split", pr.split, "split to predict")->capture_default_str();
  cPr->add_flag("--heatmaps", pr.heatmaps, "write pixel attribution maps");

  EvaluateOptions ev;
  auto* cEv = sub(app, "evaluate", "error statistics and the coverage table");
  cEv->add_option("--data", ev.data, "dataset directory")->required();
  cEv->add_option("--predictions", ev.predictions, "predictions.json")->required();
  cEv->add_option("--calibrator", ev.calibrator, "calibrator.json")->required();
  cEv->add_option("--out", ev.out, "output directory")->required();

  CompareOptions co;
  auto* cCo = sub(app, "compare", "paired comparison of two prediction files");
  cCo->add_option("--data", co.data, "dataset directory")->required();
  cCo->add_option("--a", co.a, "first predictions.json")->required();
  cCo->add_option("--b", co.b, "second predictions.json")->required();
  cCo->add_option("--out", co.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    finalize(cfg, h);
    if (cPg->parsed()) runPhantomGen(pg, cfg);
    if (cDt->parsed()) runDetectTrain(dt, cfg);
    if (cDe->parsed()) runDetect(de, cfg);
    if (cEx->parsed()) runExtractMce(ex, cfg);
    if (cSe->parsed()) runSelectSlices(se, cfg);
    if (cTa->parsed()) runTrainAge(ta, cfg);
    if (cCa->parsed()) runCalibrate(ca, cfg);
    if (cPr->parsed()) runPredict(pr, cfg);
    if (cEv->parsed()) runEvaluate(ev, cfg);
    if (cCo->parsed()) runCompare(co, cfg);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: missing artifact " << e.path.string() << '\n';
    return kExitMissingArtifact;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadArtifact;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
