#include "mceage/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "mceage/error.hpp"
#include "mceage/random.hpp"

namespace mceage {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<float> slicePixels(const MceVolume& mce, View view, int index) {
  return extractSlice(mce.data, view, index).pixels;
}

int viewSlot(View v) { return static_cast<int>(v); }

}  // namespace

void SliceWindow::validate() const {
  if (m < 1) throw InvalidArgument("window slice count must be at least 1");
  if (a < 0 || b < 0) throw InvalidArgument("window offsets must be non-negative");
}

void AugmentationConfig::validate() const {
  for (int o : centerOffsets)
    if (o == 0) throw InvalidArgument("augmentation offsets exclude 0");
}

int roundHalfUp(double x) { return static_cast<int>(std::floor(x + 0.5)); }

std::vector<int> buildWindow(double c, const SliceWindow& w, int stackSize) {
  w.validate();
  if (!std::isfinite(c)) throw InvalidArgument("window centre must be finite");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(w.m));
  auto put = [&](double x) { out.push_back(std::clamp(roundHalfUp(x), 0, stackSize - 1)); };
  if (w.m == 1) {
    put(c);
  } else {
    const double lo = c - w.a;
    const double step = static_cast<double>(w.a + w.b) / (w.m - 1);
    for (int i = 0; i < w.m; ++i) put(lo + step * i);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::vector<int>> augmentWindows(double c, const SliceWindow& w, const AugmentationConfig& aug,
                                             int stackSize) {
  aug.validate();
  std::vector<std::vector<int>> out{buildWindow(c, w, stackSize)};
  for (int o : aug.centerOffsets) {
    auto win = buildWindow(c + o, w, stackSize);
    if (std::find(out.begin(), out.end(), win) == out.end()) out.push_back(std::move(win));
  }
  return out;
}

ViewCenters noCenters() { return {kNaN, kNaN, kNaN}; }

void PipelineConfig::validate() const {
  if (views.empty()) throw InvalidArgument("at least one view is required");
  for (std::size_t i = 0; i < views.size(); ++i)
    for (std::size_t j = i + 1; j < views.size(); ++j)
      if (views[i] == views[j]) throw InvalidArgument("duplicate view " + nameOf(views[i]));
  window.validate();
  augmentation.validate();
  if (stage1Positions.empty()) throw InvalidArgument("stage-1 positions are empty");
  for (double p : stage1Positions)
    if (!(p >= 0.0 && p <= kMceSamples - 1)) throw InvalidArgument("stage-1 position outside the stack");
  if (fixedCenter && !std::isfinite(*fixedCenter)) throw InvalidArgument("fixed centre must be finite");
  if (igSteps < 1) throw InvalidArgument("igSteps must be positive");
  train.validate();
}

RegressorConfig PipelineConfig::finalRegressorConfig() const {
  RegressorConfig rc;
  rc.branches = static_cast<int>(views.size()) * window.m;
  rc.branch = branch;
  rc.branch.inputSize = kMceSamples;
  rc.fusion = fusion;
  rc.seed = train.seed;
  return rc;
}

RegressorConfig PipelineConfig::stage1RegressorConfig(View view) const {
  RegressorConfig rc = finalRegressorConfig();
  rc.branches = static_cast<int>(stage1Positions.size());
  rc.seed = deriveSeed(train.seed, 0x5100 + static_cast<std::uint64_t>(viewSlot(view)));
  return rc;
}

PipelineConfig phantomPipelineConfig() {
  PipelineConfig cfg;
  cfg.fusion.hiddenDropout = 0.1;
  cfg.fusion.outputDropout = 0.1;
  cfg.train.eta1 = 3e-3;
  cfg.train.maxEpochs = 40;
  cfg.train.earlyStopPatience = 10;
  return cfg;
}

nlohmann::json toJson(const PipelineConfig& cfg) {
  nlohmann::json views = nlohmann::json::array();
  for (View v : cfg.views) views.push_back(nameOf(v));
  nlohmann::json j{{"views", views},
                   {"window", {{"m", cfg.window.m}, {"a", cfg.window.a}, {"b", cfg.window.b}}},
                   {"augmentation_offsets", cfg.augmentation.centerOffsets},
                   {"augment", cfg.augment},
                   {"stage1_positions", cfg.stage1Positions},
                   {"ig_steps", cfg.igSteps},
                   {"model", toJson(cfg.finalRegressorConfig())},
                   {"train", toJson(cfg.train)}};
  j["fixed_center"] = cfg.fixedCenter ? nlohmann::json(*cfg.fixedCenter) : nlohmann::json(nullptr);
  return j;
}

PipelineConfig pipelineConfigFromJson(const nlohmann::json& j) {
  PipelineConfig cfg;
  try {
    cfg.views.clear();
    for (const auto& v : j.at("views")) cfg.views.push_back(viewFromString(v.get<std::string>()));
    const auto& w = j.at("window");
    cfg.window = {w.at("m").get<int>(), w.at("a").get<int>(), w.at("b").get<int>()};
    cfg.augmentation.centerOffsets = j.at("augmentation_offsets").get<std::vector<int>>();
    cfg.augment = j.at("augment").get<bool>();
    cfg.stage1Positions = j.at("stage1_positions").get<std::vector<double>>();
    cfg.igSteps = j.at("ig_steps").get<int>();
    const RegressorConfig rc = regressorConfigFromJson(j.at("model"));
    cfg.branch = rc.branch;
    cfg.fusion = rc.fusion;
    cfg.train = trainConfigFromJson(j.at("train"));
    if (j.contains("fixed_center") && !j.at("fixed_center").is_null())
      cfg.fixedCenter = j.at("fixed_center").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("pipeline config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RegressionSet positionSet(const std::vector<MceSample>& samples, View view, const std::vector<double>& positions) {
  RegressionSet set;
  for (const auto& s : samples) {
    RegressionSet::Example ex;
    ex.target = s.age;
    for (double p : positions) {
      ex.slices.push_back(static_cast<int>(set.pool.size()));
      set.pool.push_back(slicePixels(s.mce, view, roundHalfUp(p)));
    }
    set.examples.push_back(std::move(ex));
  }
  return set;
}

MultiBranchRegressor<float> trainImportanceModel(const std::vector<MceSample>& train, View view,
                                                 const PipelineConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw InvalidArgument("no training samples for the importance model");
  MultiBranchRegressor<float> model(cfg.stage1RegressorConfig(view));
  initialize(model);
  TrainConfig tc = cfg.train;
  tc.seed = model.config().seed;
  trainStageOne(model, positionSet(train, view, cfg.stage1Positions), tc);
  return model;
}

double selectCenter(const MultiBranchRegressor<double>& importance, const MceVolume& mce, View view,
                    const std::vector<double>& positions, int igSteps, AttributionResult* detail) {
  std::vector<std::vector<float>> slices;
  for (double p : positions) slices.push_back(slicePixels(mce, view, roundHalfUp(p)));
  std::vector<const float*> ptrs;
  for (const auto& s : slices) ptrs.push_back(s.data());
  AttributionResult r = attributeFusion(importance, ptrs, positions, igSteps);
  if (detail) *detail = r;
  return r.center;
}

Stage1Result stage1SelectCenters(const std::vector<MceSample>& train, View view, const PipelineConfig& cfg) {
  Stage1Result out{trainImportanceModel(train, view, cfg), {}};
  const auto dbl = out.model.cast<double>();
  out.centers.reserve(train.size());
  for (const auto& s : train) out.centers.push_back(selectCenter(dbl, s.mce, view, cfg.stage1Positions, cfg.igSteps));
  return out;
}

std::vector<std::vector<int>> sampleWindows(const ViewCenters& centers, const PipelineConfig& cfg, bool augmented) {
  std::vector<int> offsets{0};
  if (augmented)
    for (int o : cfg.augmentation.centerOffsets) offsets.push_back(o);
  std::vector<std::vector<int>> out;
  for (int o : offsets) {
    std::vector<int> combo;
    for (View v : cfg.views) {
      const double c = centers[static_cast<std::size_t>(viewSlot(v))];
      if (!std::isfinite(c)) throw InvalidArgument("missing " + nameOf(v) + " centre");
      auto w = buildWindow(c + o, cfg.window);
      // Clamping can merge indices; repeat the last so every branch gets a slice.
      while (static_cast<int>(w.size()) < cfg.window.m) w.push_back(w.back());
      combo.insert(combo.end(), w.begin(), w.end());
    }
    if (std::find(out.begin(), out.end(), combo) == out.end()) out.push_back(std::move(combo));
  }
  return out;
}

RegressionSet windowSet(const std::vector<MceSample>& samples, const std::vector<ViewCenters>& centers,
                        const PipelineConfig& cfg, bool augmented) {
  if (samples.size() != centers.size()) throw InvalidArgument("one centre set per sample is required");
  RegressionSet set;
  const int m = cfg.window.m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::map<std::pair<int, int>, int> pooled;  // (view slot, slice) -> pool index
    for (const auto& combo : sampleWindows(centers[i], cfg, augmented)) {
      RegressionSet::Example ex;
      ex.target = samples[i].age;
      for (std::size_t k = 0; k < combo.size(); ++k) {
        const View v = cfg.views[k / static_cast<std::size_t>(m)];
        const auto key = std::make_pair(viewSlot(v), combo[k]);
        auto it = pooled.find(key);
        if (it == pooled.end()) {
          it = pooled.emplace(key, static_cast<int>(set.pool.size())).first;
          set.pool.push_back(slicePixels(samples[i].mce, v, combo[k]));
        }
        ex.slices.push_back(it->second);
      }
      set.examples.push_back(std::move(ex));
    }
  }
  return set;
}

ViewCenters AgeModel::centersFor(const MceVolume& mce) const {
  ViewCenters c = noCenters();
  for (std::size_t i = 0; i < config.views.size(); ++i) {
    const View v = config.views[i];
    if (config.fixedCenter) {
      c[static_cast<std::size_t>(viewSlot(v))] = *config.fixedCenter;
    } else {
      if (i >= importance.size()) throw InvalidArgument("missing importance model for " + nameOf(v));
      c[static_cast<std::size_t>(viewSlot(v))] =
          selectCenter(importance[i].cast<double>(), mce, v, config.stage1Positions, config.igSteps);
    }
  }
  return c;
}

FinalTraining trainFinalModel(const std::vector<MceSample>& train, const std::vector<MceSample>& val,
                              const std::vector<ViewCenters>& trainCenters, const std::vector<ViewCenters>& valCenters,
                              const PipelineConfig& cfg) {
  cfg.validate();
  if (train.empty() || val.empty()) throw InvalidArgument("training and validation samples are required");
  const RegressionSet trainSet = windowSet(train, trainCenters, cfg, cfg.augment);
  const RegressionSet valSet = windowSet(val, valCenters, cfg, false);
  FinalTraining out{MultiBranchRegressor<float>(cfg.finalRegressorConfig()), {}, trainSet.examples.size(),
                    valSet.examples.size()};
  initialize(out.model);
  out.history = trainTwoStage(out.model, trainSet, valSet, cfg.train);
  return out;
}

AgeModel trainAgeModel(const std::vector<MceSample>& train, const std::vector<MceSample>& val,
                       const PipelineConfig& cfg) {
  cfg.validate();
  AgeModel model;
  model.config = cfg;
  std::vector<ViewCenters> trainCenters(train.size(), noCenters());
  for (View v : cfg.views) {
    const auto slot = static_cast<std::size_t>(viewSlot(v));
    if (cfg.fixedCenter) {
      for (auto& c : trainCenters) c[slot] = *cfg.fixedCenter;
      continue;
    }
    Stage1Result s1 = stage1SelectCenters(train, v, cfg);
    for (std::size_t i = 0; i < train.size(); ++i) trainCenters[i][slot] = s1.centers[i];
    model.importance.push_back(std::move(s1.model));
  }
  std::vector<ViewCenters> valCenters;
  valCenters.reserve(val.size());
  for (const auto& s : val) valCenters.push_back(model.centersFor(s.mce));
  FinalTraining fin = trainFinalModel(train, val, trainCenters, valCenters, cfg);
  model.regressor = std::move(fin.model);
  model.history = std::move(fin.history);
  return model;
}

SidePrediction predictSide(const AgeModel& model, const MceVolume& mce) {
  SidePrediction out;
  out.centers = model.centersFor(mce);
  const auto combo = sampleWindows(out.centers, model.config, false).front();
  const int m = model.config.window.m;
  std::vector<std::vector<float>> slices;
  for (std::size_t k = 0; k < combo.size(); ++k)
    slices.push_back(slicePixels(mce, model.config.views[k / static_cast<std::size_t>(m)], combo[k]));
  for (std::size_t v = 0; v < model.config.views.size(); ++v)
    out.slices.emplace_back(combo.begin() + static_cast<std::ptrdiff_t>(v * m),
                            combo.begin() + static_cast<std::ptrdiff_t>((v + 1) * m));
  std::vector<const float*> ptrs;
  for (const auto& s : slices) ptrs.push_back(s.data());
  out.age = static_cast<double>(model.regressor.forward(ptrs));
  return out;
}

SubjectEstimate fuseSides(std::optional<double> right, std::optional<double> left) {
  if (!right && !left) throw InvalidArgument("no clavicle available for the subject");
  SubjectEstimate e;
  e.rightAge = right;
  e.leftAge = left;
  if (right && left)
    e.fusedAge = 0.5 * (*right + *left);
  else
    e.fusedAge = right ? *right : *left;
  return e;
}

SubjectEstimate predictSubject(const AgeModel& model, const std::optional<MceVolume>& right,
                               const std::optional<MceVolume>& left, std::array<SidePrediction, 2>* sides) {
  if (!right && !left) throw InvalidArgument("no clavicle available for the subject");
  std::optional<double> r;
  std::optional<double> l;
  if (right) {
    SidePrediction p = predictSide(model, *right);
    r = p.age;
    if (sides) (*sides)[0] = std::move(p);
  }
  if (left) {
    SidePrediction p = predictSide(model, *left);
    l = p.age;
    if (sides) (*sides)[1] = std::move(p);
  }
  return fuseSides(r, l);
}

void applyCalibration(SubjectEstimate& est, const ConformalCalibrator& calibrator, double beta, double threshold) {
  est.interval = interval(est.fusedAge, calibrator.d(beta));
  est.decision = minimumAgeDecision(*est.interval, threshold);
}

nlohmann::json predictionReport(const std::string& subject, const SubjectEstimate& est,
                                const std::array<std::optional<SidePrediction>, 2>& sides,
                                const ConformalCalibrator* calibrator, const ReportOptions& opt,
                                const std::vector<std::string>& heatmaps) {
  auto opt2json = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"subject", subject},
                   {"right_age", opt2json(est.rightAge)},
                   {"left_age", opt2json(est.leftAge)},
                   {"fused_age", est.fusedAge}};
  nlohmann::json sj = nlohmann::json::object();
  const char* names[2] = {"right", "left"};
  for (int s = 0; s < 2; ++s) {
    if (!sides[s]) continue;
    nlohmann::json centers = nlohmann::json::object();
    nlohmann::json slices = nlohmann::json::object();
    for (int v = 0; v < 3; ++v) {
      const double c = sides[s]->centers[static_cast<std::size_t>(v)];
      if (std::isfinite(c)) centers[nameOf(static_cast<View>(v))] = c;
    }
    // Slice lists follow the centre order of the views present.
    std::size_t k = 0;
    for (int v = 0; v < 3 && k < sides[s]->slices.size(); ++v)
      if (std::isfinite(sides[s]->centers[static_cast<std::size_t>(v)]))
        slices[nameOf(static_cast<View>(v))] = sides[s]->slices[k++];
    sj[names[s]] = {{"age", sides[s]->age}, {"centers", centers}, {"slices", slices}};
  }
  j["sides"] = sj;
  nlohmann::json intervals = nlohmann::json::array();
  if (calibrator) {
    for (double beta : opt.betas) {
      const double d = calibrator->d(beta);
      const AgeInterval iv = interval(est.fusedAge, d);
      intervals.push_back({{"beta", beta},
                           {"d", d},
                           {"lo", iv.lo},
                           {"hi", iv.hi},
                           {"decision", nameOf(minimumAgeDecision(iv, opt.threshold))}});
    }
  }
  j["intervals"] = intervals;
  j["threshold"] = opt.threshold;
  j["heatmaps"] = heatmaps;
  return j;
}

void saveAgeModel(const std::filesystem::path& dir, AgeModel& model, const nlohmann::json& metadata) {
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"format", "mceage-age-model"},
                   {"version", 1},
                   {"config", toJson(model.config)},
                   {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata},
                   {"importance", nlohmann::json::array()},
                   {"regressor", "regressor.ckpt"},
                   {"best_epoch", model.history.bestEpoch},
                   {"best_val_mae", model.history.bestValMae}};
  for (std::size_t i = 0; i < model.importance.size(); ++i) {
    const std::string name = "importance_" + nameOf(model.config.views[i]) + ".ckpt";
    saveCheckpoint(dir / name, model.importance[i]);
    j["importance"].push_back(name);
  }
  saveCheckpoint(dir / "regressor.ckpt", model.regressor);
  std::ofstream out(dir / "model.json");
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + (dir / "model.json").string());
  out << j.dump(2) << '\n';
}

AgeModel loadAgeModel(const std::filesystem::path& dir, nlohmann::json* metadata) {
  const auto path = dir / "model.json";
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  nlohmann::json j;
  AgeModel model;
  try {
    in >> j;
    if (j.at("format") != "mceage-age-model") throw FormatError(FormatError::Kind::MalformedHeader, "not an age model");
    if (j.at("version") != 1) throw FormatError(FormatError::Kind::Version, "unsupported age model version");
    model.config = pipelineConfigFromJson(j.at("config"));
    for (const auto& name : j.at("importance")) model.importance.push_back(loadCheckpoint(dir / name.get<std::string>()));
    model.regressor = loadCheckpoint(dir / j.at("regressor").get<std::string>());
    model.history.bestEpoch = j.value("best_epoch", -1);
    model.history.bestValMae = j.value("best_val_mae", 0.0);
    if (metadata) *metadata = j.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": " + e.what());
  }
  if (!model.config.fixedCenter && model.importance.size() != model.config.views.size())
    throw FormatError(FormatError::Kind::SizeMismatch, "importance model count does not match the views");
  if (model.regressor.config().branches != model.config.finalRegressorConfig().branches)
    throw FormatError(FormatError::Kind::SizeMismatch, "regressor branch count does not match the window");
  return model;
}

}  // namespace mceage
