#include "commands.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include "mceage/attribution.hpp"
#include "mceage/conformal.hpp"
#include "mceage/descriptors.hpp"
#include "mceage/detector.hpp"
#include "mceage/error.hpp"
#include "mceage/mesh.hpp"
#include "mceage/phantom.hpp"
#include "mceage/pipeline.hpp"
#include "mceage/random.hpp"
#include "mceage/roi.hpp"
#include "mceage/stats.hpp"

namespace mceage::cli {

namespace {

std::mutex logMutex;

void log(const std::string& msg) {
  std::lock_guard<std::mutex> lock(logMutex);
  std::cout << msg << std::endl;
}

nlohmann::json boxJson(const AxisBox& b) { return {b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z}; }

AxisBox boxFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 6) throw FormatError(FormatError::Kind::MalformedHeader, "box needs 6 numbers");
  AxisBox b;
  b.min = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  b.max = {j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
  return b;
}

std::size_t ordinalOf(const DatasetIndex& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.subjects.size(); ++i)
    if (ds.subjects[i].id == id) return i;
  throw InvalidArgument("unknown subject " + id);
}

std::vector<std::string> allIds(const DatasetIndex& ds) {
  std::vector<std::string> ids;
  for (const auto& s : ds.subjects) ids.push_back(s.id);
  return ids;
}

constexpr std::array<Laterality, 2> kSides{Laterality::Right, Laterality::Left};

std::array<std::optional<MceVolume>, 2> loadSides(const fs::path& mceDir, const std::string& id) {
  std::array<std::optional<MceVolume>, 2> out;
  for (int s = 0; s < 2; ++s) {
    const fs::path p = mcePath(mceDir, id, kSides[s]);
    if (fs::exists(p)) out[s] = loadMce(p);
  }
  return out;
}

struct SampleKey {
  std::string subject;
  Laterality side;
};

// Every MCE of the listed subjects, right before left.
std::vector<MceSample> loadSamples(const DatasetIndex& ds, const fs::path& mceDir, const std::vector<std::string>& ids,
                                   std::vector<SampleKey>* keys = nullptr) {
  std::vector<MceSample> out;
  for (const auto& id : ids) {
    auto sides = loadSides(mceDir, id);
    for (int s = 0; s < 2; ++s) {
      if (!sides[s]) continue;
      out.push_back({id, std::move(*sides[s]), ds.subject(id).age});
      if (keys) keys->push_back({id, kSides[s]});
    }
  }
  if (out.empty()) throw MissingArtifact(mceDir / "<subject>_<side>.ctv");
  return out;
}

nlohmann::json centersJson(const ViewCenters& c) {
  nlohmann::json j = nlohmann::json::object();
  for (int v = 0; v < 3; ++v)
    if (std::isfinite(c[static_cast<std::size_t>(v)])) j[nameOf(static_cast<View>(v))] = c[static_cast<std::size_t>(v)];
  return j;
}

ViewCenters centersFromJson(const nlohmann::json& j) {
  ViewCenters c = noCenters();
  for (auto it = j.begin(); it != j.end(); ++it)
    c[static_cast<std::size_t>(viewFromString(it.key()))] = it.value().get<double>();
  return c;
}

std::string keyOf(const std::string& subject, Laterality side) { return subject + "/" + nameOf(side); }

std::vector<double> truthsOf(const DatasetIndex& ds, const std::vector<std::string>& ids) {
  std::vector<double> t;
  for (const auto& id : ids) t.push_back(ds.subject(id).age);
  return t;
}

struct PredictionFile {
  std::vector<std::string> ids;
  std::vector<double> fused;
};

PredictionFile readPredictions(const fs::path& path) {
  const nlohmann::json j = readJson(path);
  PredictionFile p;
  try {
    if (j.at("format") != "mceage-predictions")
      throw FormatError(FormatError::Kind::MalformedHeader, path.string() + " is not a predictions file");
    for (const auto& s : j.at("subjects")) {
      p.ids.push_back(s.at("subject").get<std::string>());
      p.fused.push_back(s.at("fused_age").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": " + e.what());
  }
  return p;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

// phantom-gen

void runPhantomGen(const PhantomGenOptions& o, const RunConfig& cfg) {
  if (o.n < 25) throw ConfigError("--n must be at least 25");
  if (!(o.ageLo < o.ageHi)) throw ConfigError("--age-lo must be below --age-hi");
  const PhantomDataset ds = generateDataset(o.n, o.ageLo, o.ageHi, cfg.seed);
  fs::create_directories(o.out / "scenes");
  log("phantom-gen: " + std::to_string(o.n) + " subjects into " + o.out.string());

  parallelFor(ds.subjects.size(), cfg.jobs, [&](std::size_t i) {
    const std::string id = subjectId(static_cast<int>(i));
    const PhantomScene scene = generateScene(ds.subjects[i]);
    saveScene(o.out / "scenes" / (id + ".ctv"), scene);
    const ComponentSet comps = boneComponents(scene.volume);
    writeJson(o.out / "scenes" / (id + ".json"), sidecarJson(scene, componentObjectLabels(comps.components, scene.labels)));
    log("  " + id + " age " + fixed(scene.trueAge, 2) + ", " + std::to_string(comps.components.size()) + " components");
  });

  nlohmann::json subjects = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.subjects.size(); ++i)
    subjects.push_back(
        {{"id", subjectId(static_cast<int>(i))}, {"age", ds.subjects[i].age}, {"spec", toJson(ds.subjects[i])}});
  auto ids = [](const std::vector<int>& idx) {
    std::vector<std::string> out;
    for (int i : idx) out.push_back(subjectId(i));
    return out;
  };
  writeJson(o.out / "dataset.json", {{"format", "mceage-phantom-dataset"},
                                     {"version", 1},
                                     {"n", o.n},
                                     {"age_range", {o.ageLo, o.ageHi}},
                                     {"seed", cfg.seed},
                                     {"subjects", subjects},
                                     {"split",
                                      {{"train", ids(ds.split.train)},
                                       {"val", ids(ds.split.val)},
                                       {"test", ids(ds.split.test)}}}});
  writeManifest(o.out, "phantom-gen", cfg, {}, {{"n", o.n}, {"age_lo", o.ageLo}, {"age_hi", o.ageHi}});
}

// detect-train

void runDetectTrain(const DetectTrainOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const auto& ids = ds.train;
  std::map<std::string, std::set<int>> annotated;
  if (!o.labels.empty()) {
    std::ifstream in(require(o.labels));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string subject;
      if (!(ls >> subject) || subject[0] == '#') continue;
      int c;
      auto& set = annotated[subject];
      while (ls >> c) set.insert(c);
    }
  }

  log("detect-train: meshing " + std::to_string(ids.size()) + " training scenes");
  std::vector<std::vector<TriangleMesh>> meshes(ids.size());
  std::vector<std::vector<int>> labels(ids.size());
  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    meshes[i] = boneComponents(loadVolume(require(ds.volumePath(ids[i])))).components;
    auto ann = annotated.find(ids[i]);
    if (ann != annotated.end()) {
      for (std::size_t c = 0; c < meshes[i].size(); ++c) labels[i].push_back(ann->second.count(static_cast<int>(c)) ? 1 : 0);
      return;
    }
    const nlohmann::json side = readJson(ds.sidecarPath(ids[i]));
    const auto names = side.at("component_labels").get<std::vector<std::string>>();
    if (names.size() != meshes[i].size())
      throw FormatError(FormatError::Kind::SizeMismatch, "component labels do not match the scene for " + ids[i]);
    for (const auto& nm : names) labels[i].push_back(nm == nameOf(ComponentClass::Distractor) ? 0 : 1);
  });

  std::vector<TriangleMesh> pooled;
  for (const auto& m : meshes) pooled.insert(pooled.end(), m.begin(), m.end());
  const DescriptorRanges ranges = rangesFromMeshes(pooled);

  log("detect-train: shape descriptors at " + std::to_string(cfg.shapeSamples) + " samples");
  std::vector<std::vector<FeatureVector>> feats(ids.size());
  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    feats[i] = componentFeatures(meshes[i], ranges, deriveSeed(cfg.seed, ordinalOf(ds, ids[i])), cfg.shapeSamples);
  });

  LabeledFeatures table;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t c = 0; c < feats[i].size(); ++c) {
      table.rows.push_back(feats[i][c]);
      table.componentIds.push_back(ids[i] + ":" + std::to_string(c));
      table.labels.push_back(labels[i][c]);
    }
  fs::create_directories(o.out);
  writeFeatureCsv(o.out / "features.csv", table);

  ForestConfig fc;
  fc.trees = cfg.trees;
  const DetectorModel model = trainDetector(table.rows, table.labels, ranges, cfg.seed, fc, cfg.shapeSamples);
  saveDetector(o.out / "detector.json", model);
  log("detect-train: " + std::to_string(table.rows.size()) + " components, " + std::to_string(cfg.trees) + " trees");

  std::vector<fs::path> inputs{o.data / "dataset.json"};
  if (!o.labels.empty()) inputs.push_back(o.labels);
  writeManifest(o.out, "detect-train", cfg, inputs, {{"components", table.rows.size()}});
}

// detect

void runDetect(const DetectOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const DetectorModel model = loadDetector(require(o.detector));
  const std::vector<std::string> ids = o.split.empty() ? allIds(ds) : ds.split(o.split);
  fs::create_directories(o.out);
  log("detect: " + std::to_string(ids.size()) + " scenes");

  std::vector<int> correct(ids.size(), -1);
  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    const HuVolume vol = loadVolume(require(ds.volumePath(id)));
    const auto comps = boneComponents(vol).components;
    const auto feats = componentFeatures(comps, model.ranges, deriveSeed(cfg.seed, ordinalOf(ds, id)), model.shapeSamples);
    const SceneDetection det = detectClavicles(comps, feats, model);

    nlohmann::json components = nlohmann::json::array();
    for (const ComponentScore& sc : det.scores) {
      const TriangleMesh& m = comps[static_cast<std::size_t>(sc.componentId)];
      const GeometricFeatures g = geometricFeatures(m);
      components.push_back({{"id", sc.componentId},
                            {"probability", sc.probability},
                            {"laterality", nameOf(sc.laterality)},
                            {"area_mm2", g.area},
                            {"volume_mm3", g.volume},
                            {"sphericity", g.sphericity},
                            {"box", boxJson(boundingBox(m))}});
    }
    auto pick = [&](const std::optional<int>& c) -> nlohmann::json {
      if (!c) return nullptr;
      return {{"component", *c}, {"box", boxJson(boundingBox(comps[static_cast<std::size_t>(*c)]))}};
    };
    writeJson(o.out / (id + ".json"), {{"format", "mceage-detection"},
                                       {"version", 1},
                                       {"subject", id},
                                       {"rule", nameOf(det.result.rule)},
                                       {"right", pick(det.result.right)},
                                       {"left", pick(det.result.left)},
                                       {"unassigned", pick(det.result.unassigned)},
                                       {"components", components}});

    const fs::path sidecar = ds.sidecarPath(id);
    if (fs::exists(sidecar)) {
      const auto names = readJson(sidecar).at("component_labels").get<std::vector<std::string>>();
      auto is = [&](const std::optional<int>& c, ComponentClass k) {
        return c && static_cast<std::size_t>(*c) < names.size() && names[static_cast<std::size_t>(*c)] == nameOf(k);
      };
      correct[i] = is(det.result.right, ComponentClass::RightClavicle) && is(det.result.left, ComponentClass::LeftClavicle);
    }
    log("  " + id + " " + nameOf(det.result.rule));
  });

  int scored = 0;
  int hits = 0;
  for (int c : correct)
    if (c >= 0) {
      ++scored;
      hits += c;
    }
  nlohmann::json summary{{"scenes", ids.size()}, {"scored", scored}, {"correct", hits}};
  summary["accuracy"] = scored ? nlohmann::json(static_cast<double>(hits) / scored) : nlohmann::json(nullptr);
  writeJson(o.out / "summary.json", summary);
  if (scored) log("detect: " + std::to_string(hits) + "/" + std::to_string(scored) + " scenes with both sides correct");
  writeManifest(o.out, "detect", cfg, {o.data / "dataset.json", o.detector}, {{"split", o.split.empty() ? "all" : o.split}});
}

// extract-mce

void runExtractMce(const ExtractOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  if (!o.truth && o.detections.empty()) throw ConfigError("extract-mce needs --detections or --truth");
  const std::vector<std::string> ids = allIds(ds);
  fs::create_directories(o.out);
  std::vector<nlohmann::json> entries(ids.size());

  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    std::vector<std::pair<Laterality, AxisBox>> boxes;
    if (o.truth) {
      for (const auto& c : readJson(ds.sidecarPath(id)).at("clavicles"))
        boxes.emplace_back(lateralityFromString(c.at("laterality").get<std::string>()), boxFromJson(c.at("mask_box")));
    } else {
      const fs::path p = o.detections / (id + ".json");
      if (!fs::exists(p)) return;  // not part of the detected split
      const nlohmann::json det = readJson(p);
      for (Laterality side : kSides) {
        const auto& d = det.at(nameOf(side));
        if (!d.is_null()) boxes.emplace_back(side, boxFromJson(d.at("box")));
      }
    }
    if (boxes.empty()) {
      entries[i] = {{"subject", id}, {"sides", nlohmann::json::array()}};
      log("  " + id + ": no clavicle");
      return;
    }
    const HuVolume vol = loadVolume(require(ds.volumePath(id)));
    nlohmann::json sides = nlohmann::json::array();
    for (const auto& [side, box] : boxes) {
      saveMce(mcePath(o.out, id, side), localizeMce(box, vol, side));
      sides.push_back(nameOf(side));
    }
    entries[i] = {{"subject", id}, {"sides", sides}};
    log("  " + id + ": " + std::to_string(boxes.size()) + " MCE");
  });

  nlohmann::json index = nlohmann::json::array();
  for (auto& e : entries)
    if (!e.is_null()) index.push_back(std::move(e));
  writeJson(o.out / "index.json", {{"format", "mceage-mce-index"}, {"version", 1}, {"subjects", index}});
  writeManifest(o.out, "extract-mce", cfg, {o.data / "dataset.json"},
                {{"source", o.truth ? "truth" : o.detections.string()}});
}

// select-slices

void runSelectSlices(const SelectOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  std::vector<SampleKey> keys;
  const auto train = loadSamples(ds, require(o.mce), ds.train, &keys);
  const PipelineConfig& pc = cfg.pipeline;
  fs::create_directories(o.out);

  std::vector<ViewCenters> centers(train.size(), noCenters());
  nlohmann::json files = nlohmann::json::array();
  for (View v : pc.views) {
    if (pc.fixedCenter) {
      for (auto& c : centers) c[static_cast<std::size_t>(v)] = *pc.fixedCenter;
      continue;
    }
    log("select-slices: stage 1 for the " + nameOf(v) + " view on " + std::to_string(train.size()) + " clavicles");
    Stage1Result s1 = stage1SelectCenters(train, v, pc);
    for (std::size_t i = 0; i < train.size(); ++i) centers[i][static_cast<std::size_t>(v)] = s1.centers[i];
    const std::string name = "importance_" + nameOf(v) + ".ckpt";
    saveCheckpoint(o.out / name, s1.model);
    files.push_back(name);
  }

  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < train.size(); ++i)
    samples.push_back({{"subject", keys[i].subject}, {"side", nameOf(keys[i].side)}, {"centers", centersJson(centers[i])}});
  writeJson(o.out / "centers.json",
            {{"format", "mceage-centers"}, {"version", 1}, {"importance", files}, {"samples", samples}});
  writeJson(o.out / "config.json", toJson(pc));
  writeManifest(o.out, "select-slices", cfg, {o.data / "dataset.json"}, {{"samples", train.size()}});
}

// train-age

void runTrainAge(const TrainAgeOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const PipelineConfig& pc = cfg.pipeline;
  const PipelineConfig selected = pipelineConfigFromJson(readJson(o.slices / "config.json"));
  if (selected.views != pc.views || selected.fixedCenter != pc.fixedCenter)
    throw ConfigError("views or fixed centre differ from the select-slices run in " + o.slices.string());
  const nlohmann::json cj = readJson(o.slices / "centers.json");

  AgeModel model;
  model.config = pc;
  for (const auto& name : cj.at("importance")) {
    const fs::path p = o.slices / name.get<std::string>();
    model.importance.push_back(loadCheckpoint(require(p)));
  }
  std::map<std::string, ViewCenters> byKey;
  for (const auto& s : cj.at("samples"))
    byKey[s.at("subject").get<std::string>() + "/" + s.at("side").get<std::string>()] = centersFromJson(s.at("centers"));

  std::vector<SampleKey> trainKeys;
  const auto train = loadSamples(ds, require(o.mce), ds.train, &trainKeys);
  const auto val = loadSamples(ds, o.mce, ds.val);
  std::vector<ViewCenters> trainCenters;
  for (const auto& k : trainKeys) {
    auto it = byKey.find(keyOf(k.subject, k.side));
    if (it == byKey.end()) throw MissingArtifact(o.slices / "centers.json");
    trainCenters.push_back(it->second);
  }
  std::vector<ViewCenters> valCenters(val.size());
  parallelFor(val.size(), cfg.jobs, [&](std::size_t i) { valCenters[i] = model.centersFor(val[i].mce); });

  log("train-age: " + std::to_string(train.size()) + " training and " + std::to_string(val.size()) +
      " validation clavicles");
  FinalTraining fin = trainFinalModel(train, val, trainCenters, valCenters, pc);
  model.regressor = std::move(fin.model);
  model.history = std::move(fin.history);
  log("train-age: best epoch " + std::to_string(model.history.bestEpoch) + ", validation MAE " +
      fixed(model.history.bestValMae, 3));

  saveAgeModel(o.out, model, {{"train_examples", fin.trainExamples}, {"val_examples", fin.valExamples}});
  writeJson(o.out / "history.json", {{"stage1_batch_loss", model.history.stage1BatchLoss},
                                     {"stage2_train_loss", model.history.stage2TrainLoss},
                                     {"stage2_val_mae", model.history.stage2ValMae},
                                     {"best_epoch", model.history.bestEpoch},
                                     {"best_val_mae", model.history.bestValMae}});
  writeManifest(o.out, "train-age", cfg, {o.data / "dataset.json", o.slices / "centers.json"},
                {{"train_examples", fin.trainExamples}, {"val_examples", fin.valExamples}});
}

// calibrate

void runCalibrate(const CalibrateOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const AgeModel model = loadAgeModel(require(o.model));
  const auto& ids = ds.split(o.split);
  std::vector<std::optional<double>> fused(ids.size());
  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    auto sides = loadSides(require(o.mce), ids[i]);
    if (sides[0] || sides[1]) fused[i] = predictSubject(model, sides[0], sides[1]).fusedAge;
  });
  std::vector<double> preds;
  std::vector<double> truths;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (fused[i]) {
      preds.push_back(*fused[i]);
      truths.push_back(ds.subject(ids[i]).age);
    }
  if (preds.empty()) throw MissingArtifact(o.mce / "<subject>_<side>.ctv");
  const auto cal = ConformalCalibrator::fromPredictions(
      preds, truths, {{"model_sha256", sha256File(o.model / "regressor.ckpt")}, {"split", o.split}, {"n", preds.size()}});
  fs::create_directories(o.out);
  saveCalibrator(o.out / "calibrator.json", cal);
  std::string line = "calibrate: " + std::to_string(preds.size()) + " subjects;";
  for (double b : cfg.betas) line += " d(" + fixed(b, 2) + ")=" + fixed(cal.d(b), 3);
  log(line);
  writeManifest(o.out, "calibrate", cfg, {o.data / "dataset.json", o.model / "model.json", o.model / "regressor.ckpt"},
                {{"split", o.split}, {"n", preds.size()}});
}

// predict

void runPredict(const PredictOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const AgeModel model = loadAgeModel(require(o.model));
  std::optional<ConformalCalibrator> cal;
  if (!o.calibrator.empty()) cal = loadCalibrator(require(o.calibrator));
  const auto& ids = ds.split(o.split);
  ReportOptions ro;
  ro.betas = cfg.betas;
  ro.threshold = cfg.threshold;
  fs::create_directories(o.out);
  if (o.heatmaps) fs::create_directories(o.out / "heatmaps");
  const MultiBranchRegressor<double> md = model.regressor.cast<double>();

  std::vector<nlohmann::json> reports(ids.size());
  parallelFor(ids.size(), cfg.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    auto mces = loadSides(require(o.mce), id);
    if (!mces[0] && !mces[1]) {
      log("  " + id + ": no MCE, skipped");
      return;
    }
    std::array<SidePrediction, 2> sp;
    const SubjectEstimate est = predictSubject(model, mces[0], mces[1], &sp);
    std::array<std::optional<SidePrediction>, 2> sides;
    std::vector<std::string> maps;
    for (int s = 0; s < 2; ++s) {
      if (!mces[s]) continue;
      sides[s] = sp[s];
      if (!o.heatmaps) continue;
      std::vector<std::vector<float>> pix;
      std::vector<std::string> names;
      for (std::size_t v = 0; v < model.config.views.size(); ++v)
        for (int idx : sp[s].slices[v]) {
          pix.push_back(extractSlice(mces[s]->data, model.config.views[v], idx).pixels);
          names.push_back(id + "_" + nameOf(kSides[s]) + "_" + nameOf(model.config.views[v]) + "_" + std::to_string(idx) +
                          ".pgm");
        }
      std::vector<const float*> ptrs;
      for (const auto& p : pix) ptrs.push_back(p.data());
      const auto attr = pixelAttributions(md, ptrs, model.config.igSteps);
      const int n = model.regressor.config().branch.inputSize;
      for (std::size_t k = 0; k < attr.size(); ++k) {
        writeHeatmapPgm(o.out / "heatmaps" / names[k], attr[k], n, n);
        maps.push_back("heatmaps/" + names[k]);
      }
    }
    reports[i] = predictionReport(id, est, sides, cal ? &*cal : nullptr, ro, maps);
    log("  " + id + ": fused age " + fixed(est.fusedAge, 2));
  });

  nlohmann::json subjects = nlohmann::json::array();
  for (auto& r : reports)
    if (!r.is_null()) subjects.push_back(std::move(r));
  writeJson(o.out / "predictions.json", {{"format", "mceage-predictions"},
                                         {"version", 1},
                                         {"split", o.split},
                                         {"model_sha256", sha256File(o.model / "regressor.ckpt")},
                                         {"subjects", subjects}});
  std::vector<fs::path> inputs{o.data / "dataset.json", o.model / "model.json", o.model / "regressor.ckpt"};
  if (cal) inputs.push_back(o.calibrator);
  writeManifest(o.out, "predict", cfg, inputs, {{"split", o.split}, {"subjects", subjects.size()}});
}

// evaluate

void runEvaluate(const EvaluateOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const PredictionFile p = readPredictions(o.predictions);
  const ConformalCalibrator cal = loadCalibrator(require(o.calibrator));
  const std::vector<double> truths = truthsOf(ds, p.ids);
  const EvalReport rep = evaluate(p.fused, truths, cfg.bootstrap, cfg.seed);
  std::vector<double> betas{0.0};
  for (double b : cfg.betas)
    if (b != 0.0) betas.push_back(b);
  const auto rows = coverageTable(p.fused, truths, cal, betas, cfg.threshold);

  fs::create_directories(o.out);
  nlohmann::json cov = nlohmann::json::array();
  for (const auto& r : rows) cov.push_back(toJson(r));
  writeJson(o.out / "eval.json", {{"format", "mceage-evaluation"}, {"version", 1}, {"report", toJson(rep)}, {"coverage", cov}});
  writeCoverageCsv(o.out / "coverage.csv", rows);

  std::ofstream txt(o.out / "summary.txt");
  txt << "subjects: " << rep.n << "\n";
  txt << "MAE: " << fixed(rep.mae, 3) << " years (95% CI " << fixed(rep.maeCi95.lo, 3) << " to "
      << fixed(rep.maeCi95.hi, 3) << ")\n";
  if (rep.r2) txt << "R2: " << fixed(*rep.r2, 3) << "\n";
  for (const auto& b : rep.perAgeBand)
    txt << "  " << b.band << ": n = " << b.n << ", MAE " << (b.mae ? fixed(*b.mae, 3) : std::string("n/a")) << "\n";
  txt << "\nminimum age " << fixed(cfg.threshold, 1) << " (subject declared adult when fused age - d >= threshold)\n";
  auto rate = [](const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string("n/a"); };
  for (const auto& r : rows) {
    txt << "  beta " << fixed(r.beta, 2) << ": d = " << fixed(r.d, 3) << ", declared adult when fused age >= "
        << fixed(cfg.threshold + r.d, 2) << "; sensitivity " << rate(r.sensitivity) << ", specificity "
        << rate(r.specificity) << ", PPV " << rate(r.ppv) << ", accuracy " << rate(r.accuracy) << "\n";
  }
  log("evaluate: MAE " + fixed(rep.mae, 3) + " over " + std::to_string(rep.n) + " subjects");
  writeManifest(o.out, "evaluate", cfg, {o.data / "dataset.json", o.predictions, o.calibrator});
}

// compare

void runCompare(const CompareOptions& o, const RunConfig& cfg) {
  const DatasetIndex ds = loadDataset(o.data);
  const PredictionFile a = readPredictions(o.a);
  const PredictionFile b = readPredictions(o.b);
  std::map<std::string, double> bByIdx;
  for (std::size_t i = 0; i < b.ids.size(); ++i) bByIdx[b.ids[i]] = b.fused[i];
  std::vector<double> errA;
  std::vector<double> errB;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    auto it = bByIdx.find(a.ids[i]);
    if (it == bByIdx.end()) continue;
    const double t = ds.subject(a.ids[i]).age;
    errA.push_back(std::abs(a.fused[i] - t));
    errB.push_back(std::abs(it->second - t));
  }
  if (errA.size() < 2) throw InvalidArgument("fewer than two subjects shared by the prediction files");
  const PairedComparison c = comparePaired(errA, errB, cfg.bootstrap, cfg.seed);
  writeJson(o.out / "comparison.json", {{"format", "mceage-comparison"},
                                        {"version", 1},
                                        {"a", o.a.string()},
                                        {"b", o.b.string()},
                                        {"mae_a", meanAbsoluteError(errA, std::vector<double>(errA.size(), 0.0))},
                                        {"mae_b", meanAbsoluteError(errB, std::vector<double>(errB.size(), 0.0))},
                                        {"paired", toJson(c)}});
  log("compare: mean error difference (a - b) " + fixed(c.meanDiff, 3) + ", 95% CI [" + fixed(c.bootCi95.lo, 3) + ", " +
      fixed(c.bootCi95.hi, 3) + "], p = " + fixed(c.pValue, 4));
  writeManifest(o.out, "compare", cfg, {o.data / "dataset.json", o.a, o.b});
}

}  // namespace mceage::cli
