#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "mceage/error.hpp"
#include "mceage/phantom.hpp"
#include "mceage/pipeline.hpp"
#include "test_util.hpp"

using namespace mceage;

namespace {

std::vector<MceSample> phantomSamples(int n, std::uint64_t seed) {
  std::vector<MceSample> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> age(14.0, 26.0);
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.seed = seed * 1000 + static_cast<std::uint64_t>(i);
    spec.age = age(rng);
    const Laterality side = i % 2 ? Laterality::Left : Laterality::Right;
    auto region = renderClavicleRegion(spec, side);
    out.push_back({std::to_string(i), localizeMce(region.truth.maskBox, region.volume, side), spec.age});
  }
  return out;
}

const std::vector<MceSample>& samples() {
  static const std::vector<MceSample> s = phantomSamples(12, 5);
  return s;
}

PipelineConfig tinyConfig() {
  PipelineConfig cfg;
  cfg.branch.blocks = 3;
  cfg.branch.baseChannels = 2;
  cfg.branch.features = 8;
  cfg.fusion.hiddenDropout = 0.0;
  cfg.fusion.outputDropout = 0.0;
  cfg.train.eta1 = 3e-3;
  cfg.train.maxEpochs = 3;
  cfg.train.seed = 4;
  cfg.igSteps = 32;
  return cfg;
}

}  // namespace

TEST_CASE("buildWindow follows the interval rule") {
  CHECK(buildWindow(17, {2, 0, 10}) == std::vector<int>{17, 27});
  CHECK(buildWindow(20, {5, 10, 10}) == std::vector<int>{10, 15, 20, 25, 30});
  CHECK(buildWindow(48, {2, 0, 10}) == std::vector<int>{48, 49});
  CHECK(buildWindow(17.4, {1, 0, 10}) == std::vector<int>{17});
  CHECK(buildWindow(17.5, {1, 3, 3}) == std::vector<int>{18});
  CHECK(buildWindow(16.5, {2, 0, 10}) == std::vector<int>{17, 27});
  CHECK(buildWindow(-3, {2, 0, 10}) == std::vector<int>{0, 7});
  CHECK_THROWS_AS(buildWindow(10, {0, 0, 10}), InvalidArgument);
  CHECK_THROWS_AS(buildWindow(10, {2, -1, 10}), InvalidArgument);
  CHECK_THROWS_AS(buildWindow(std::nan(""), {2, 0, 10}), InvalidArgument);
}

TEST_CASE("buildWindow output is sorted, unique and inside the stack") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> c(-20.0, 70.0);
  std::uniform_int_distribution<int> mi(1, 8);
  std::uniform_int_distribution<int> off(0, 30);
  for (int t = 0; t < 2000; ++t) {
    const SliceWindow w{mi(rng), off(rng), off(rng)};
    const double cc = c(rng);
    const auto win = buildWindow(cc, w);
    REQUIRE(!win.empty());
    CHECK(static_cast<int>(win.size()) <= w.m);
    for (std::size_t i = 0; i < win.size(); ++i) {
      CHECK(win[i] >= 0);
      CHECK(win[i] <= 49);
      if (i) CHECK(win[i - 1] < win[i]);
    }
    if (cc - w.a >= 0 && cc + w.b <= 49 && w.m >= 2) {
      CHECK(win.front() == roundHalfUp(cc - w.a));
      CHECK(win.back() == roundHalfUp(cc + w.b));
    }
  }
}

TEST_CASE("augmentWindows shifts the centre and drops clamped duplicates") {
  const SliceWindow w5{5, 10, 10};
  const auto shifted = augmentWindows(20, w5, AugmentationConfig{{-2}});
  REQUIRE(shifted.size() == 2);
  CHECK(shifted[0] == std::vector<int>{10, 15, 20, 25, 30});
  CHECK(shifted[1] == std::vector<int>{8, 13, 18, 23, 28});
  CHECK(augmentWindows(20, w5, AugmentationConfig{{}}).size() == 1);
  CHECK(augmentWindows(20, {2, 0, 10}, AugmentationConfig{}).size() == 5);
  const auto edge = augmentWindows(49, {2, 0, 10}, AugmentationConfig{});
  CHECK(edge == std::vector<std::vector<int>>{{49}, {47, 49}, {45, 49}});
  CHECK_THROWS_AS(augmentWindows(20, w5, AugmentationConfig{{0}}), InvalidArgument);
}

TEST_CASE("window sets pair views in lockstep and count augmentation exactly") {
  PipelineConfig cfg = tinyConfig();
  ViewCenters c = noCenters();
  c[static_cast<int>(View::Axial)] = 19.0;
  c[static_cast<int>(View::Coronal)] = 28.4;
  const auto combos = sampleWindows(c, cfg, true);
  REQUIRE(combos.size() == 5);
  CHECK(combos[0] == std::vector<int>{19, 29, 28, 38});
  CHECK(combos[1] == std::vector<int>{17, 27, 26, 36});
  CHECK(combos[4] == std::vector<int>{23, 33, 32, 42});

  const std::vector<MceSample> s(samples().begin(), samples().begin() + 4);
  const std::vector<ViewCenters> centers(s.size(), c);
  const RegressionSet plain = windowSet(s, centers, cfg, false);
  const RegressionSet aug = windowSet(s, centers, cfg, true);
  CHECK(plain.examples.size() * 5 == aug.examples.size());
  const auto& e = aug.examples[1];
  CHECK(e.target == s[0].age);
  CHECK(aug.pool[static_cast<std::size_t>(e.slices[0])] == extractSlice(s[0].mce.data, View::Axial, 17).pixels);
  CHECK(aug.pool[static_cast<std::size_t>(e.slices[3])] == extractSlice(s[0].mce.data, View::Coronal, 36).pixels);

  ViewCenters missing = noCenters();
  missing[0] = 19.0;
  CHECK_THROWS_AS(sampleWindows(missing, cfg, false), InvalidArgument);
}

TEST_CASE("a fusion net attending to one branch selects its position") {
  PipelineConfig cfg = tinyConfig();
  MultiBranchRegressor<double> model(cfg.stage1RegressorConfig(View::Axial));
  initialize(model);
  const int nf = cfg.branch.features;
  auto& w = model.fusion.hidden[0].weight.value;
  const int in = model.fusion.hidden[0].in;
  for (int o = 0; o < model.fusion.hidden[0].out; ++o)
    for (int i = 0; i < in; ++i)
      if (i / nf != 2) w[static_cast<std::size_t>(o) * in + i] = 0.0;
  for (const auto& s : samples()) {
    AttributionResult r;
    CHECK(selectCenter(model, s.mce, View::Axial, kStage1Positions, 16, &r) == 25.0);
    for (int b : {0, 1, 3, 4}) CHECK(r.branchScores[static_cast<std::size_t>(b)] == 0.0);
  }
}

TEST_CASE("stage-1 centres are convex combinations of the positions") {
  PipelineConfig cfg = tinyConfig();
  for (View v : {View::Axial, View::Coronal, View::Sagittal}) {
    const Stage1Result r = stage1SelectCenters(samples(), v, cfg);
    REQUIRE(r.centers.size() == samples().size());
    for (double c : r.centers) {
      CHECK(c >= 5.0);
      CHECK(c <= 45.0);
    }
    CHECK(r.model.config().branches == 5);
  }
}

TEST_CASE("bilateral fusion takes the mean of the sides present") {
  const auto both = fuseSides(18.78, 18.38);
  CHECK(both.fusedAge == doctest::Approx(18.58).epsilon(1e-12));
  CHECK(std::abs(both.fusedAge - 18.78) == doctest::Approx(std::abs(both.fusedAge - 18.38)));
  CHECK(fuseSides(20.0, std::nullopt).fusedAge == 20.0);
  CHECK(fuseSides(std::nullopt, 21.5).fusedAge == 21.5);
  CHECK(fuseSides(19.25, 19.25).fusedAge == 19.25);
  CHECK_THROWS_AS(fuseSides(std::nullopt, std::nullopt), InvalidArgument);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(14.0, 26.0);
  for (int t = 0; t < 1000; ++t) {
    const double r = u(rng), l = u(rng);
    const auto e = fuseSides(r, l);
    CHECK(std::abs(e.fusedAge - r) == doctest::Approx(std::abs(e.fusedAge - l)).epsilon(1e-12));
  }
}

TEST_CASE("calibrated estimates carry symmetric intervals and decisions") {
  auto e = fuseSides(20.5, std::nullopt);
  const ConformalCalibrator cal({0.5, 1.0, 1.5, 2.0, 2.5});
  applyCalibration(e, cal, 0.6);
  REQUIRE(e.interval);
  CHECK(e.interval->lo == doctest::Approx(19.0));
  CHECK(e.interval->hi - e.fusedAge == doctest::Approx(e.fusedAge - e.interval->lo));
  CHECK(*e.decision == AgeDecision::Adult);
  applyCalibration(e, cal, 0.99);
  CHECK(e.interval->lo == 18.0);
  CHECK(*e.decision == AgeDecision::Adult);
  auto younger = fuseSides(20.4, std::nullopt);
  applyCalibration(younger, cal, 0.99);
  CHECK(*younger.decision == AgeDecision::NotConfirmedAdult);
}

TEST_CASE("end-to-end training is deterministic and predictions round-trip") {
  PipelineConfig cfg = tinyConfig();
  const std::vector<MceSample> train(samples().begin(), samples().begin() + 8);
  const std::vector<MceSample> val(samples().begin() + 8, samples().end());
  AgeModel a = trainAgeModel(train, val, cfg);
  AgeModel b = trainAgeModel(train, val, cfg);
  CHECK(a.history.bestValMae == b.history.bestValMae);
  CHECK(a.importance.size() == 2);

  std::vector<ViewCenters> tc, vc;
  for (const auto& s : train) tc.push_back(a.centersFor(s.mce));
  for (const auto& s : val) vc.push_back(a.centersFor(s.mce));
  PipelineConfig noAug = cfg;
  noAug.augment = false;
  const auto withAug = trainFinalModel(train, val, tc, vc, cfg);
  const auto without = trainFinalModel(train, val, tc, vc, noAug);
  CHECK(without.trainExamples * 5 == withAug.trainExamples);
  CHECK(without.valExamples == val.size());

  const auto& right = val[0].mce;
  const auto& left = val[1].mce;
  std::array<SidePrediction, 2> sides;
  const auto est = predictSubject(a, right, left, &sides);
  CHECK(est.fusedAge == doctest::Approx(0.5 * (sides[0].age + sides[1].age)).epsilon(1e-12));
  CHECK(sides[0].slices.size() == 2);
  const auto single = predictSubject(a, right, std::nullopt);
  CHECK(single.fusedAge == sides[0].age);
  CHECK_THROWS_AS(predictSubject(a, std::nullopt, std::nullopt), InvalidArgument);

  TempDir dir;
  saveAgeModel(dir.path() / "m", a, {{"split", "s1"}});
  nlohmann::json meta;
  AgeModel loaded = loadAgeModel(dir.path() / "m", &meta);
  CHECK(meta.at("split") == "s1");
  CHECK(toJson(loaded.config) == toJson(a.config));
  const auto again = predictSubject(loaded, right, left);
  CHECK(again.fusedAge == est.fusedAge);
  saveAgeModel(dir.path() / "m2", loaded, {{"split", "s1"}});
  for (const char* f : {"model.json", "regressor.ckpt", "importance_axial.ckpt", "importance_coronal.ckpt"})
    CHECK(readBytes(dir.path() / "m" / f) == readBytes(dir.path() / "m2" / f));
  CHECK_THROWS_AS(loadAgeModel(dir.path() / "missing"), FormatError);
}

TEST_CASE("fixed-centre models skip importance training") {
  PipelineConfig cfg = tinyConfig();
  cfg.fixedCenter = 12.0;
  cfg.window = {2, 0, 25};
  cfg.augment = false;
  const std::vector<MceSample> train(samples().begin(), samples().begin() + 8);
  const std::vector<MceSample> val(samples().begin() + 8, samples().end());
  const AgeModel m = trainAgeModel(train, val, cfg);
  CHECK(m.importance.empty());
  const auto side = predictSide(m, val[0].mce);
  CHECK(side.slices == std::vector<std::vector<int>>{{12, 37}, {12, 37}});
}

TEST_CASE("pipeline configuration round-trips and validates") {
  PipelineConfig cfg = phantomPipelineConfig();
  cfg.views = {View::Axial, View::Coronal, View::Sagittal};
  cfg.fixedCenter = 20.5;
  cfg.augmentation.centerOffsets = {-3, 3};
  const PipelineConfig back = pipelineConfigFromJson(toJson(cfg));
  CHECK(toJson(back) == toJson(cfg));
  CHECK(back.finalRegressorConfig().branches == 6);
  PipelineConfig bad = cfg;
  bad.views = {View::Axial, View::Axial};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.augmentation.centerOffsets = {0};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("prediction report lists intervals, decisions and slices") {
  const ConformalCalibrator cal({0.0, 1.0, 2.09, 2.97, 4.0});
  auto est = fuseSides(20.5, std::nullopt);
  SidePrediction side;
  side.age = 20.5;
  side.centers = noCenters();
  side.centers[0] = 19.2;
  side.centers[1] = 27.0;
  side.slices = {{19, 29}, {27, 37}};
  ReportOptions opt;
  opt.betas = {0.0, 0.6, 0.8};
  const auto j = predictionReport("s7", est, {side, std::nullopt}, &cal, opt, {"a.pgm"});
  CHECK(j.at("fused_age") == 20.5);
  CHECK(j.at("left_age").is_null());
  REQUIRE(j.at("intervals").size() == 3);
  CHECK(j.at("intervals")[0].at("d") == 0.0);
  CHECK(j.at("intervals")[0].at("decision") == "adult");
  CHECK(j.at("intervals")[2].at("d") == 2.97);
  CHECK(j.at("intervals")[2].at("decision") == "not-confirmed-adult");
  CHECK(j.at("sides").at("right").at("slices").at("coronal") == std::vector<int>{27, 37});
  CHECK(j.at("heatmaps")[0] == "a.pgm");
}
