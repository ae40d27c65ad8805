#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mceage/attribution.hpp"
#include "mceage/error.hpp"
#include "test_util.hpp"

using namespace mceage;

namespace {

RegressorConfig tinyConfig(int branches, std::uint64_t seed) {
  RegressorConfig c;
  c.branches = branches;
  c.branch.blocks = 2;
  c.branch.baseChannels = 4;
  c.branch.features = 16;
  c.branch.inputSize = 12;
  c.seed = seed;
  return c;
}

std::vector<float> randomImage(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img(static_cast<std::size_t>(size) * size);
  for (float& v : img) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("IG of the baseline itself is zero") {
  const GradientFn f = [](const std::vector<double>& x, std::vector<double>& g) {
    g = {std::cos(x[0]), 2 * x[1]};
    return std::sin(x[0]) + x[1] * x[1];
  };
  const std::vector<double> b{0.3, -0.2};
  for (double v : integratedGradients(f, b, b, 16)) CHECK(v == 0.0);
}

TEST_CASE("IG is exact for linear functions") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> w(40), x(40);
  for (auto& v : w) v = n(rng);
  for (auto& v : x) v = n(rng);
  const GradientFn f = [&](const std::vector<double>& p, std::vector<double>& g) {
    g = w;
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * p[i];
    return s;
  };
  for (int steps : {1, 7, 256}) {
    const auto ig = integratedGradients(f, x, std::vector<double>(40, 0.0), steps);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(ig[i] - w[i] * x[i]) < 1e-8);
  }
}

TEST_CASE("midpoint rule integrates a linear gradient exactly") {
  // f = sum x_i^2 with baseline b: IG_i = x_i^2 - b_i^2.
  const GradientFn f = [](const std::vector<double>& p, std::vector<double>& g) {
    double s = 0.0;
    g.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      g[i] = 2 * p[i];
      s += p[i] * p[i];
    }
    return s;
  };
  const std::vector<double> x{1.5, -2.0, 0.25};
  const std::vector<double> b{0.5, 1.0, -1.0};
  const auto ig = integratedGradients(f, x, b, 3);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ig[i] == doctest::Approx(x[i] * x[i] - b[i] * b[i]).epsilon(1e-12));
}

TEST_CASE("IG rejects mismatched shapes and zero steps") {
  const GradientFn f = [](const std::vector<double>& p, std::vector<double>& g) {
    g.assign(p.size(), 0.0);
    return 0.0;
  };
  CHECK_THROWS_AS(integratedGradients(f, {1.0}, {1.0, 2.0}), InvalidArgument);
  CHECK_THROWS_AS(integratedGradients(f, {1.0}, {0.0}, 0), InvalidArgument);
}

TEST_CASE("branch aggregation") {
  const std::vector<double> ones(5 * 64, 1.0);
  for (double s : branchAggregate(ones, 5, 64)) CHECK(s == 64.0);
  std::vector<double> hot(5 * 4, 0.0);
  hot[2 * 4 + 1] = 1.0;
  CHECK(branchAggregate(hot, 5, 4) == std::vector<double>{0, 0, 1, 0, 0});
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> r(3 * 7);
  double total = 0.0;
  for (auto& v : r) total += (v = u(rng));
  double agg = 0.0;
  for (double s : branchAggregate(r, 3, 7)) agg += s;
  CHECK(agg == doctest::Approx(total).epsilon(1e-14));
  CHECK_THROWS_AS(branchAggregate(r, 4, 7), InvalidArgument);
}

TEST_CASE("most informative slice") {
  const std::vector<double> p{0, 10, 20, 30, 40};
  CHECK(mostInformativeSlice({1, 2, 2, 0, 0}, p) == doctest::Approx(12.0));
  CHECK(mostInformativeSlice({3, 3, 3, 3, 3}, p) == doctest::Approx(20.0));
  CHECK(mostInformativeSlice({0, 0, 0, 1, 0}, p) == 30.0);
  CHECK(mostInformativeSlice({-5, 1, 0, 0, 0}, p) == 10.0);
  CHECK(mostInformativeSlice({-1, -2, 0, 0, -3}, p) == 20.0);
  CHECK(mostInformativeSlice({0, 0, 0, 0}, {5, 15, 25, 45}) == 20.0);
  CHECK_THROWS_AS(mostInformativeSlice({}, {}), InvalidArgument);
  CHECK_THROWS_AS(mostInformativeSlice({1}, {1, 2}), InvalidArgument);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(5);
    for (auto& v : s) v = u(rng);
    const double c = mostInformativeSlice(s, p);
    CHECK(c >= 0.0);
    CHECK(c <= 40.0);
    std::vector<double> scaled = s;
    for (auto& v : scaled) v *= 7.5;
    CHECK(mostInformativeSlice(scaled, p) == doctest::Approx(c).epsilon(1e-12));
  }
}

TEST_CASE("fusion IG satisfies completeness and converges with steps") {
  MultiBranchRegressor<double> model(tinyConfig(5, 4));
  initialize(model);
  for (auto& p : model.params())
    if (p.tensor->shape.size() == 1)
      for (double& v : p.tensor->value) v = 0.02;
  model.setTargetScaling(20.0, 2.5);
  std::mt19937_64 rng(5);
  const std::vector<double> positions{5, 15, 25, 35, 45};
  const std::vector<int> stepCounts{32, 64, 128, 256, 512};
  std::vector<double> meanError(stepCounts.size(), 0.0);
  for (int subject = 0; subject < 10; ++subject) {
    std::vector<std::vector<float>> imgs;
    std::vector<const float*> ptrs;
    for (int b = 0; b < 5; ++b) imgs.push_back(randomImage(12, rng));
    for (const auto& i : imgs) ptrs.push_back(i.data());
    const AttributionResult r = attributeFusion(model, ptrs, positions);
    CHECK(r.perFeature.size() == 5u * 16u);
    CHECK(r.output == doctest::Approx(model.forward(ptrs)).epsilon(1e-12));
    CHECK(r.completenessError() < 0.01);
    CHECK(r.center >= 5.0);
    CHECK(r.center <= 45.0);
    const auto x = model.branchFeatures(ptrs);
    for (std::size_t k = 0; k < stepCounts.size(); ++k)
      meanError[k] += attributeFusionInput(model, x, positions, stepCounts[k]).completenessError() / 10.0;
  }
  for (std::size_t k = 0; k < stepCounts.size(); ++k) MESSAGE(stepCounts[k] << " steps: mean error " << meanError[k]);
  CHECK(meanError.back() < meanError.front());
  CHECK(meanError.back() < 0.01);
}

TEST_CASE("a branch the fusion network ignores gets zero score") {
  MultiBranchRegressor<double> model(tinyConfig(5, 6));
  initialize(model);
  const int nf = 16;
  auto& w = model.fusion.hidden[0].weight;
  for (int o = 0; o < w.shape[0]; ++o)
    for (int j = 2 * nf; j < 3 * nf; ++j) w.value[static_cast<std::size_t>(o) * w.shape[1] + j] = 0.0;
  std::mt19937_64 rng(6);
  std::vector<std::vector<float>> imgs;
  std::vector<const float*> ptrs;
  for (int b = 0; b < 5; ++b) imgs.push_back(randomImage(12, rng));
  for (const auto& i : imgs) ptrs.push_back(i.data());
  const AttributionResult r = attributeFusion(model, ptrs, {5, 15, 25, 35, 45}, 64);
  CHECK(r.branchScores[2] == 0.0);
}

TEST_CASE("only one branch attended gives its position") {
  MultiBranchRegressor<double> model(tinyConfig(5, 7));
  initialize(model);
  const int nf = 16;
  auto& w = model.fusion.hidden[0].weight;
  for (int o = 0; o < w.shape[0]; ++o)
    for (int j = 0; j < 5 * nf; ++j)
      if (j / nf != 2) w.value[static_cast<std::size_t>(o) * w.shape[1] + j] = 0.0;
  std::mt19937_64 rng(8);
  int attended = 0;
  for (int subject = 0; subject < 6; ++subject) {
    std::vector<std::vector<float>> imgs;
    std::vector<const float*> ptrs;
    for (int b = 0; b < 5; ++b) imgs.push_back(randomImage(12, rng));
    for (const auto& i : imgs) ptrs.push_back(i.data());
    const AttributionResult r = attributeFusion(model, ptrs, {5, 15, 25, 35, 45}, 32);
    for (int b : {0, 1, 3, 4}) CHECK(r.branchScores[b] == 0.0);
    CHECK(r.center == doctest::Approx(25.0).epsilon(1e-12));
    if (r.branchScores[2] > 0.0) ++attended;
  }
  MESSAGE("subjects with positive branch-2 score: " << attended);
}

TEST_CASE("pixel attributions match finite differences and complete") {
  MultiBranchRegressor<double> model(tinyConfig(2, 9));
  initialize(model);
  for (auto& p : model.params())
    if (p.tensor->shape.size() == 1)
      for (double& v : p.tensor->value) v = 0.03;
  model.setTargetScaling(19.0, 3.0);
  std::mt19937_64 rng(10);
  const auto a = randomImage(12, rng);
  const auto b = randomImage(12, rng);

  // One midpoint step: IG_i = x_i * df/dx_i at x/2.
  const auto one = pixelAttributions(model, {a.data(), b.data()}, 1);
  std::vector<float> ha(144), hb(144);
  for (int i = 0; i < 144; ++i) {
    ha[i] = 0.5f * a[i];
    hb[i] = 0.5f * b[i];
  }
  const double h = 1e-3;
  for (int i : {0, 17, 66, 143}) {
    std::vector<float> up = ha, down = ha;
    up[i] += static_cast<float>(h);
    down[i] -= static_cast<float>(h);
    const double fd = (model.forward({up.data(), hb.data()}) - model.forward({down.data(), hb.data()})) /
                      (static_cast<double>(up[i]) - down[i]);
    CHECK(one[0][i] == doctest::Approx(a[i] * fd).epsilon(1e-4).scale(1e-6));
  }

  const std::vector<float> zero(144, 0.0f);
  const auto maps = pixelAttributions(model, {a.data(), b.data()}, 4096);
  REQUIRE(maps.size() == 2);
  double total = 0.0;
  for (const auto& m : maps) {
    CHECK(m.size() == 144u);
    for (double v : m) total += v;
  }
  const double delta = model.forward({a.data(), b.data()}) - model.forward({zero.data(), zero.data()});
  CHECK(std::abs(total - delta) <= 0.05 * std::abs(delta));
}

TEST_CASE("heatmap PGM and CSV export") {
  TempDir dir;
  std::vector<double> map(50 * 50);
  for (int i = 0; i < 2500; ++i) map[i] = std::sin(0.01 * i) - 0.3;
  writeHeatmapPgm(dir.path() / "h.pgm", map, 50, 50);
  writeHeatmapCsv(dir.path() / "h.csv", map, 50, 50);
  std::istringstream pgm(readBytes(dir.path() / "h.pgm"));
  std::string magic;
  int cols = 0, rows = 0, maxv = 0;
  pgm >> magic >> cols >> rows >> maxv;
  CHECK(magic == "P2");
  CHECK(cols == 50);
  CHECK(rows == 50);
  CHECK(maxv == 255);
  int lo = 999, hi = -1, count = 0, v = 0;
  while (pgm >> v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ++count;
  }
  CHECK(count == 2500);
  CHECK(lo == 0);
  CHECK(hi == 255);

  std::istringstream csv(readBytes(dir.path() / "h.csv"));
  std::string line;
  std::size_t idx = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      CHECK(std::stod(cell) == map[idx]);
      ++idx;
    }
  }
  CHECK(idx == 2500u);

  writeHeatmapPgm(dir.path() / "flat.pgm", std::vector<double>(4, 1.5), 2, 2);
  CHECK(readBytes(dir.path() / "flat.pgm") == "P2\n2 2\n255\n0 0\n0 0\n");
  CHECK_THROWS_AS(writeHeatmapPgm(dir.path() / "bad.pgm", map, 49, 50), InvalidArgument);
}
