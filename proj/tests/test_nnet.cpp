#include <doctest.h>

#include <cmath>
#include <random>

#include "mceage/error.hpp"
#include "mceage/nnet.hpp"
#include "test_util.hpp"

using namespace mceage;

namespace {

RegressorConfig smallConfig(std::uint64_t seed, int branches = 2) {
  RegressorConfig c;
  c.branches = branches;
  c.branch.blocks = 2;
  c.branch.baseChannels = 3;
  c.branch.features = 6;
  c.branch.inputSize = 12;
  c.fusion.depth = 2;
  c.seed = seed;
  return c;
}

std::vector<float> randomImage(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img(static_cast<std::size_t>(size) * size);
  for (float& v : img) v = u(rng);
  return img;
}

// Direct definition of a zero-padded stride-2 3x3 convolution.
std::vector<double> naiveConv(const Conv2d<double>& conv, const std::vector<double>& x, int h, int w) {
  const int ho = (h - 1) / 2 + 1;
  const int wo = (w - 1) / 2 + 1;
  std::vector<double> y(static_cast<std::size_t>(conv.outChannels) * ho * wo);
  for (int co = 0; co < conv.outChannels; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = conv.bias.value[co];
        for (int ci = 0; ci < conv.inChannels; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = 2 * oy + ky - 1;
              const int ix = 2 * ox + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += conv.weight.value[((co * conv.inChannels + ci) * 3 + ky) * 3 + kx] * x[(ci * h + iy) * w + ix];
            }
        y[(co * ho + oy) * wo + ox] = acc;
      }
  return y;
}

// Slices whose brightness encodes the target linearly.
RegressionSet linearTask(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RegressionSet set;
  for (int i = 0; i < n; ++i) {
    const double level = u(rng);
    RegressionSet::Example e;
    for (int b = 0; b < 2; ++b) {
      std::vector<float> img(static_cast<std::size_t>(size) * size);
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          img[r * size + c] = static_cast<float>(level * (0.5 + 0.5 * r / size) + 0.02 * u(rng));
      e.slices.push_back(static_cast<int>(set.pool.size()));
      set.pool.push_back(std::move(img));
    }
    e.target = 18.0 + 4.0 * level;
    set.examples.push_back(e);
  }
  return set;
}

std::vector<std::vector<float>> snapshot(MultiBranchRegressor<float>& m, ParamGroup g) {
  std::vector<std::vector<float>> out;
  for (auto& p : m.params())
    if (p.group == g) out.push_back(p.tensor->value);
  return out;
}

}  // namespace

TEST_CASE("convolution matches the direct definition on odd and even sizes") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int size : {7, 8, 12}) {
    Conv2d<double> conv(2, 3);
    for (double& v : conv.weight.value) v = u(rng);
    for (double& v : conv.bias.value) v = u(rng);
    std::vector<double> x(static_cast<std::size_t>(2) * size * size);
    for (double& v : x) v = u(rng);
    const int so = conv.outSize(size);
    std::vector<double> y(static_cast<std::size_t>(3) * so * so);
    conv.forward(x.data(), size, size, y.data());
    const auto expect = naiveConv(conv, x, size, size);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("convolution backward is the adjoint of forward") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Conv2d<double> conv(2, 3);
  for (double& v : conv.weight.value) v = u(rng);
  const int h = 9;
  std::vector<double> x(2 * h * h);
  for (double& v : x) v = u(rng);
  const int so = conv.outSize(h);
  std::vector<double> dy(static_cast<std::size_t>(3) * so * so);
  for (double& v : dy) v = u(rng);
  std::vector<double> y(dy.size());
  conv.forward(x.data(), h, h, y.data());
  std::vector<double> dx(x.size());
  conv.backward(x.data(), h, h, dy.data(), dx.data());
  // <dy, conv(x) - b> = <dx, x> for the linear part, and dW . W = same sum.
  double lhs = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < so * so; ++i) lhs += dy[c * so * so + i] * (y[c * so * so + i] - conv.bias.value[c]);
  double viaX = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) viaX += dx[i] * x[i];
  double viaW = 0.0;
  for (std::size_t i = 0; i < conv.weight.size(); ++i) viaW += conv.weight.grad[i] * conv.weight.value[i];
  CHECK(viaX == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(viaW == doctest::Approx(lhs).epsilon(1e-12));
}

TEST_CASE("gradient check on a small regressor") {
  auto model = MultiBranchRegressor<double>(smallConfig(11));
  initialize(model);
  for (auto& p : model.params())
    if (p.tensor->shape.size() == 1)
      for (double& v : p.tensor->value) v = 0.05;
  std::mt19937_64 rng(5);
  std::vector<std::vector<float>> slices{randomImage(12, rng), randomImage(12, rng)};
  CHECK(model.parameterCount() < 10000);
  CHECK(gradientCheck(model, slices, 3.0, 1e-4, 400, 1) < 1e-4);
}

TEST_CASE("dense layers compose to the exact affine map") {
  Dense<double> a(3, 2);
  Dense<double> b(2, 1);
  a.weight.value = {1, 2, 3, -1, 0.5, 4};
  a.bias.value = {0.25, -2};
  b.weight.value = {3, -0.5};
  b.bias.value = {1};
  const std::vector<double> x{0.5, -1, 2};
  double h[2];
  double y;
  a.forward(x.data(), h);
  b.forward(h, &y);
  const double h0 = 1 * 0.5 + 2 * -1 + 3 * 2 + 0.25;
  const double h1 = -1 * 0.5 + 0.5 * -1 + 4 * 2 - 2;
  CHECK(y == 3 * h0 - 0.5 * h1 + 1);
}

TEST_CASE("Adam matches a hand-unrolled update") {
  Tensor<double> t({2});
  t.value = {0.5, -1.5};
  std::vector<ParamRef<double>> params{{"p", ParamGroup::Fusion, &t}};
  AdamState<double> state;
  const AdamConfig cfg;
  const double grads[3][2] = {{0.2, -1.0}, {-0.4, 0.3}, {0.1, 2.0}};
  const double lr = 0.01;
  double x0 = 0.5;
  double x1 = -1.5;
  double m0 = 0, v0 = 0, m1 = 0, v1 = 0;
  for (int s = 0; s < 3; ++s) {
    t.grad = {grads[s][0], grads[s][1]};
    adamStep(params, state, lr, cfg);
    m0 = 0.9 * m0 + 0.1 * grads[s][0];
    v0 = 0.999 * v0 + 0.001 * grads[s][0] * grads[s][0];
    m1 = 0.9 * m1 + 0.1 * grads[s][1];
    v1 = 0.999 * v1 + 0.001 * grads[s][1] * grads[s][1];
    const double c1 = 1 - std::pow(0.9, s + 1);
    const double c2 = 1 - std::pow(0.999, s + 1);
    x0 -= lr * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8);
    x1 -= lr * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8);
    CHECK(std::abs(t.value[0] - x0) < 1e-12);
    CHECK(std::abs(t.value[1] - x1) < 1e-12);
  }
  CHECK(state.step == 3);
}

TEST_CASE("Adam with zero gradient leaves parameters unchanged") {
  Tensor<float> t({4});
  t.value = {1.0f, -2.0f, 0.125f, 3.5f};
  const auto before = t.value;
  std::vector<ParamRef<float>> params{{"p", ParamGroup::Fusion, &t}};
  AdamState<float> state;
  for (int i = 0; i < 5; ++i) adamStep(params, state, 0.1);
  CHECK(t.value == before);
}

TEST_CASE("Adam rejects non-finite gradients and names the parameter") {
  Tensor<float> t({1});
  t.grad[0] = std::nanf("");
  std::vector<ParamRef<float>> params{{"fusion.out.weight", ParamGroup::Fusion, &t}};
  AdamState<float> state;
  try {
    adamStep(params, state, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fusion.out.weight") != std::string::npos);
  }
}

TEST_CASE("1cycle schedule anchors and shape") {
  const double eta = 0.003;
  for (long total : {2L, 10L, 99L, 1000L}) {
    const long peak = oneCyclePeak(total);
    CHECK(std::abs(oneCycleLr(0, total, eta) - eta / 25) < 1e-12);
    CHECK(std::abs(oneCycleLr(peak, total, eta) - eta) < 1e-12);
    CHECK(std::abs(oneCycleLr(total, total, eta) - eta / 1000) < 1e-12);
    for (long s = 1; s <= peak; ++s) CHECK(oneCycleLr(s, total, eta) >= oneCycleLr(s - 1, total, eta));
    for (long s = peak + 1; s <= total; ++s) CHECK(oneCycleLr(s, total, eta) <= oneCycleLr(s - 1, total, eta));
  }
  CHECK(oneCyclePeak(100) == 30);
  CHECK_THROWS_AS(oneCycleLr(11, 10, eta), InvalidArgument);
  CHECK_THROWS_AS(oneCycleLr(0, 1, eta), InvalidArgument);
}

TEST_CASE("dropout scales kept units by 1/(1-p) and is off in evaluation") {
  FusionConfig fc;
  fc.depth = 1;
  fc.hiddenDropout = 0.25;
  fc.outputDropout = 0.5;
  FusionNet<double> net(8, 8, fc);
  std::mt19937_64 rng(9);
  std::vector<double> x(8, 1.0);
  double hiddenSum = 0.0;
  double outSum = 0.0;
  std::size_t hiddenCount = 0;
  std::size_t outCount = 0;
  for (int i = 0; i < 10000; ++i) {
    FusionNet<double>::Trace t;
    net.forward(x, Mode::Train, &rng, &t);
    for (double m : t.masks[0]) {
      CHECK((m == 0.0 || m == 1.0 / 0.75));
      hiddenSum += m;
      ++hiddenCount;
    }
    for (double m : t.outMask) {
      outSum += m;
      ++outCount;
    }
  }
  CHECK(hiddenSum / hiddenCount == doctest::Approx(1.0).epsilon(0.02));
  CHECK(outSum / outCount == doctest::Approx(1.0).epsilon(0.02));
  FusionNet<double>::Trace t;
  net.forward(x, Mode::Eval, nullptr, &t);
  for (double m : t.masks[0]) CHECK(m == 1.0);
  for (double m : t.outMask) CHECK(m == 1.0);
}

TEST_CASE("zero output layer gives zero prediction") {
  MultiBranchRegressor<float> model(smallConfig(2));
  initialize(model);
  std::fill(model.fusion.out.weight.value.begin(), model.fusion.out.weight.value.end(), 0.0f);
  model.fusion.out.bias.value[0] = 0.0f;
  std::mt19937_64 rng(1);
  const auto a = randomImage(12, rng);
  const auto b = randomImage(12, rng);
  CHECK(model.forward({a.data(), b.data()}) == 0.0f);
}

TEST_CASE("regressor is not invariant to slice order") {
  MultiBranchRegressor<double> model(smallConfig(7));
  initialize(model);
  std::mt19937_64 rng(1);
  const auto a = randomImage(12, rng);
  const auto b = randomImage(12, rng);
  CHECK(model.forward({a.data(), b.data()}) != model.forward({b.data(), a.data()}));
}

TEST_CASE("initialization is He-uniform with zero biases and seeded") {
  MultiBranchRegressor<float> a(smallConfig(5));
  MultiBranchRegressor<float> b(smallConfig(5));
  MultiBranchRegressor<float> c(smallConfig(6));
  initialize(a);
  initialize(b);
  initialize(c);
  auto pa = a.params();
  auto pb = b.params();
  auto pc = c.params();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].tensor->value == pb[i].tensor->value);
    differs |= pa[i].tensor->value != pc[i].tensor->value;
    const auto& shape = pa[i].tensor->shape;
    if (shape.size() == 1) {
      for (float v : pa[i].tensor->value) CHECK(v == 0.0f);
    } else {
      const double limit = std::sqrt(6.0 * shape[0] / pa[i].tensor->size());
      for (float v : pa[i].tensor->value) CHECK(std::abs(v) <= limit);
    }
  }
  CHECK(differs);
}

TEST_CASE("parameter groups partition the model") {
  MultiBranchRegressor<float> model(smallConfig(1));
  int early = 0, last = 0, dense = 0, fusion = 0;
  for (auto& p : model.params()) {
    switch (p.group) {
      case ParamGroup::BranchEarlyConv: ++early; break;
      case ParamGroup::BranchLastConv: ++last; break;
      case ParamGroup::BranchDense: ++dense; break;
      case ParamGroup::Fusion: ++fusion; break;
    }
  }
  CHECK(early == 2 * 2);
  CHECK(last == 2 * 2);
  CHECK(dense == 2 * 2);
  CHECK(fusion == 2 * 3);
}

TEST_CASE("stage 1 full-batch loss is non-increasing at a small rate") {
  RegressorConfig rc = smallConfig(3);
  rc.fusion.hiddenDropout = 0.0;
  rc.fusion.outputDropout = 0.0;
  MultiBranchRegressor<float> model(rc);
  initialize(model);
  model.fusion.out.bias.value[0] = 20.0f;
  const auto convs = snapshot(model, ParamGroup::BranchLastConv);
  const RegressionSet data = linearTask(16, 12, 4);
  TrainConfig cfg;
  cfg.eta1 = 1e-3 / 100;
  cfg.batchSize = 16;
  cfg.standardizeTargets = false;
  cfg.standardizeFeatures = false;
  const auto mse = [&]() {
    double s = 0.0;
    for (const auto& e : data.examples) {
      const double err = model.forward(data.slicesOf(e)) - e.target;
      s += err * err;
    }
    return s / static_cast<double>(data.examples.size());
  };
  const double start = mse();
  double prev = start;
  for (int step = 0; step < 25; ++step) {
    TrainHistory h;
    trainStageOne(model, data, cfg, &h);
    REQUIRE(h.stage1BatchLoss.size() == 1);
    CHECK(h.stage1BatchLoss[0] == doctest::Approx(prev).epsilon(1e-5));
    const double now = mse();
    CHECK(now <= prev * (1 + 1e-6));
    prev = now;
  }
  CHECK(prev < start);
  CHECK(snapshot(model, ParamGroup::BranchLastConv) == convs);
}

TEST_CASE("two-stage training freezes the early conv blocks and learns a linear task") {
  RegressorConfig rc = smallConfig(21);
  rc.branch.inputSize = 24;
  rc.branch.blocks = 3;
  rc.branch.baseChannels = 4;
  rc.branch.features = 64;
  rc.fusion.hiddenDropout = 0.0;
  rc.fusion.outputDropout = 0.0;
  MultiBranchRegressor<float> model(rc);
  initialize(model);
  const auto frozen = snapshot(model, ParamGroup::BranchEarlyConv);
  const auto lastBefore = snapshot(model, ParamGroup::BranchLastConv);
  RegressionSet train = linearTask(96, 24, 1);
  RegressionSet val = linearTask(32, 24, 2);
  TrainConfig cfg;
  cfg.eta1 = 0.1;
  cfg.maxEpochs = 30;
  cfg.seed = 8;
  const TrainHistory h = trainTwoStage(model, train, val, cfg);
  CHECK(snapshot(model, ParamGroup::BranchEarlyConv) == frozen);
  CHECK(snapshot(model, ParamGroup::BranchLastConv) != lastBefore);
  CHECK(h.stage1BatchLoss.size() == 24);
  CHECK(h.stage2ValMae.size() <= 30);
  CHECK(h.bestValMae == doctest::Approx(meanAbsoluteError(model, val)).epsilon(1e-5));
  MESSAGE("linear task validation MAE " << h.bestValMae << " at epoch " << h.bestEpoch);
  CHECK(h.bestValMae < 0.1);

  MultiBranchRegressor<float> again(rc);
  initialize(again);
  trainTwoStage(again, train, val, cfg);
  auto pa = model.params();
  auto pb = again.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->value == pb[i].tensor->value);
}

TEST_CASE("training with dropout beats the mean predictor on the linear task") {
  RegressorConfig rc = smallConfig(22);
  rc.branch.inputSize = 24;
  rc.branch.blocks = 3;
  rc.branch.baseChannels = 4;
  rc.branch.features = 64;
  MultiBranchRegressor<float> model(rc);
  initialize(model);
  RegressionSet train = linearTask(96, 24, 1);
  RegressionSet val = linearTask(32, 24, 2);
  double mean = 0.0;
  for (const auto& e : train.examples) mean += e.target / static_cast<double>(train.examples.size());
  double baseline = 0.0;
  for (const auto& e : val.examples) baseline += std::abs(e.target - mean) / static_cast<double>(val.examples.size());
  TrainConfig cfg;
  cfg.eta1 = 0.003;
  cfg.maxEpochs = 30;
  cfg.seed = 3;
  const TrainHistory h = trainTwoStage(model, train, val, cfg);
  MESSAGE("dropout model MAE " << h.bestValMae << " vs mean predictor " << baseline);
  CHECK(h.bestValMae < 0.75 * baseline);
}

TEST_CASE("training rejects malformed sets") {
  MultiBranchRegressor<float> model(smallConfig(1));
  initialize(model);
  RegressionSet empty;
  RegressionSet ok = linearTask(4, 12, 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(trainTwoStage(model, empty, ok, cfg), InvalidArgument);
  RegressionSet wrong = ok;
  wrong.examples[0].slices.push_back(0);
  CHECK_THROWS_AS(trainTwoStage(model, wrong, ok, cfg), InvalidArgument);
  cfg.eta1 = 0.0;
  CHECK_THROWS_AS(trainTwoStage(model, ok, ok, cfg), InvalidArgument);
}

TEST_CASE("fusion input standardization is exact and differentiable") {
  auto model = MultiBranchRegressor<double>(smallConfig(12));
  initialize(model);
  for (auto& p : model.params())
    if (p.tensor->shape.size() == 1)
      for (double& v : p.tensor->value) v = 0.05;
  const auto n = static_cast<std::size_t>(model.fusion.inputs());
  std::vector<double> mean(n), scale(n);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    mean[i] = 0.1 * u(rng);
    scale[i] = 0.05 + u(rng);
  }
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - mean[i]) / scale[i];
  const double plain = model.fusion.forward(z, Mode::Eval, nullptr);
  model.fusion.setInputStandardization(mean, scale);
  CHECK(model.fusion.forward(x, Mode::Eval, nullptr) == doctest::Approx(plain).epsilon(1e-14));

  std::vector<double> grad;
  model.fusion.inputGradient(x, grad);
  for (std::size_t i = 0; i < n; i += 5) {
    auto up = x, down = x;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd = (model.fusion.forward(up, Mode::Eval, nullptr) - model.fusion.forward(down, Mode::Eval, nullptr)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  std::vector<std::vector<float>> slices{randomImage(12, rng), randomImage(12, rng)};
  CHECK(gradientCheck(model, slices, 3.0, 1e-4, 400, 2) < 1e-4);

  scale[0] = 0.0;
  CHECK_THROWS_AS(model.fusion.setInputStandardization(mean, scale), InvalidArgument);
  CHECK_THROWS_AS(model.fusion.setInputStandardization({1.0}, {1.0}), InvalidArgument);
}

TEST_CASE("stage 1 standardizes the fusion input over the training features") {
  MultiBranchRegressor<float> model(smallConfig(4));
  initialize(model);
  const RegressionSet data = linearTask(24, 12, 6);
  TrainConfig cfg;
  trainStageOne(model, data, cfg);
  const auto nf = static_cast<std::size_t>(model.config().branch.features);
  std::vector<double> sum(model.fusion.inputMean.size(), 0.0), sq(sum.size(), 0.0);
  for (const auto& e : data.examples) {
    const auto slices = data.slicesOf(e);
    for (std::size_t b = 0; b < slices.size(); ++b) {
      const auto f = model.branches[b].forward(slices[b]);
      for (std::size_t k = 0; k < nf; ++k) {
        sum[b * nf + k] += f[k];
        sq[b * nf + k] += static_cast<double>(f[k]) * f[k];
      }
    }
  }
  const double n = static_cast<double>(data.examples.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double m = sum[i] / n;
    const double var = sq[i] / n - m * m;
    CHECK(model.fusion.inputMean[i] == doctest::Approx(m).epsilon(1e-5));
    if (var > 1e-10) CHECK(model.fusion.inputScale[i] == doctest::Approx(std::sqrt(var)).epsilon(1e-3));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir;
  MultiBranchRegressor<float> model(smallConfig(13));
  initialize(model);
  for (auto& p : model.params())
    for (std::size_t i = 0; i < p.tensor->size(); ++i) p.tensor->value[i] += 1e-3f * static_cast<float>(i % 7);
  {
    const auto n = static_cast<std::size_t>(model.fusion.inputs());
    std::vector<float> mean(n), scale(n);
    for (std::size_t i = 0; i < n; ++i) {
      mean[i] = 0.01f * static_cast<float>(i);
      scale[i] = 0.5f + 0.1f * static_cast<float>(i % 3);
    }
    model.fusion.setInputStandardization(mean, scale);
  }
  const auto path = dir.path() / "model.ckpt";
  saveCheckpoint(path, model, {{"note", "x"}});
  nlohmann::json meta;
  MultiBranchRegressor<float> loaded = loadCheckpoint(path, &meta);
  CHECK(meta.at("note") == "x");
  CHECK(toJson(loaded.config()) == toJson(model.config()));
  auto a = model.params();
  auto b = loaded.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor->value == b[i].tensor->value);
  CHECK(loaded.fusion.inputMean == model.fusion.inputMean);
  CHECK(loaded.fusion.inputScale == model.fusion.inputScale);
  saveCheckpoint(dir.path() / "again.ckpt", loaded, {{"note", "x"}});
  CHECK(readBytes(path) == readBytes(dir.path() / "again.ckpt"));

  const std::string bytes = readBytes(path);
  {
    std::ofstream out(dir.path() / "short.ckpt", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(loadCheckpoint(dir.path() / "short.ckpt"), FormatError);
  CHECK_THROWS_AS(loadCheckpoint(dir.path() / "missing.ckpt"), FormatError);
}

TEST_CASE("train config JSON round trip keeps eta2 tied to eta1") {
  TrainConfig c;
  c.eta1 = 0.02;
  c.seed = 77;
  const TrainConfig back = trainConfigFromJson(toJson(c));
  CHECK(back.eta1 == c.eta1);
  CHECK(back.seed == 77);
  CHECK(back.eta2() == c.eta1 / 100);
  nlohmann::json bad = toJson(c);
  bad["eta2"] = 0.5;
  CHECK_THROWS_AS(trainConfigFromJson(bad), InvalidArgument);
}

TEST_CASE("double cast reproduces the float forward pass") {
  MultiBranchRegressor<float> model(smallConfig(17));
  initialize(model);
  const MultiBranchRegressor<double> wide = model.cast<double>();
  std::mt19937_64 rng(2);
  const auto a = randomImage(12, rng);
  const auto b = randomImage(12, rng);
  CHECK(wide.forward({a.data(), b.data()}) == doctest::Approx(model.forward({a.data(), b.data()})).epsilon(1e-5));
}
