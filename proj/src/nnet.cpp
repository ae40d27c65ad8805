#include "mceage/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "mceage/error.hpp"
#include "mceage/random.hpp"

namespace mceage {

namespace {

int product(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), 1, std::multiplies<int>());
}

template <class T>
void reluInPlace(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

template <class Rng>
void shuffleIndices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
}

}  // namespace

template <class T>
Tensor<T>::Tensor(std::vector<int> s)
    : shape(std::move(s)),
      value(static_cast<std::size_t>(product(shape)), T(0)),
      grad(static_cast<std::size_t>(product(shape)), T(0)) {}

// ---- layers ----

template <class T>
Conv2d<T>::Conv2d(int cin, int cout)
    : inChannels(cin), outChannels(cout), weight({cout, cin, 3, 3}), bias({cout}) {}

template <class T>
void Conv2d<T>::forward(const T* x, int h, int w, T* y) const {
  const int ho = outSize(h);
  const int wo = outSize(w);
  const int ph = h + 2;
  const int pw = w + 2;
  thread_local std::vector<T> xp;
  xp.assign(static_cast<std::size_t>(inChannels) * ph * pw, T(0));
  for (int c = 0; c < inChannels; ++c)
    for (int r = 0; r < h; ++r)
      std::copy(x + (static_cast<std::size_t>(c) * h + r) * w, x + (static_cast<std::size_t>(c) * h + r) * w + w,
                xp.begin() + (static_cast<std::ptrdiff_t>(c) * ph + r + 1) * pw + 1);
  for (int co = 0; co < outChannels; ++co) {
    T* yc = y + static_cast<std::size_t>(co) * ho * wo;
    std::fill(yc, yc + ho * wo, bias.value[co]);
    for (int ci = 0; ci < inChannels; ++ci) {
      const T* xc = xp.data() + static_cast<std::size_t>(ci) * ph * pw;
      const T* wk = weight.value.data() + (static_cast<std::size_t>(co) * inChannels + ci) * 9;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T wv = wk[ky * 3 + kx];
          for (int oy = 0; oy < ho; ++oy) {
            const T* row = xc + static_cast<std::size_t>(2 * oy + ky) * pw + kx;
            T* out = yc + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) out[ox] += wv * row[2 * ox];
          }
        }
    }
  }
}

template <class T>
void Conv2d<T>::backward(const T* x, int h, int w, const T* dy, T* dx) {
  const int ho = outSize(h);
  const int wo = outSize(w);
  const int ph = h + 2;
  const int pw = w + 2;
  thread_local std::vector<T> xp;
  thread_local std::vector<T> dxp;
  xp.assign(static_cast<std::size_t>(inChannels) * ph * pw, T(0));
  for (int c = 0; c < inChannels; ++c)
    for (int r = 0; r < h; ++r)
      std::copy(x + (static_cast<std::size_t>(c) * h + r) * w, x + (static_cast<std::size_t>(c) * h + r) * w + w,
                xp.begin() + (static_cast<std::ptrdiff_t>(c) * ph + r + 1) * pw + 1);
  if (dx) dxp.assign(xp.size(), T(0));
  for (int co = 0; co < outChannels; ++co) {
    const T* dyc = dy + static_cast<std::size_t>(co) * ho * wo;
    T db = T(0);
    for (int i = 0; i < ho * wo; ++i) db += dyc[i];
    bias.grad[co] += db;
    for (int ci = 0; ci < inChannels; ++ci) {
      const T* xc = xp.data() + static_cast<std::size_t>(ci) * ph * pw;
      const std::size_t wbase = (static_cast<std::size_t>(co) * inChannels + ci) * 9;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T acc = T(0);
          const T wv = weight.value[wbase + ky * 3 + kx];
          for (int oy = 0; oy < ho; ++oy) {
            const std::size_t rowOff = static_cast<std::size_t>(ci) * ph * pw + static_cast<std::size_t>(2 * oy + ky) * pw + kx;
            const T* row = xp.data() + rowOff;
            const T* g = dyc + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) acc += g[ox] * row[2 * ox];
            if (dx) {
              T* drow = dxp.data() + rowOff;
              for (int ox = 0; ox < wo; ++ox) drow[2 * ox] += wv * g[ox];
            }
          }
          weight.grad[wbase + ky * 3 + kx] += acc;
          (void)xc;
        }
    }
  }
  if (dx)
    for (int c = 0; c < inChannels; ++c)
      for (int r = 0; r < h; ++r)
        std::copy(dxp.begin() + (static_cast<std::ptrdiff_t>(c) * ph + r + 1) * pw + 1,
                  dxp.begin() + (static_cast<std::ptrdiff_t>(c) * ph + r + 1) * pw + 1 + w,
                  dx + (static_cast<std::size_t>(c) * h + r) * w);
}

template <class T>
Dense<T>::Dense(int inputs, int outputs) : in(inputs), out(outputs), weight({outputs, inputs}), bias({outputs}) {}

template <class T>
void Dense<T>::forward(const T* x, T* y) const {
  for (int o = 0; o < out; ++o) {
    const T* w = weight.value.data() + static_cast<std::size_t>(o) * in;
    T acc = bias.value[o];
    for (int i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

template <class T>
void Dense<T>::backward(const T* x, const T* dy, T* dx) {
  if (dx) std::fill(dx, dx + in, T(0));
  for (int o = 0; o < out; ++o) {
    const T g = dy[o];
    if (g == T(0)) continue;
    bias.grad[o] += g;
    T* wg = weight.grad.data() + static_cast<std::size_t>(o) * in;
    const T* w = weight.value.data() + static_cast<std::size_t>(o) * in;
    if (x)
      for (int i = 0; i < in; ++i) wg[i] += g * x[i];
    if (dx)
      for (int i = 0; i < in; ++i) dx[i] += g * w[i];
  }
}

// ---- branch ----

template <class T>
BranchNet<T>::BranchNet(const BranchConfig& cfg)
    : dense(cfg.baseChannels << (cfg.blocks - 1), cfg.features), cfg_(cfg) {
  if (cfg.blocks < 1 || cfg.baseChannels < 1 || cfg.features < 1 || cfg.inputSize < 2)
    throw InvalidArgument("invalid branch configuration");
  int cin = 1;
  for (int b = 0; b < cfg.blocks; ++b) {
    convs.emplace_back(cin, cfg.baseChannels << b);
    cin = cfg.baseChannels << b;
  }
}

template <class T>
int BranchNet<T>::sizeAfter(int block) const {
  int s = cfg_.inputSize;
  for (int b = 0; b < block; ++b) s = (s - 1) / 2 + 1;
  return s;
}

template <class T>
int BranchNet<T>::channelsAfter(int block) const {
  return block == 0 ? 1 : cfg_.baseChannels << (block - 1);
}

template <class T>
std::vector<T> BranchNet<T>::forward(const float* pixels) const {
  const std::size_t n = static_cast<std::size_t>(cfg_.inputSize) * cfg_.inputSize;
  std::vector<T> input(pixels, pixels + n);
  Trace trace;
  forwardFrom(0, input, trace);
  return trace.features;
}

template <class T>
void BranchNet<T>::forwardFrom(int from, const std::vector<T>& input, Trace& trace) const {
  const int blocks = cfg_.blocks;
  if (from < 0 || from > blocks) throw InvalidArgument("branch start block out of range");
  const std::size_t expect = static_cast<std::size_t>(channelsAfter(from)) * sizeAfter(from) * sizeAfter(from);
  if (input.size() != expect) throw InvalidArgument("branch input has the wrong size");
  trace.acts.resize(static_cast<std::size_t>(blocks) + 1);
  trace.acts[from] = input;
  for (int b = from; b < blocks; ++b) {
    const int s = sizeAfter(b);
    const int so = sizeAfter(b + 1);
    auto& y = trace.acts[b + 1];
    y.assign(static_cast<std::size_t>(convs[b].outChannels) * so * so, T(0));
    convs[b].forward(trace.acts[b].data(), s, s, y.data());
    reluInPlace(y);
  }
  const int c = channelsAfter(blocks);
  const int area = sizeAfter(blocks) * sizeAfter(blocks);
  trace.pooled.assign(static_cast<std::size_t>(c), T(0));
  const auto& last = trace.acts[blocks];
  for (int ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (int i = 0; i < area; ++i) acc += last[static_cast<std::size_t>(ch) * area + i];
    trace.pooled[ch] = acc / T(area);
  }
  trace.features.assign(static_cast<std::size_t>(cfg_.features), T(0));
  dense.forward(trace.pooled.data(), trace.features.data());
  reluInPlace(trace.features);
}

template <class T>
void BranchNet<T>::backward(const Trace& trace, int from, const std::vector<T>& dFeatures, int stopBlock,
                            std::vector<T>* dInput) {
  const int blocks = cfg_.blocks;
  if (stopBlock < from) throw InvalidArgument("cannot back-propagate below the traced start block");
  if (dInput && stopBlock != from) throw InvalidArgument("input gradient needs stopBlock equal to the start block");
  std::vector<T> dPre(dFeatures.size());
  for (std::size_t i = 0; i < dFeatures.size(); ++i) dPre[i] = trace.features[i] > T(0) ? dFeatures[i] : T(0);
  std::vector<T> dPooled(trace.pooled.size());
  dense.backward(trace.pooled.data(), dPre.data(), dPooled.data());
  const int area = sizeAfter(blocks) * sizeAfter(blocks);
  std::vector<T> dAct(trace.acts[blocks].size());
  for (std::size_t ch = 0; ch < dPooled.size(); ++ch)
    for (int i = 0; i < area; ++i) dAct[ch * area + i] = dPooled[ch] / T(area);
  for (int b = blocks - 1; b >= stopBlock; --b) {
    const auto& y = trace.acts[b + 1];
    for (std::size_t i = 0; i < dAct.size(); ++i)
      if (!(y[i] > T(0))) dAct[i] = T(0);
    const int s = sizeAfter(b);
    const bool wantDx = b > stopBlock || dInput;
    std::vector<T> dPrev;
    if (wantDx) dPrev.assign(trace.acts[b].size(), T(0));
    convs[b].backward(trace.acts[b].data(), s, s, dAct.data(), wantDx ? dPrev.data() : nullptr);
    dAct = std::move(dPrev);
  }
  if (dInput) *dInput = std::move(dAct);
}

// ---- fusion ----

template <class T>
FusionNet<T>::FusionNet(int inputs, int features, const FusionConfig& cfg)
    : inputMean(static_cast<std::size_t>(std::max(inputs, 0)), T(0)),
      inputScale(static_cast<std::size_t>(std::max(inputs, 0)), T(1)),
      out(1, 1),
      inputs_(inputs),
      cfg_(cfg) {
  if (cfg.depth < 0 || inputs < 1 || features < 1) throw InvalidArgument("invalid fusion configuration");
  if (!(cfg.hiddenDropout >= 0.0 && cfg.hiddenDropout < 1.0) || !(cfg.outputDropout >= 0.0 && cfg.outputDropout < 1.0))
    throw InvalidArgument("dropout rates must lie in [0, 1)");
  int width = inputs;
  int next = features;
  for (int d = 0; d < cfg.depth; ++d) {
    hidden.emplace_back(width, next);
    width = next;
    next = std::max(1, next / 4);
  }
  out = Dense<T>(width, 1);
}

template <class T>
void FusionNet<T>::setInputStandardization(std::vector<T> mean, std::vector<T> scale) {
  if (static_cast<int>(mean.size()) != inputs_ || static_cast<int>(scale.size()) != inputs_)
    throw InvalidArgument("standardization size does not match the fusion input");
  for (std::size_t i = 0; i < mean.size(); ++i)
    if (!std::isfinite(static_cast<double>(mean[i])) || !(scale[i] > T(0)) || !std::isfinite(static_cast<double>(scale[i])))
      throw InvalidArgument("standardization needs finite means and positive scales");
  inputMean = std::move(mean);
  inputScale = std::move(scale);
}

template <class T>
T FusionNet<T>::forward(const std::vector<T>& x, Mode mode, std::mt19937_64* rng, Trace* trace) const {
  if (static_cast<int>(x.size()) != inputs_) throw InvalidArgument("fusion input has the wrong size");
  if (mode == Mode::Train && !rng) throw InvalidArgument("training-mode forward needs a dropout generator");
  Trace local;
  Trace& t = trace ? *trace : local;
  const int depth = static_cast<int>(hidden.size());
  t.acts.assign(static_cast<std::size_t>(depth) + 1, {});
  t.pre.assign(static_cast<std::size_t>(depth), {});
  t.masks.assign(static_cast<std::size_t>(depth), {});
  t.acts[0].resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t.acts[0][i] = (x[i] - inputMean[i]) / inputScale[i];
  const auto makeMask = [&](std::size_t n, double p) {
    std::vector<T> m(n, T(1));
    if (mode == Mode::Train && p > 0.0) {
      const T keep = T(1.0 / (1.0 - p));
      for (T& v : m) v = uniform01(*rng) < p ? T(0) : keep;
    }
    return m;
  };
  for (int d = 0; d < depth; ++d) {
    t.pre[d].assign(static_cast<std::size_t>(hidden[d].out), T(0));
    hidden[d].forward(t.acts[d].data(), t.pre[d].data());
    t.masks[d] = makeMask(t.pre[d].size(), cfg_.hiddenDropout);
    t.acts[d + 1].resize(t.pre[d].size());
    for (std::size_t i = 0; i < t.pre[d].size(); ++i) {
      const T v = t.pre[d][i] * t.masks[d][i];
      t.acts[d + 1][i] = v > T(0) ? v : T(0);
    }
  }
  const auto& last = t.acts[depth];
  t.outMask = makeMask(last.size(), cfg_.outputDropout);
  t.outInput.resize(last.size());
  for (std::size_t i = 0; i < last.size(); ++i) t.outInput[i] = last[i] * t.outMask[i];
  T y;
  out.forward(t.outInput.data(), &y);
  t.output = y;
  return y;
}

template <class T>
std::vector<T> FusionNet<T>::backward(const Trace& t, T dOut, bool accumulateParams) {
  if (!accumulateParams) return inputBackward(t, dOut);
  const int depth = static_cast<int>(hidden.size());
  std::vector<T> dAct(t.outInput.size());
  out.backward(t.outInput.data(), &dOut, dAct.data());
  for (std::size_t i = 0; i < dAct.size(); ++i) dAct[i] *= t.outMask[i];
  for (int d = depth - 1; d >= 0; --d) {
    std::vector<T> dPre(dAct.size());
    for (std::size_t i = 0; i < dAct.size(); ++i)
      dPre[i] = t.acts[d + 1][i] > T(0) ? dAct[i] * t.masks[d][i] : T(0);
    std::vector<T> dPrev(static_cast<std::size_t>(hidden[d].in), T(0));
    hidden[d].backward(t.acts[d].data(), dPre.data(), dPrev.data());
    dAct = std::move(dPrev);
  }
  for (std::size_t i = 0; i < dAct.size(); ++i) dAct[i] /= inputScale[i];
  return dAct;
}

template <class T>
std::vector<T> FusionNet<T>::inputBackward(const Trace& t, T dOut) const {
  const int depth = static_cast<int>(hidden.size());
  std::vector<T> dAct(t.outInput.size());
  for (std::size_t i = 0; i < dAct.size(); ++i) dAct[i] = dOut * out.weight.value[i] * t.outMask[i];
  for (int d = depth - 1; d >= 0; --d) {
    std::vector<T> dPrev(static_cast<std::size_t>(hidden[d].in), T(0));
    for (int o = 0; o < hidden[d].out; ++o) {
      if (!(t.acts[d + 1][o] > T(0))) continue;
      const T g = dAct[o] * t.masks[d][o];
      const T* w = hidden[d].weight.value.data() + static_cast<std::size_t>(o) * hidden[d].in;
      for (int i = 0; i < hidden[d].in; ++i) dPrev[i] += g * w[i];
    }
    dAct = std::move(dPrev);
  }
  for (std::size_t i = 0; i < dAct.size(); ++i) dAct[i] /= inputScale[i];
  return dAct;
}

template <class T>
T FusionNet<T>::inputGradient(const std::vector<T>& x, std::vector<T>& grad) const {
  Trace t;
  const T y = forward(x, Mode::Eval, nullptr, &t);
  grad = inputBackward(t, T(1));
  return y;
}

// ---- regressor ----

template <class T>
MultiBranchRegressor<T>::MultiBranchRegressor(const RegressorConfig& cfg)
    : fusion(cfg.branches * cfg.branch.features, cfg.branch.features, cfg.fusion), cfg_(cfg) {
  if (cfg.branches < 1) throw InvalidArgument("a regressor needs at least one branch");
  for (int b = 0; b < cfg.branches; ++b) branches.emplace_back(cfg.branch);
}

template <class T>
std::vector<T> MultiBranchRegressor<T>::branchFeatures(const std::vector<const float*>& slices) const {
  if (static_cast<int>(slices.size()) != cfg_.branches)
    throw InvalidArgument("expected " + std::to_string(cfg_.branches) + " slices, got " + std::to_string(slices.size()));
  std::vector<T> x;
  x.reserve(static_cast<std::size_t>(fusion.inputs()));
  for (int b = 0; b < cfg_.branches; ++b) {
    const std::vector<T> f = branches[b].forward(slices[b]);
    x.insert(x.end(), f.begin(), f.end());
  }
  return x;
}

template <class T>
T MultiBranchRegressor<T>::forward(const std::vector<const float*>& slices, Mode mode, std::mt19937_64* rng) const {
  const T y = toTarget(fusion.forward(branchFeatures(slices), mode, rng));
  if (!std::isfinite(static_cast<double>(y))) throw NumericError("regressor produced a non-finite output");
  return y;
}

template <class T>
void MultiBranchRegressor<T>::setTargetScaling(double mean, double scale) {
  if (!std::isfinite(mean) || !(scale > 0.0) || !std::isfinite(scale))
    throw InvalidArgument("target scaling needs a finite mean and a positive scale");
  cfg_.targetMean = mean;
  cfg_.targetScale = scale;
}

template <class T>
std::vector<ParamRef<T>> MultiBranchRegressor<T>::params() {
  std::vector<ParamRef<T>> out;
  for (int b = 0; b < cfg_.branches; ++b) {
    BranchNet<T>& br = branches[b];
    const std::string p = "branch" + std::to_string(b) + ".";
    const int blocks = static_cast<int>(br.convs.size());
    for (int k = 0; k < blocks; ++k) {
      const ParamGroup g = k == blocks - 1 ? ParamGroup::BranchLastConv : ParamGroup::BranchEarlyConv;
      out.push_back({p + "conv" + std::to_string(k) + ".weight", g, &br.convs[k].weight});
      out.push_back({p + "conv" + std::to_string(k) + ".bias", g, &br.convs[k].bias});
    }
    out.push_back({p + "dense.weight", ParamGroup::BranchDense, &br.dense.weight});
    out.push_back({p + "dense.bias", ParamGroup::BranchDense, &br.dense.bias});
  }
  for (std::size_t d = 0; d < fusion.hidden.size(); ++d) {
    out.push_back({"fusion.dense" + std::to_string(d) + ".weight", ParamGroup::Fusion, &fusion.hidden[d].weight});
    out.push_back({"fusion.dense" + std::to_string(d) + ".bias", ParamGroup::Fusion, &fusion.hidden[d].bias});
  }
  out.push_back({"fusion.out.weight", ParamGroup::Fusion, &fusion.out.weight});
  out.push_back({"fusion.out.bias", ParamGroup::Fusion, &fusion.out.bias});
  return out;
}

template <class T>
void MultiBranchRegressor<T>::zeroGrad() {
  for (auto& p : params()) p.tensor->zeroGrad();
}

template <class T>
std::size_t MultiBranchRegressor<T>::parameterCount() {
  std::size_t n = 0;
  for (auto& p : params()) n += p.tensor->size();
  return n;
}

template <class T>
template <class U>
MultiBranchRegressor<U> MultiBranchRegressor<T>::cast() const {
  MultiBranchRegressor<U> out(cfg_);
  auto src = const_cast<MultiBranchRegressor<T>*>(this)->params();
  auto dst = out.params();
  for (std::size_t i = 0; i < src.size(); ++i)
    for (std::size_t k = 0; k < src[i].tensor->size(); ++k)
      dst[i].tensor->value[k] = static_cast<U>(src[i].tensor->value[k]);
  out.fusion.setInputStandardization(std::vector<U>(fusion.inputMean.begin(), fusion.inputMean.end()),
                                     std::vector<U>(fusion.inputScale.begin(), fusion.inputScale.end()));
  return out;
}

template <class T>
void initialize(MultiBranchRegressor<T>& model) {
  std::mt19937_64 rng(deriveSeed(model.config().seed, 0x1417));
  const auto n = static_cast<std::size_t>(model.fusion.inputs());
  model.fusion.setInputStandardization(std::vector<T>(n, T(0)), std::vector<T>(n, T(1)));
  for (auto& p : model.params()) {
    Tensor<T>& t = *p.tensor;
    if (t.shape.size() == 1) {
      std::fill(t.value.begin(), t.value.end(), T(0));
      continue;
    }
    const int fanIn = product(t.shape) / t.shape[0];
    const double limit = std::sqrt(6.0 / fanIn);
    for (T& v : t.value) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
  }
}

// ---- optimisation ----

template <class T>
void adamStep(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->size(), 0.0);
      state.v.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw InvalidArgument("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor->size()) throw InvalidArgument("optimizer state shape mismatch");
    for (T g : params[i].tensor->grad)
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + params[i].name);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& t = *params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double g = static_cast<double>(t.grad[k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      t.value[k] = static_cast<T>(static_cast<double>(t.value[k]) - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

long oneCyclePeak(long totalSteps) {
  return std::clamp<long>(std::lround(0.3 * static_cast<double>(totalSteps)), 1, totalSteps - 1);
}

double oneCycleLr(long step, long totalSteps, double eta) {
  if (totalSteps < 2) throw InvalidArgument("1cycle needs at least two steps");
  if (step < 0 || step > totalSteps) throw InvalidArgument("1cycle step out of range");
  const double start = eta / 25.0;
  const double end = eta / 1000.0;
  const long peak = oneCyclePeak(totalSteps);
  if (step == 0) return start;
  if (step == peak) return eta;
  if (step == totalSteps) return end;
  if (step < peak) {
    const double f = 0.5 * (1.0 - std::cos(std::acos(-1.0) * static_cast<double>(step) / peak));
    return start + (eta - start) * f;
  }
  const double f = 0.5 * (1.0 - std::cos(std::acos(-1.0) * static_cast<double>(step - peak) / (totalSteps - peak)));
  return eta + (end - eta) * f;
}

std::vector<const float*> RegressionSet::slicesOf(const Example& e) const {
  std::vector<const float*> out;
  for (int id : e.slices) {
    if (id < 0 || id >= static_cast<int>(pool.size())) throw InvalidArgument("example refers to a missing slice");
    out.push_back(pool[static_cast<std::size_t>(id)].data());
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(eta1 > 0.0) || !std::isfinite(eta1)) throw InvalidArgument("eta1 must be positive");
  if (batchSize < 1 || maxEpochs < 1 || earlyStopPatience < 1) throw InvalidArgument("invalid training schedule");
}

nlohmann::json toJson(const TrainConfig& c) {
  return {{"eta1", c.eta1},         {"eta2", c.eta2()},
          {"adam_beta1", c.adam.beta1}, {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},   {"batch_size", c.batchSize},
          {"max_epochs", c.maxEpochs}, {"early_stop_patience", c.earlyStopPatience},
          {"seed", c.seed},           {"standardize_targets", c.standardizeTargets},
          {"standardize_features", c.standardizeFeatures}};
}

TrainConfig trainConfigFromJson(const nlohmann::json& j) {
  TrainConfig c;
  c.eta1 = j.value("eta1", c.eta1);
  if (j.contains("eta2") && std::abs(j.at("eta2").get<double>() - c.eta2()) > 1e-15 * c.eta1)
    throw InvalidArgument("eta2 must equal eta1/100");
  c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.batchSize = j.value("batch_size", c.batchSize);
  c.maxEpochs = j.value("max_epochs", c.maxEpochs);
  c.earlyStopPatience = j.value("early_stop_patience", c.earlyStopPatience);
  c.seed = j.value("seed", c.seed);
  c.standardizeTargets = j.value("standardize_targets", c.standardizeTargets);
  c.standardizeFeatures = j.value("standardize_features", c.standardizeFeatures);
  c.validate();
  return c;
}

nlohmann::json toJson(const RegressorConfig& c) {
  return {{"branches", c.branches},
          {"blocks", c.branch.blocks},
          {"base_channels", c.branch.baseChannels},
          {"features", c.branch.features},
          {"input_size", c.branch.inputSize},
          {"fusion_depth", c.fusion.depth},
          {"hidden_dropout", c.fusion.hiddenDropout},
          {"output_dropout", c.fusion.outputDropout},
          {"seed", c.seed},
          {"target_mean", c.targetMean},
          {"target_scale", c.targetScale}};
}

RegressorConfig regressorConfigFromJson(const nlohmann::json& j) {
  RegressorConfig c;
  c.branches = j.at("branches");
  c.branch.blocks = j.at("blocks");
  c.branch.baseChannels = j.at("base_channels");
  c.branch.features = j.at("features");
  c.branch.inputSize = j.at("input_size");
  c.fusion.depth = j.at("fusion_depth");
  c.fusion.hiddenDropout = j.at("hidden_dropout");
  c.fusion.outputDropout = j.at("output_dropout");
  c.seed = j.at("seed");
  c.targetMean = j.value("target_mean", 0.0);
  c.targetScale = j.value("target_scale", 1.0);
  return c;
}

namespace {

void checkSet(const MultiBranchRegressor<float>& model, const RegressionSet& set, const char* what) {
  if (set.examples.empty()) throw InvalidArgument(std::string(what) + " set is empty");
  const std::size_t pixels = static_cast<std::size_t>(model.config().branch.inputSize) * model.config().branch.inputSize;
  for (const auto& s : set.pool)
    if (s.size() != pixels) throw InvalidArgument(std::string(what) + " set holds a slice of the wrong size");
  for (const auto& e : set.examples) {
    if (static_cast<int>(e.slices.size()) != model.config().branches)
      throw InvalidArgument(std::string(what) + " example has the wrong slice count");
    set.slicesOf(e);
  }
}

std::vector<ParamRef<float>> paramsIn(MultiBranchRegressor<float>& model, std::initializer_list<ParamGroup> groups) {
  std::vector<ParamRef<float>> out;
  for (auto& p : model.params())
    if (std::find(groups.begin(), groups.end(), p.group) != groups.end()) out.push_back(p);
  return out;
}

// Per-branch cache of activations keyed by pool slice id.
using ActivationCache = std::vector<std::unordered_map<int, std::vector<float>>>;

void fillCache(const MultiBranchRegressor<float>& model, const RegressionSet& set, int block, bool features,
               ActivationCache& cache) {
  cache.resize(model.branches.size());
  const std::size_t pixels = static_cast<std::size_t>(model.config().branch.inputSize) * model.config().branch.inputSize;
  for (const auto& e : set.examples) {
    for (std::size_t b = 0; b < e.slices.size(); ++b) {
      const int id = e.slices[b];
      if (cache[b].count(id)) continue;
      const auto& px = set.pool[static_cast<std::size_t>(id)];
      BranchNet<float>::Trace trace;
      model.branches[b].forwardFrom(0, std::vector<float>(px.begin(), px.begin() + static_cast<std::ptrdiff_t>(pixels)),
                                    trace);
      cache[b][id] = features ? trace.features : trace.acts[static_cast<std::size_t>(block)];
    }
  }
}

long stepsPerEpoch(std::size_t n, int batch) { return static_cast<long>((n + batch - 1) / batch); }

void checkLoss(double loss) {
  if (!std::isfinite(loss)) throw NumericError("training loss became non-finite");
}

}  // namespace

void trainStageOne(MultiBranchRegressor<float>& model, const RegressionSet& train, const TrainConfig& cfg,
                   TrainHistory* history) {
  cfg.validate();
  checkSet(model, train, "training");
  std::mt19937_64 rng(deriveSeed(cfg.seed, 1));
  if (cfg.standardizeTargets) {
    double mean = 0.0;
    for (const auto& e : train.examples) mean += e.target;
    mean /= static_cast<double>(train.examples.size());
    double var = 0.0;
    for (const auto& e : train.examples) var += (e.target - mean) * (e.target - mean);
    var /= static_cast<double>(train.examples.size());
    model.setTargetScaling(mean, var > 0.0 ? std::sqrt(var) : 1.0);
  }
  const double scale = model.config().targetScale;
  ActivationCache features;
  fillCache(model, train, 0, true, features);
  if (cfg.standardizeFeatures) {
    const std::size_t nf = static_cast<std::size_t>(model.config().branch.features);
    const std::size_t n = static_cast<std::size_t>(model.fusion.inputs());
    std::vector<double> sum(n, 0.0);
    std::vector<double> sq(n, 0.0);
    for (const auto& e : train.examples)
      for (std::size_t b = 0; b < e.slices.size(); ++b) {
        const auto& f = features[b].at(e.slices[b]);
        for (std::size_t k = 0; k < nf; ++k) {
          sum[b * nf + k] += f[k];
          sq[b * nf + k] += static_cast<double>(f[k]) * f[k];
        }
      }
    const double count = static_cast<double>(train.examples.size());
    std::vector<float> mean(n);
    std::vector<float> sd(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double m = sum[i] / count;
      const double var = std::max(0.0, sq[i] / count - m * m);
      mean[i] = static_cast<float>(m);
      sd[i] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    }
    model.fusion.setInputStandardization(std::move(mean), std::move(sd));
  }
  const auto fusionParams = paramsIn(model, {ParamGroup::Fusion});
  AdamState<float> state;
  std::vector<int> order(train.examples.size());
  std::iota(order.begin(), order.end(), 0);
  shuffleIndices(order, rng);
  const long steps = stepsPerEpoch(order.size(), cfg.batchSize);
  const long total = std::max<long>(2, steps - 1);
  for (long s = 0; s < steps; ++s) {
    for (auto& p : fusionParams) p.tensor->zeroGrad();
    const std::size_t lo = static_cast<std::size_t>(s) * cfg.batchSize;
    const std::size_t hi = std::min(order.size(), lo + cfg.batchSize);
    const double bs = static_cast<double>(hi - lo);
    double loss = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& e = train.examples[static_cast<std::size_t>(order[k])];
      std::vector<float> x;
      for (std::size_t b = 0; b < e.slices.size(); ++b) {
        const auto& f = features[b].at(e.slices[b]);
        x.insert(x.end(), f.begin(), f.end());
      }
      FusionNet<float>::Trace trace;
      const double y = model.toTarget(model.fusion.forward(x, Mode::Train, &rng, &trace));
      const double err = y - e.target;
      loss += err * err / bs;
      model.fusion.backward(trace, static_cast<float>(2.0 * err * scale / bs));
    }
    checkLoss(loss);
    adamStep(fusionParams, state, oneCycleLr(std::min(s, total), total, cfg.eta1), cfg.adam);
    if (history) history->stage1BatchLoss.push_back(loss);
  }
}

double meanAbsoluteError(const MultiBranchRegressor<float>& model, const RegressionSet& data) {
  if (data.examples.empty()) throw InvalidArgument("cannot evaluate an empty set");
  double sum = 0.0;
  for (const auto& e : data.examples) sum += std::abs(static_cast<double>(model.forward(data.slicesOf(e))) - e.target);
  return sum / static_cast<double>(data.examples.size());
}

TrainHistory trainTwoStage(MultiBranchRegressor<float>& model, const RegressionSet& train, const RegressionSet& val,
                           const TrainConfig& cfg) {
  cfg.validate();
  checkSet(model, train, "training");
  checkSet(model, val, "validation");
  TrainHistory history;
  trainStageOne(model, train, cfg, &history);
  const double scale = model.config().targetScale;

  const int last = model.config().branch.blocks - 1;
  ActivationCache trainCache;
  ActivationCache valCache;
  fillCache(model, train, last, false, trainCache);
  fillCache(model, val, last, false, valCache);
  const auto trainable = paramsIn(model, {ParamGroup::BranchLastConv, ParamGroup::BranchDense, ParamGroup::Fusion});
  const int nb = model.config().branches;
  const std::size_t nf = static_cast<std::size_t>(model.config().branch.features);

  const auto features = [&](const ActivationCache& cache, const RegressionSet::Example& e,
                            std::vector<BranchNet<float>::Trace>& traces) {
    std::vector<float> x;
    traces.resize(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b) {
      model.branches[b].forwardFrom(last, cache[b].at(e.slices[b]), traces[b]);
      x.insert(x.end(), traces[b].features.begin(), traces[b].features.end());
    }
    return x;
  };
  const auto validationMae = [&]() {
    double sum = 0.0;
    std::vector<BranchNet<float>::Trace> traces;
    for (const auto& e : val.examples)
      sum += std::abs(static_cast<double>(model.toTarget(model.fusion.forward(features(valCache, e, traces), Mode::Eval,
                                                                                  nullptr))) -
                      e.target);
    return sum / static_cast<double>(val.examples.size());
  };

  std::mt19937_64 rng(deriveSeed(cfg.seed, 2));
  AdamState<float> state;
  std::vector<int> order(train.examples.size());
  std::iota(order.begin(), order.end(), 0);
  const long steps = stepsPerEpoch(order.size(), cfg.batchSize);
  const long total = std::max<long>(2, steps * cfg.maxEpochs - 1);
  long globalStep = 0;
  std::vector<std::vector<float>> best;
  for (const auto& p : trainable) best.push_back(p.tensor->value);
  history.bestValMae = validationMae();
  history.bestEpoch = 0;
  int sinceBest = 0;
  std::vector<BranchNet<float>::Trace> traces;
  for (int epoch = 1; epoch <= cfg.maxEpochs; ++epoch) {
    shuffleIndices(order, rng);
    double epochLoss = 0.0;
    for (long s = 0; s < steps; ++s) {
      for (auto& p : trainable) p.tensor->zeroGrad();
      const std::size_t lo = static_cast<std::size_t>(s) * cfg.batchSize;
      const std::size_t hi = std::min(order.size(), lo + cfg.batchSize);
      const double bs = static_cast<double>(hi - lo);
      double loss = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& e = train.examples[static_cast<std::size_t>(order[k])];
        const std::vector<float> x = features(trainCache, e, traces);
        FusionNet<float>::Trace ft;
        const double y = model.toTarget(model.fusion.forward(x, Mode::Train, &rng, &ft));
        const double err = y - e.target;
        loss += err * err / bs;
        const std::vector<float> dx = model.fusion.backward(ft, static_cast<float>(2.0 * err * scale / bs));
        for (int b = 0; b < nb; ++b) {
          const std::vector<float> df(dx.begin() + static_cast<std::ptrdiff_t>(b * nf),
                                      dx.begin() + static_cast<std::ptrdiff_t>((b + 1) * nf));
          model.branches[b].backward(traces[b], last, df, last);
        }
      }
      checkLoss(loss);
      adamStep(trainable, state, oneCycleLr(std::min(globalStep, total), total, cfg.eta2()), cfg.adam);
      ++globalStep;
      epochLoss += loss * bs;
    }
    history.stage2TrainLoss.push_back(epochLoss / static_cast<double>(order.size()));
    const double mae = validationMae();
    history.stage2ValMae.push_back(mae);
    if (mae < history.bestValMae) {
      history.bestValMae = mae;
      history.bestEpoch = epoch;
      sinceBest = 0;
      for (std::size_t i = 0; i < trainable.size(); ++i) best[i] = trainable[i].tensor->value;
    } else if (++sinceBest >= cfg.earlyStopPatience) {
      break;
    }
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i].tensor->value = best[i];
  return history;
}

double gradientCheck(MultiBranchRegressor<double>& model, const std::vector<std::vector<float>>& slices, double target,
                     double epsilon, int samples, std::uint64_t seed) {
  std::vector<const float*> ptrs;
  for (const auto& s : slices) ptrs.push_back(s.data());
  const auto loss = [&]() {
    const double y = model.forward(ptrs);
    return 0.5 * (y - target) * (y - target);
  };
  model.zeroGrad();
  const int nb = model.config().branches;
  const std::size_t nf = static_cast<std::size_t>(model.config().branch.features);
  std::vector<BranchNet<double>::Trace> traces(static_cast<std::size_t>(nb));
  std::vector<double> x;
  const std::size_t pixels = static_cast<std::size_t>(model.config().branch.inputSize) * model.config().branch.inputSize;
  if (static_cast<int>(slices.size()) != nb) throw InvalidArgument("gradient check needs one slice per branch");
  for (int b = 0; b < nb; ++b) {
    if (slices[b].size() != pixels) throw InvalidArgument("gradient check slice has the wrong size");
    model.branches[b].forwardFrom(0, std::vector<double>(slices[b].begin(), slices[b].end()), traces[b]);
    x.insert(x.end(), traces[b].features.begin(), traces[b].features.end());
  }
  FusionNet<double>::Trace ft;
  const double y = model.fusion.forward(x, Mode::Eval, nullptr, &ft);
  const std::vector<double> dx = model.fusion.backward(ft, (model.toTarget(y) - target) * model.config().targetScale);
  for (int b = 0; b < nb; ++b)
    model.branches[b].backward(traces[b], 0,
                               std::vector<double>(dx.begin() + static_cast<std::ptrdiff_t>(b * nf),
                                                   dx.begin() + static_cast<std::ptrdiff_t>((b + 1) * nf)),
                               0);

  auto params = model.params();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    auto& p = params[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(params.size()))];
    const std::size_t k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(p.tensor->size()));
    double& v = p.tensor->value[k];
    const double saved = v;
    v = saved + epsilon;
    const double up = loss();
    v = saved - epsilon;
    const double down = loss();
    v = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = p.tensor->grad[k];
    const double denom = std::max(std::abs(numeric) + std::abs(analytic), 1e-7);
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'M', 'C', 'E', 'A', 'G', 'E', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

void putU64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t getU64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(FormatError::Kind::MalformedHeader, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void saveCheckpoint(const std::filesystem::path& path, MultiBranchRegressor<float>& model, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format"] = "mceage-regressor";
  header["version"] = kCheckpointVersion;
  header["config"] = toJson(model.config());
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  for (auto& p : model.params()) header["tensors"].push_back({{"name", p.name}, {"shape", p.tensor->shape}});
  const int inputs = model.fusion.inputs();
  header["tensors"].push_back({{"name", "fusion.input_mean"}, {"shape", {inputs}}});
  header["tensors"].push_back({{"name", "fusion.input_scale"}, {"shape", {inputs}}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out.write(kMagic, 8);
  putU64(out, kCheckpointVersion);
  putU64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto put = [&](const std::vector<float>& values) {
    for (float f : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      out.write(b, 4);
    }
  };
  for (auto& p : model.params()) put(p.tensor->value);
  put(model.fusion.inputMean);
  put(model.fusion.inputScale);
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

MultiBranchRegressor<float> loadCheckpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + " is not a regressor checkpoint");
  if (getU64(in) != kCheckpointVersion) throw FormatError(FormatError::Kind::Version, "unsupported checkpoint version");
  const std::uint64_t len = getU64(in);
  if (len > (1u << 26)) throw FormatError(FormatError::Kind::MalformedHeader, "checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw FormatError(FormatError::Kind::MalformedHeader, "truncated checkpoint header");
  nlohmann::json header;
  RegressorConfig cfg;
  try {
    header = nlohmann::json::parse(text);
    cfg = regressorConfigFromJson(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  }
  MultiBranchRegressor<float> model(cfg);
  std::vector<float> mean(static_cast<std::size_t>(model.fusion.inputs()));
  std::vector<float> scale(mean.size());
  struct Slot {
    std::string name;
    std::vector<int> shape;
    std::vector<float>* values;
  };
  std::vector<Slot> slots;
  for (auto& p : model.params()) slots.push_back({p.name, p.tensor->shape, &p.tensor->value});
  slots.push_back({"fusion.input_mean", {model.fusion.inputs()}, &mean});
  slots.push_back({"fusion.input_scale", {model.fusion.inputs()}, &scale});
  try {
    const auto& tensors = header.at("tensors");
    if (tensors.size() != slots.size())
      throw FormatError(FormatError::Kind::SizeMismatch, "checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (tensors[i].at("name") != slots[i].name || tensors[i].at("shape").get<std::vector<int>>() != slots[i].shape)
        throw FormatError(FormatError::Kind::SizeMismatch, "checkpoint tensor " + slots[i].name + " does not match");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  }
  for (auto& slot : slots) {
    for (float& f : *slot.values) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(FormatError::Kind::SizeMismatch, "truncated checkpoint payload");
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&f, &bits, 4);
    }
  }
  try {
    model.fusion.setInputStandardization(std::move(mean), std::move(scale));
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatError::Kind::ValueRange, std::string("checkpoint: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError(FormatError::Kind::SizeMismatch, "trailing bytes in checkpoint");
  if (metadata) *metadata = header.value("metadata", nlohmann::json{});
  return model;
}

template struct Tensor<float>;
template struct Tensor<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class Dense<float>;
template class Dense<double>;
template class BranchNet<float>;
template class BranchNet<double>;
template class FusionNet<float>;
template class FusionNet<double>;
template class MultiBranchRegressor<float>;
template class MultiBranchRegressor<double>;
template MultiBranchRegressor<double> MultiBranchRegressor<float>::cast<double>() const;
template MultiBranchRegressor<float> MultiBranchRegressor<double>::cast<float>() const;
template void initialize(MultiBranchRegressor<float>&);
template void initialize(MultiBranchRegressor<double>&);
template void adamStep(const std::vector<ParamRef<float>>&, AdamState<float>&, double, const AdamConfig&);
template void adamStep(const std::vector<ParamRef<double>>&, AdamState<double>&, double, const AdamConfig&);

}  // namespace mceage
