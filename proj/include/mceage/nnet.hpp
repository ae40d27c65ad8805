#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mceage {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zeroGrad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

enum class Mode { Train, Eval };

// Trainable groups: the branch conv blocks except the last, the last conv
// block, the branch terminal dense layer, and the fusion network.
enum class ParamGroup { BranchEarlyConv, BranchLastConv, BranchDense, Fusion };

template <class T>
struct ParamRef {
  std::string name;
  ParamGroup group;
  Tensor<T>* tensor;
};

// 3x3 convolution, stride 2, zero padding 1.
template <class T>
class Conv2d {
 public:
  Conv2d(int inChannels, int outChannels);
  int outSize(int in) const { return (in - 1) / 2 + 1; }
  // x: (cin, h, w) -> y: (cout, outSize(h), outSize(w))
  void forward(const T* x, int h, int w, T* y) const;
  // Accumulates parameter gradients; writes dx when non-null.
  void backward(const T* x, int h, int w, const T* dy, T* dx);

  int inChannels;
  int outChannels;
  Tensor<T> weight;  // (cout, cin, 3, 3)
  Tensor<T> bias;
};

template <class T>
class Dense {
 public:
  Dense(int in, int out);
  void forward(const T* x, T* y) const;
  void backward(const T* x, const T* dy, T* dx);

  int in;
  int out;
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;
};

struct BranchConfig {
  int blocks = 4;
  int baseChannels = 8;  // doubles every block
  int features = 64;
  int inputSize = 50;
};

struct FusionConfig {
  int depth = 2;
  double hiddenDropout = 0.25;
  double outputDropout = 0.5;
};

struct RegressorConfig {
  int branches = 4;
  BranchConfig branch;
  FusionConfig fusion;
  std::uint64_t seed = 0;
  // Prediction = targetMean + targetScale * fusion output.
  double targetMean = 0.0;
  double targetScale = 1.0;
};

nlohmann::json toJson(const RegressorConfig& cfg);
RegressorConfig regressorConfigFromJson(const nlohmann::json& j);

// Conv blocks (conv, ReLU), global average pooling, terminal dense + ReLU.
template <class T>
class BranchNet {
 public:
  explicit BranchNet(const BranchConfig& cfg);

  // Activations of every stage; acts[0] is the input, acts[b+1] the output
  // of conv block b, then pooled and features.
  struct Trace {
    std::vector<std::vector<T>> acts;
    std::vector<T> pooled;
    std::vector<T> features;
  };

  std::vector<T> forward(const float* pixels) const;
  // Runs from the output of block `from - 1` (from = 0 takes raw pixels).
  void forwardFrom(int from, const std::vector<T>& input, Trace& trace) const;
  // Back-propagates feature gradients, accumulating parameter gradients for
  // blocks >= stopBlock. With stopBlock = from, dInput receives the gradient
  // with respect to the traced input when non-null.
  void backward(const Trace& trace, int from, const std::vector<T>& dFeatures, int stopBlock,
                std::vector<T>* dInput = nullptr);

  int sizeAfter(int block) const;  // spatial size of acts[block]
  int channelsAfter(int block) const;
  const BranchConfig& config() const { return cfg_; }

  std::vector<Conv2d<T>> convs;
  Dense<T> dense;

 private:
  BranchConfig cfg_;
};

// Dense blocks (dense, dropout, ReLU), then dropout and the output dense.
template <class T>
class FusionNet {
 public:
  FusionNet(int inputs, int features, const FusionConfig& cfg);

  struct Trace {
    std::vector<std::vector<T>> pre;  // dense outputs
    std::vector<std::vector<T>> masks;  // dropout multipliers per hidden block
    std::vector<std::vector<T>> acts;  // block inputs; acts[0] is the fusion input
    std::vector<T> outMask;
    std::vector<T> outInput;
    T output = T(0);
  };

  T forward(const std::vector<T>& x, Mode mode, std::mt19937_64* rng, Trace* trace = nullptr) const;
  // dOut -> parameter gradients; returns d output / d input.
  std::vector<T> backward(const Trace& trace, T dOut, bool accumulateParams = true);
  // d output / d input without touching parameter gradients.
  std::vector<T> inputBackward(const Trace& trace, T dOut) const;
  // Output and its gradient with respect to the input in evaluation mode.
  T inputGradient(const std::vector<T>& x, std::vector<T>& grad) const;

  int inputs() const { return inputs_; }
  const FusionConfig& config() const { return cfg_; }

  // Fixed per-feature (x - mean) / scale applied to the input; not trained.
  void setInputStandardization(std::vector<T> mean, std::vector<T> scale);
  std::vector<T> inputMean;
  std::vector<T> inputScale;

  std::vector<Dense<T>> hidden;
  Dense<T> out;

 private:
  int inputs_;
  FusionConfig cfg_;
};

template <class T>
class MultiBranchRegressor {
 public:
  explicit MultiBranchRegressor(const RegressorConfig& cfg);

  // One slice per branch, each inputSize^2 pixels.
  T forward(const std::vector<const float*>& slices, Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr) const;
  std::vector<T> branchFeatures(const std::vector<const float*>& slices) const;

  std::vector<ParamRef<T>> params();
  void zeroGrad();
  std::size_t parameterCount();
  const RegressorConfig& config() const { return cfg_; }
  void setTargetScaling(double mean, double scale);
  T toTarget(T raw) const { return static_cast<T>(cfg_.targetMean + cfg_.targetScale * raw); }

  template <class U>
  MultiBranchRegressor<U> cast() const;

  std::vector<BranchNet<T>> branches;
  FusionNet<T> fusion;

 private:
  RegressorConfig cfg_;
};

// He-uniform weights, zero biases; deterministic given cfg.seed.
template <class T>
void initialize(MultiBranchRegressor<T>& model);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One Adam update with bias correction over the given parameters' gradients.
template <class T>
void adamStep(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr, const AdamConfig& cfg = {});

// eta/25 at step 0, eta at the peak (30% of the steps), eta/1000 at totalSteps.
double oneCycleLr(long step, long totalSteps, double eta);
long oneCyclePeak(long totalSteps);

// Pooled slices and examples indexing into them, one slice per branch.
struct RegressionSet {
  std::vector<std::vector<float>> pool;
  struct Example {
    std::vector<int> slices;
    double target = 0.0;
  };
  std::vector<Example> examples;

  std::vector<const float*> slicesOf(const Example& e) const;
};

struct TrainConfig {
  double eta1 = 1e-3;
  AdamConfig adam;
  int batchSize = 4;
  int maxEpochs = 40;
  int earlyStopPatience = 10;
  std::uint64_t seed = 0;
  // Sets the model's target mean and scale from the training targets before
  // stage 1.
  bool standardizeTargets = true;
  // Sets the fusion input standardization from the training features before
  // stage 1.
  bool standardizeFeatures = true;

  double eta2() const { return eta1 / 100.0; }
  void validate() const;
};

nlohmann::json toJson(const TrainConfig& cfg);
TrainConfig trainConfigFromJson(const nlohmann::json& j);

struct TrainHistory {
  std::vector<double> stage1BatchLoss;
  std::vector<double> stage2TrainLoss;
  std::vector<double> stage2ValMae;
  int bestEpoch = -1;
  double bestValMae = 0.0;
};

// Stage 1: fusion only, one epoch at eta1. Stage 2: last conv block, terminal
// dense and fusion at eta2 with early stopping; best validation weights kept.
TrainHistory trainTwoStage(MultiBranchRegressor<float>& model, const RegressionSet& train, const RegressionSet& val,
                           const TrainConfig& cfg);

// Stage 1 alone (used for slice-importance models).
void trainStageOne(MultiBranchRegressor<float>& model, const RegressionSet& train, const TrainConfig& cfg,
                   TrainHistory* history = nullptr);

double meanAbsoluteError(const MultiBranchRegressor<float>& model, const RegressionSet& data);

// Central differences of the squared-error loss against reverse-mode
// gradients on a random sample of parameters.
double gradientCheck(MultiBranchRegressor<double>& model, const std::vector<std::vector<float>>& slices, double target,
                     double epsilon = 1e-4, int samples = 200, std::uint64_t seed = 0);

void saveCheckpoint(const std::filesystem::path& path, MultiBranchRegressor<float>& model,
                    const nlohmann::json& metadata = {});
MultiBranchRegressor<float> loadCheckpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace mceage
