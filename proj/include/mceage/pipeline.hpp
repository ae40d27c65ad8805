#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mceage/attribution.hpp"
#include "mceage/conformal.hpp"
#include "mceage/nnet.hpp"
#include "mceage/roi.hpp"

namespace mceage {

struct SliceWindow {
  int m = 2;
  int a = 0;
  int b = 10;
  void validate() const;
  bool operator==(const SliceWindow&) const = default;
};

struct AugmentationConfig {
  std::vector<int> centerOffsets{-2, 2, -4, 4};
  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

// Nearest integer, halves rounded up.
int roundHalfUp(double x);

// m equispaced positions over [c - a, c + b], rounded, clamped to the stack,
// sorted and deduplicated; m = 1 gives round(c).
std::vector<int> buildWindow(double c, const SliceWindow& w, int stackSize = kMceSamples);

// Base window first, then one per offset; windows equal after clamping are dropped.
std::vector<std::vector<int>> augmentWindows(double c, const SliceWindow& w, const AugmentationConfig& aug,
                                             int stackSize = kMceSamples);

inline const std::vector<double> kStage1Positions{5, 15, 25, 35, 45};

// One clavicle's MCE and its subject's age.
struct MceSample {
  std::string subject;
  MceVolume mce;
  double age = 0.0;
};

// Window centre per view, indexed by View; NaN where unused.
using ViewCenters = std::array<double, 3>;
ViewCenters noCenters();

struct PipelineConfig {
  std::vector<View> views{View::Axial, View::Coronal};
  SliceWindow window;
  AugmentationConfig augmentation;
  bool augment = true;
  // When set, every subject uses this centre instead of IG selection.
  std::optional<double> fixedCenter;
  std::vector<double> stage1Positions = kStage1Positions;
  int igSteps = kDefaultIgSteps;
  BranchConfig branch;
  FusionConfig fusion;
  TrainConfig train;

  void validate() const;
  // Final model configuration: window size m slices for each view.
  RegressorConfig finalRegressorConfig() const;
  RegressorConfig stage1RegressorConfig(View view) const;
};

// Phantom benchmark settings: light dropout and eta1 = 3e-3 for a few hundred
// training clavicles.
PipelineConfig phantomPipelineConfig();

nlohmann::json toJson(const PipelineConfig& cfg);
PipelineConfig pipelineConfigFromJson(const nlohmann::json& j);

// Stage-1 examples: the slices at `positions` of each sample's stack.
RegressionSet positionSet(const std::vector<MceSample>& samples, View view, const std::vector<double>& positions);

// Trains a slice-importance regressor on the five stage-1 positions.
MultiBranchRegressor<float> trainImportanceModel(const std::vector<MceSample>& train, View view,
                                                 const PipelineConfig& cfg);

// c for one MCE from an importance model.
double selectCenter(const MultiBranchRegressor<double>& importance, const MceVolume& mce, View view,
                    const std::vector<double>& positions, int igSteps = kDefaultIgSteps,
                    AttributionResult* detail = nullptr);

struct Stage1Result {
  MultiBranchRegressor<float> model;
  std::vector<double> centers;  // per training sample
};

Stage1Result stage1SelectCenters(const std::vector<MceSample>& train, View view, const PipelineConfig& cfg);

// Slice indices per view, concatenated in cfg.views order.
std::vector<std::vector<int>> sampleWindows(const ViewCenters& centers, const PipelineConfig& cfg, bool augmented);

// One example per window combination (all offsets shared across views).
RegressionSet windowSet(const std::vector<MceSample>& samples, const std::vector<ViewCenters>& centers,
                        const PipelineConfig& cfg, bool augmented);

// Regressor plus the importance models that choose its windows at prediction time.
struct AgeModel {
  PipelineConfig config;
  std::vector<MultiBranchRegressor<float>> importance;  // one per view unless fixedCenter
  MultiBranchRegressor<float> regressor{RegressorConfig{}};
  TrainHistory history;

  ViewCenters centersFor(const MceVolume& mce) const;
};

struct FinalTraining {
  MultiBranchRegressor<float> model;
  TrainHistory history;
  std::size_t trainExamples = 0;
  std::size_t valExamples = 0;
};

FinalTraining trainFinalModel(const std::vector<MceSample>& train, const std::vector<MceSample>& val,
                              const std::vector<ViewCenters>& trainCenters, const std::vector<ViewCenters>& valCenters,
                              const PipelineConfig& cfg);

// Stage 1 per view (unless a fixed centre is configured), then the final model.
AgeModel trainAgeModel(const std::vector<MceSample>& train, const std::vector<MceSample>& val,
                       const PipelineConfig& cfg);

struct SidePrediction {
  double age = 0.0;
  ViewCenters centers = noCenters();
  std::vector<std::vector<int>> slices;  // per view
};

SidePrediction predictSide(const AgeModel& model, const MceVolume& mce);

struct SubjectEstimate {
  std::optional<double> rightAge;
  std::optional<double> leftAge;
  double fusedAge = 0.0;
  std::optional<AgeInterval> interval;
  std::optional<AgeDecision> decision;
};

// Mean of the sides present.
SubjectEstimate fuseSides(std::optional<double> right, std::optional<double> left);

SubjectEstimate predictSubject(const AgeModel& model, const std::optional<MceVolume>& right,
                               const std::optional<MceVolume>& left, std::array<SidePrediction, 2>* sides = nullptr);

// Adds the interval and decision at coverage beta.
void applyCalibration(SubjectEstimate& est, const ConformalCalibrator& calibrator, double beta,
                      double threshold = kAdultAge);

struct ReportOptions {
  std::vector<double> betas{0.6, 0.8, 0.9, 0.95, 0.99};
  double threshold = kAdultAge;
};

nlohmann::json predictionReport(const std::string& subject, const SubjectEstimate& est,
                                const std::array<std::optional<SidePrediction>, 2>& sides,
                                const ConformalCalibrator* calibrator, const ReportOptions& opt,
                                const std::vector<std::string>& heatmaps = {});

void saveAgeModel(const std::filesystem::path& dir, AgeModel& model, const nlohmann::json& metadata = {});
AgeModel loadAgeModel(const std::filesystem::path& dir, nlohmann::json* metadata = nullptr);

}  // namespace mceage
