#pragma once

#include <string>

#include "cli_support.hpp"

namespace mceage::cli {

struct PhantomGenOptions {
  fs::path out;
  int n = 200;
  double ageLo = 14.0;
  double ageHi = 26.0;
};

struct DetectTrainOptions {
  fs::path data;
  fs::path out;
  fs::path labels;  // optional annotator file: "<subject> <component id>..." per line
};

struct DetectOptions {
  fs::path data;
  fs::path detector;
  fs::path out;
  std::string split;  // empty: every subject
};

struct ExtractOptions {
  fs::path data;
  fs::path detections;  // empty with truth = true
  fs::path out;
  bool truth = false;
};

struct SelectOptions {
  fs::path data;
  fs::path mce;
  fs::path out;
};

struct TrainAgeOptions {
  fs::path data;
  fs::path mce;
  fs::path slices;
  fs::path out;
};

struct CalibrateOptions {
  fs::path data;
  fs::path mce;
  fs::path model;
  fs::path out;
  std::string split = "val";
};

struct PredictOptions {
  fs::path data;
  fs::path mce;
  fs::path model;
  fs::path calibrator;
  fs::path out;
  std::string split = "test";
  bool heatmaps = false;
};

struct EvaluateOptions {
  fs::path data;
  fs::path predictions;
  fs::path calibrator;
  fs::path out;
};

struct CompareOptions {
  fs::path data;
  fs::path a;
  fs::path b;
  fs::path out;
};

void runPhantomGen(const PhantomGenOptions& o, const RunConfig& cfg);
void runDetectTrain(const DetectTrainOptions& o, const RunConfig& cfg);
void runDetect(const DetectOptions& o, const RunConfig& cfg);
void runExtractMce(const ExtractOptions& o, const RunConfig& cfg);
void runSelectSlices(const SelectOptions& o, const RunConfig& cfg);
void runTrainAge(const TrainAgeOptions& o, const RunConfig& cfg);
void runCalibrate(const CalibrateOptions& o, const RunConfig& cfg);
void runPredict(const PredictOptions& o, const RunConfig& cfg);
void runEvaluate(const EvaluateOptions& o, const RunConfig& cfg);
void runCompare(const CompareOptions& o, const RunConfig& cfg);

}  // namespace mceage::cli
