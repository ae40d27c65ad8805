#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mceage/conformal.hpp"

namespace mceage {

struct MaeR2 {
  double mae = 0.0;
  double r2 = 0.0;
};

MaeR2 maeAndR2(const std::vector<double>& preds, const std::vector<double>& truths);
double meanAbsoluteError(const std::vector<double>& preds, const std::vector<double>& truths);
std::vector<double> absoluteErrors(const std::vector<double>& preds, const std::vector<double>& truths);

// Fraction of subjects with |pred - truth| <= d.
double empiricalCoverage(const std::vector<double>& preds, const std::vector<double>& truths, double d);

// Positive class: true age >= threshold. Rates with an empty denominator are
// left empty and named in `undefined`.
struct CoverageRow {
  double beta = 0.0;
  double d = 0.0;
  std::optional<double> ppv;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;
  std::vector<std::string> undefined;

  bool operator==(const CoverageRow&) const = default;
};

std::vector<CoverageRow> coverageTable(const std::vector<double>& fusedAges, const std::vector<double>& truths,
                                       const ConformalCalibrator& calibrator, const std::vector<double>& betas,
                                       double threshold = kAdultAge);

void writeCoverageCsv(const std::filesystem::path& path, const std::vector<CoverageRow>& rows);
std::vector<CoverageRow> readCoverageCsv(const std::filesystem::path& path);
nlohmann::json toJson(const CoverageRow& row);
CoverageRow coverageRowFromJson(const nlohmann::json& j);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const ConfidenceInterval&) const = default;
};

// Linear-interpolation quantile of sorted data (p in [0, 1]).
double quantileSorted(const std::vector<double>& sorted, double p);

// Percentile bootstrap 95% interval of the mean of absErrors.
ConfidenceInterval bootstrapCiMae(const std::vector<double>& absErrors, int resamples = 10000, std::uint64_t seed = 0);
// Percentile bootstrap 95% interval of the mean paired difference a - b.
ConfidenceInterval bootstrapCiMeanDifference(const std::vector<double>& a, const std::vector<double>& b,
                                             int resamples = 10000, std::uint64_t seed = 0);

// Two-sided sign-flip test on the mean paired difference, add-one smoothed.
double pairedPermutationTest(const std::vector<double>& errA, const std::vector<double>& errB,
                             int permutations = 10000, std::uint64_t seed = 0);

double cohenDPaired(const std::vector<double>& errA, const std::vector<double>& errB);
// Median of the Walsh averages of the paired differences.
double hodgesLehmann(const std::vector<double>& errA, const std::vector<double>& errB);
// Plain median of the paired differences.
double medianDifference(const std::vector<double>& errA, const std::vector<double>& errB);

struct PairedComparison {
  double meanDiff = 0.0;
  ConfidenceInterval bootCi95;
  double pValue = 1.0;
  std::optional<double> cohenD;
  double hodgesLehmann = 0.0;
  double medianDifference = 0.0;
  int n = 0;
};

PairedComparison comparePaired(const std::vector<double>& errA, const std::vector<double>& errB,
                               int resamples = 10000, std::uint64_t seed = 0);
nlohmann::json toJson(const PairedComparison& c);

struct AgeBand {
  std::string label;
  double lo;
  double hi;
  bool loInclusive;
  bool hiInclusive;
  bool contains(double age) const;
};

const std::vector<AgeBand>& reportAgeBands();

struct BandError {
  std::string band;
  int n = 0;
  std::optional<double> mae;
  bool operator==(const BandError&) const = default;
};

struct EvalReport {
  double mae = 0.0;
  std::optional<double> r2;
  ConfidenceInterval maeCi95;
  std::vector<BandError> perAgeBand;
  int n = 0;
  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(const std::vector<double>& preds, const std::vector<double>& truths, int resamples = 10000,
                    std::uint64_t seed = 0);
nlohmann::json toJson(const EvalReport& r);
EvalReport evalReportFromJson(const nlohmann::json& j);

}  // namespace mceage
