#include "mceage/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mceage/error.hpp"

namespace mceage {

namespace {

// ceil(beta * n), tolerant of products such as 0.6 * 5 landing a hair above 3.
std::size_t rankFor(double beta, std::size_t n) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("beta must lie in [0, 1)");
  const double x = beta * static_cast<double>(n);
  const double r = std::round(x);
  const double k = std::abs(x - r) < 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
  return static_cast<std::size_t>(k);
}

void checkResiduals(const std::vector<double>& r) {
  if (r.empty()) throw InvalidArgument("no residuals to calibrate on");
  for (double v : r)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("residuals must be finite and non-negative");
}

}  // namespace

double calibrate(const std::vector<double>& residuals, double beta) {
  checkResiduals(residuals);
  const std::size_t k = rankFor(beta, residuals.size());
  if (k == 0) return 0.0;
  std::vector<double> sorted = residuals;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  return sorted[k - 1];
}

ConformalCalibrator::ConformalCalibrator(std::vector<double> residuals, nlohmann::json metadata)
    : residuals_(std::move(residuals)), metadata_(std::move(metadata)) {
  checkResiduals(residuals_);
  std::sort(residuals_.begin(), residuals_.end());
}

ConformalCalibrator ConformalCalibrator::fromPredictions(const std::vector<double>& predictions,
                                                         const std::vector<double>& truths, nlohmann::json metadata) {
  if (predictions.size() != truths.size()) throw InvalidArgument("predictions and truths differ in length");
  std::vector<double> r(predictions.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::abs(predictions[i] - truths[i]);
  return ConformalCalibrator(std::move(r), std::move(metadata));
}

double ConformalCalibrator::d(double beta) const {
  if (residuals_.empty()) throw InvalidArgument("calibrator holds no residuals");
  const std::size_t k = rankFor(beta, residuals_.size());
  return k == 0 ? 0.0 : residuals_[k - 1];
}

nlohmann::json toJson(const ConformalCalibrator& c) {
  return {{"format", "mceage-calibrator"}, {"version", 1}, {"n", c.size()},
          {"residuals", c.residuals()},    {"metadata", c.metadata()}};
}

ConformalCalibrator calibratorFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format") != "mceage-calibrator") throw FormatError(FormatError::Kind::MalformedHeader, "not a calibrator");
    if (j.at("version") != 1) throw FormatError(FormatError::Kind::Version, "unsupported calibrator version");
    auto r = j.at("residuals").get<std::vector<double>>();
    if (r.size() != j.at("n").get<std::size_t>())
      throw FormatError(FormatError::Kind::SizeMismatch, "calibrator residual count mismatch");
    if (!std::is_sorted(r.begin(), r.end())) throw FormatError(FormatError::Kind::ValueRange, "residuals not sorted");
    return ConformalCalibrator(std::move(r), j.value("metadata", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, std::string("calibrator: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatError::Kind::ValueRange, std::string("calibrator: ") + e.what());
  }
}

void saveCalibrator(const std::filesystem::path& path, const ConformalCalibrator& c) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << toJson(c).dump(2) << '\n';
  if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

ConformalCalibrator loadCalibrator(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::MalformedHeader, path.string() + ": " + e.what());
  }
  return calibratorFromJson(j);
}

std::string nameOf(AgeDecision d) { return d == AgeDecision::Adult ? "adult" : "not-confirmed-adult"; }

AgeInterval interval(double yhat, double d) {
  if (!(d >= 0.0)) throw InvalidArgument("interval half-width must be non-negative");
  return {yhat - d, yhat + d};
}

AgeDecision minimumAgeDecision(const AgeInterval& iv, double threshold) {
  return iv.lo >= threshold ? AgeDecision::Adult : AgeDecision::NotConfirmedAdult;
}

}  // namespace mceage
