#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mceage {

// d_beta: the k-th smallest residual with k = ceil(beta * n); 0 when k = 0.
double calibrate(const std::vector<double>& residuals, double beta);

// Sorted absolute validation residuals.
class ConformalCalibrator {
 public:
  ConformalCalibrator() = default;
  explicit ConformalCalibrator(std::vector<double> residuals, nlohmann::json metadata = nlohmann::json::object());

  static ConformalCalibrator fromPredictions(const std::vector<double>& predictions, const std::vector<double>& truths,
                                             nlohmann::json metadata = nlohmann::json::object());

  double d(double beta) const;
  std::size_t size() const { return residuals_.size(); }
  const std::vector<double>& residuals() const { return residuals_; }
  const nlohmann::json& metadata() const { return metadata_; }

  bool operator==(const ConformalCalibrator& o) const {
    return residuals_ == o.residuals_ && metadata_ == o.metadata_;
  }

 private:
  std::vector<double> residuals_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

nlohmann::json toJson(const ConformalCalibrator& c);
ConformalCalibrator calibratorFromJson(const nlohmann::json& j);
void saveCalibrator(const std::filesystem::path& path, const ConformalCalibrator& c);
ConformalCalibrator loadCalibrator(const std::filesystem::path& path);

struct AgeInterval {
  double lo = 0.0;
  double hi = 0.0;
};

enum class AgeDecision { Adult, NotConfirmedAdult };
std::string nameOf(AgeDecision d);

constexpr double kAdultAge = 18.0;

AgeInterval interval(double yhat, double d);
// Adult iff the interval's lower bound reaches the threshold.
AgeDecision minimumAgeDecision(const AgeInterval& iv, double threshold = kAdultAge);

}  // namespace mceage
