#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "mceage/descriptors.hpp"
#include "mceage/forest.hpp"
#include "mceage/mesh.hpp"

namespace mceage {

enum class Laterality { Left, Right, Unknown };

std::string nameOf(Laterality laterality);
Laterality lateralityFromString(std::string_view name);
Laterality opposite(Laterality laterality);

struct AnatomicalConfig {
  double epsilon = 10.0;  // mm
  double probThreshold = 0.5;
  double tieBand = 0.5;  // mm
  double endBand = 1.5;  // mm; vertices this close to an X extreme form the end point

  void validate() const;
};

// Average position of the vertices near the X_min and X_max extremes.
struct EndPoints {
  Vec3 atXmin;
  Vec3 atXmax;
};
EndPoints endPoints(const TriangleMesh& mesh, double band = 1.5);

// The sternal end sits lower: a lower end at X_max marks a right clavicle,
// a lower end at X_min a left one.
Laterality lateralityOf(const TriangleMesh& mesh, const AnatomicalConfig& cfg = {});

// Medial point: X_max end for a right clavicle, X_min end for a left one.
Vec3 medialPoint(const TriangleMesh& mesh, Laterality laterality, const AnatomicalConfig& cfg = {});

bool checkAnatomicalCompatibility(const TriangleMesh& a, const TriangleMesh& b, const AnatomicalConfig& cfg = {});

struct DetectionCandidate {
  int componentId = -1;
  double probability = 0.0;
  Laterality laterality = Laterality::Unknown;
};

enum class PairRule { FastPath, PairX1X2, PairX1X3, SingleX1, Empty };
std::string nameOf(PairRule rule);

struct DetectionResult {
  std::optional<int> right;
  std::optional<int> left;
  // A lone X1 whose laterality could not be decided.
  std::optional<int> unassigned;
  PairRule rule = PairRule::Empty;

  std::vector<int> selected() const;
  friend bool operator==(const DetectionResult&, const DetectionResult&) = default;
};

// Decision over the top three candidates (sorted by descending probability,
// missing ones treated as probability 0). compatible(i, j) receives positions
// in the candidate list. The fast rule selects (X1, X2) only when that pair
// is also compatible; otherwise the general procedure runs.
DetectionResult pairCandidates(const std::vector<DetectionCandidate>& top,
                               const std::function<bool(int, int)>& compatible, const AnatomicalConfig& cfg = {});
// meshes are indexed by componentId.
DetectionResult pairCandidates(const std::vector<DetectionCandidate>& top, const std::vector<TriangleMesh>& meshes,
                               const AnatomicalConfig& cfg = {});

// Trained detector: histogram ranges plus the forest.
struct DetectorModel {
  DescriptorRanges ranges;
  ForestModel forest;
  int shapeSamples = kDefaultShapeSamples;
};

nlohmann::json toJson(const DetectorModel& model);
DetectorModel detectorFromJson(const nlohmann::json& j);
void saveDetector(const std::filesystem::path& path, const DetectorModel& model);
DetectorModel loadDetector(const std::filesystem::path& path);

// Histogram ranges covering every training mesh.
DescriptorRanges rangesFromMeshes(const std::vector<TriangleMesh>& meshes);
// Feature vector of component c drawn with seed deriveSeed(seed, c).
std::vector<FeatureVector> componentFeatures(const std::vector<TriangleMesh>& components, const DescriptorRanges& ranges,
                                             std::uint64_t seed, int shapeSamples = kDefaultShapeSamples);
// Labels: 1 clavicle, 0 anything else.
DetectorModel trainDetector(const std::vector<FeatureVector>& rows, const std::vector<int>& labels,
                            const DescriptorRanges& ranges, std::uint64_t seed, const ForestConfig& forest = {},
                            int shapeSamples = kDefaultShapeSamples);

struct ComponentScore {
  int componentId = -1;
  double probability = 0.0;
  Laterality laterality = Laterality::Unknown;
};

struct SceneDetection {
  std::vector<ComponentScore> scores;  // one per component, in component order
  DetectionResult result;
};

// Scores every component and applies the pairing procedure to the top three.
SceneDetection detectClavicles(const std::vector<TriangleMesh>& components, const std::vector<FeatureVector>& features,
                               const DetectorModel& model, const AnatomicalConfig& cfg = {});

// Distance-to-average baseline.
struct AverageClavicle {
  FeatureVector mean;
  DescriptorRanges ranges;
  std::array<double, kGeometricScalars> scalarMean{};
  std::array<double, kGeometricScalars> scalarStd{};
};

// scalarMean/scalarStd standardize the geometric scalars and come from all
// training components, clavicle or not.
AverageClavicle buildAverageClavicle(const std::vector<FeatureVector>& clavicles,
                                     const std::vector<FeatureVector>& allTraining, const DescriptorRanges& ranges);
// Sum of per-distribution W1 plus the Euclidean distance of standardized scalars.
double distanceToAverage(const FeatureVector& fv, const AverageClavicle& avg);
// Indices of the two closest components, nearer first.
std::array<int, 2> baselineDistanceDetect(const std::vector<FeatureVector>& components, const AverageClavicle& avg);

}  // namespace mceage
