#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mceage/mesh.hpp"
#include "mceage/random.hpp"

namespace mceage {

enum class ShapeKind { A3, D1, D2, D3 };

inline constexpr int kShapeBins = 64;
inline constexpr int kGeometricScalars = 6;
inline constexpr int kFeatureLength = 4 * kShapeBins + kGeometricScalars;
inline constexpr int kDefaultShapeSamples = 100000;

std::string nameOf(ShapeKind kind);

struct ShapeDistribution {
  ShapeKind kind = ShapeKind::D2;
  std::vector<double> bins;  // kShapeBins entries summing to 1
  double lo = 0.0;
  double hi = 1.0;
  int nSamples = 0;
  std::uint64_t seed = 0;

  double binWidth() const { return (hi - lo) / static_cast<double>(bins.size()); }
};

struct GeometricFeatures {
  double area = 0.0;
  double volume = 0.0;
  double normalizedShapeIndex = 0.0;
  double areaToVolume = 0.0;
  double lengthToWidth = 0.0;
  double sphericity = 0.0;
};

// Upper histogram bounds for D1, D2, D3 in mm; A3 always spans [0, pi].
struct DescriptorRanges {
  double d1 = 1.0;
  double d2 = 1.0;
  double d3 = 1.0;

  double upper(ShapeKind kind) const;
  friend bool operator==(const DescriptorRanges&, const DescriptorRanges&) = default;
};

// A3 ++ D1 ++ D2 ++ D3 bins, then area, volume, normalized shape index,
// area-to-volume, length-to-width, sphericity.
using FeatureVector = std::vector<double>;

// Area-weighted uniform points on the surface.
class SurfaceSampler {
 public:
  explicit SurfaceSampler(const TriangleMesh& mesh);
  template <class Rng>
  Vec3 sample(Rng& rng) const {
    const double pick = uniform01(rng);
    const double u = uniform01(rng);
    return pointAt(pick, u, uniform01(rng));
  }

 private:
  Vec3 pointAt(double pick, double u, double v) const;

  const TriangleMesh& mesh_;
  std::vector<double> cumulative_;
};

// Angle at b in the triangle (a, b, c); 0 or pi for collinear points and 0
// when either arm has zero length.
double angleAt(const Vec3& a, const Vec3& b, const Vec3& c);

// Raw measurements, exposed for moment checks.
std::vector<double> sampleShapeValues(const TriangleMesh& mesh, ShapeKind kind, int nSamples, std::uint64_t seed);

// Histogram over [0, upper]; values beyond upper land in the last bin.
ShapeDistribution sampleShapeDistribution(const TriangleMesh& mesh, ShapeKind kind, double upper,
                                          int nSamples = kDefaultShapeSamples, std::uint64_t seed = 0);

// Bounds every D1/D2/D3 value can reach on this mesh, from the largest vertex
// distance R to the area centroid: R, 2R and sqrt(3*sqrt(3)/4)*R.
DescriptorRanges analyticRanges(const TriangleMesh& mesh);
// Componentwise maximum with 10% headroom.
DescriptorRanges trainingRanges(const std::vector<DescriptorRanges>& perMesh);

GeometricFeatures geometricFeatures(const TriangleMesh& mesh);

FeatureVector featureVector(const TriangleMesh& mesh, const DescriptorRanges& ranges, std::uint64_t seed,
                            int nSamples = kDefaultShapeSamples);

// View of one histogram inside a feature vector.
ShapeDistribution distributionOf(const FeatureVector& fv, ShapeKind kind, const DescriptorRanges& ranges);
GeometricFeatures geometricOf(const FeatureVector& fv);

double wassersteinDistance(const ShapeDistribution& a, const ShapeDistribution& b);

struct LabeledFeatures {
  std::vector<FeatureVector> rows;
  std::vector<std::string> componentIds;
  std::vector<int> labels;
};

void writeFeatureCsv(const std::filesystem::path& path, const LabeledFeatures& data);
LabeledFeatures readFeatureCsv(const std::filesystem::path& path);

}  // namespace mceage
